#pragma once

// Autoregressive quantile forecasting: the CaViaR-SAV recursion used to seed
// the warmup window, and the two-step expanding procedure that feeds lagged
// quantile predictions back into the forest as an extra covariate.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qrfx/forest.hpp"
#include "qrfx/midas.hpp"

namespace qrfx {

// Symmetric-absolute-value conditional quantile recursion:
//   Q_1 = q0,  Q_t = beta0 + beta1 * Q_{t-1} + beta2 * |Y_{t-1}|  (t >= 2)
struct CaviarParams {
    double beta0 = 0.0;
    double beta1 = 0.0;
    double beta2 = 0.0;
    double tau = 0.05;
    double q0 = 0.0;
};

struct CaviarFit {
    CaviarParams params;
    std::vector<double> forecasts; // recursive in-sample path, one per return
    double avg_check_loss = 0.0;
};

// Evaluates the recursion over the full return series (length preserved).
std::vector<double> caviar_sav_path(const CaviarParams& params,
                                    std::span<const double> returns);

// Fits (beta0, beta1, beta2) by minimizing the average check loss of the
// recursive path, via Nelder-Mead from a deterministic start at the empirical
// quantile solution (q*, 0, 0) plus `restarts` random starts drawn from
// beta0 in +-2|q*|, beta1 in [0, 0.95], beta2 in [-1, 0] for tau <= 0.5
// (mirrored to [0, 1] for the upper tail). q0 is the empirical tau-quantile
// of the first min(n, 50) returns. Requires at least 30 observations.
CaviarFit fit_caviar_sav(std::span<const double> returns, double tau, int restarts = 10,
                         std::uint64_t seed = 1);

struct DynamicConfig {
    // Warmup length V: rows 0..V-2 are covered by the CaViaR path and the
    // first forest trains on them. 0 resolves to max(min_warmup, ceil(0.25 R)).
    int warmup = 0;
    int min_warmup = 50;
    // Retrain the forest every `refit_every` appended rows (1 = always).
    int refit_every = 1;
    int caviar_restarts = 10;
    TrainConfig forest;
    // Diagnostic hook: freeze the lag-quant column to the given values
    // (length R) instead of feeding predictions back.
    std::optional<std::vector<double>> lag_quant_override;
};

struct DynamicFitResult {
    std::vector<double> predictions; // one per table row; row r predicted
                                     // before row r entered any training set
    std::vector<double> lag_quant;   // training-side lag-quant column: row 0
                                     // carries the CaViaR q0, row r carries
                                     // predictions[r-1]
    CaviarFit caviar;
    std::vector<int> refit_rows;     // rows at which the forest was retrained
    QuantileForest final_forest;     // retrained on all rows at the end
    std::vector<std::string> feature_names; // table features + "lag_quant"
    int warmup = 0;                  // resolved V
};

// Expanding-window two-step fit. Step 0 fits CaViaR-SAV on the first V-1
// outcomes and uses its fitted path as the warmup predictions. The first
// forest trains on rows 0..V-2 (augmented with the lag-quant column) and
// predicts row V-1; each later row r is predicted by a forest trained on rows
// 0..r-1, retrained on the configured schedule with seeds derived from the
// training row count (so a refit at the same data extent is schedule-
// independent). Throws InvalidConfig when V < min_warmup or V >= R.
DynamicFitResult fit_dynamic_midas_qrf(const MixedFrequencyTable& table, double tau,
                                       const DynamicConfig& config);

} // namespace qrfx
