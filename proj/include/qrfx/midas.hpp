#pragma once

// Mixed-frequency machinery: Beta lag weights, MIDAS filter components, the
// omega2-grid + first-principal-component covariate, and calendar alignment
// that produces the mixed-frequency training table.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qrfx/matrix.hpp"

namespace qrfx {

// Low-frequency panel: one row per period, one column per covariate.
struct LowFreqSeries {
    std::vector<std::int64_t> periods; // strictly increasing period index t
    Matrix values;                     // periods.size() x H, finite entries
    std::vector<std::string> names;    // optional, defaults to z1..zH
};

// High-frequency observations ordered lexicographically by (period, within).
struct HighFreqSeries {
    std::vector<std::int64_t> period; // low-frequency period t of each observation
    std::vector<std::int64_t> within; // within-period index i
    std::vector<double> y;            // outcome
    Matrix X;                         // daily covariates (may have zero columns)
    std::vector<std::string> x_names; // optional, defaults to x1..xp
};

// Beta-lag filter configuration for one low-frequency covariate.
struct MidasSpec {
    int lag_count = 12;   // K: number of completed periods entering the filter
    double omega1 = 1.0;  // fixed at 1 by default; larger values hump the profile
    std::vector<double> omega2_grid = {1.5, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0, 35.0, 50.0};
};

struct AlignOptions {
    // true: one MC column per low-frequency covariate, the first principal
    // component over its omega2 grid. false: one raw MC column per grid entry.
    bool use_pca = true;
    // Per daily-covariate flag; true columns enter at their own timestamp
    // instead of lagged one observation. Empty means "lag everything".
    std::vector<std::uint8_t> contemporaneous;
};

// The aligned training table: one row per usable high-frequency observation.
struct MixedFrequencyTable {
    Matrix X;                         // lagged daily covariates + MC column(s)
    std::vector<double> y;
    std::vector<std::int64_t> period; // row provenance
    std::vector<std::int64_t> within;
    std::vector<std::string> feature_names;
    std::size_t n_dropped = 0; // high-frequency rows excluded for missing history
};

// Normalized Beta lag weights phi_1..phi_K:
//   phi_k ∝ (k/K)^(omega1-1) * (1 - k/K)^(omega2-1)
// The boundary term k = K evaluates to 0 for omega2 > 1 (continuity) and to 1
// for omega2 = 1. Degenerate limits: omega2 < 1 concentrates all weight on
// lag K; an all-zero profile (e.g. K = 1 with omega2 > 1) falls back to
// uniform weights. Throws InvalidInput for k_lags < 1 or nonpositive omegas.
std::vector<double> beta_weights(int k_lags, double omega1, double omega2);

// One filter value at `period`: sum_{j=1..K} phi_j * Z_{t-j}, where lag j is
// the j-th most recent observation with period strictly before `period`
// (positional over the sorted series, so calendar gaps are tolerated).
// Throws InsufficientHistory when fewer than k_lags periods precede `period`.
double midas_component(const LowFreqSeries& low, std::size_t column, int k_lags, double omega1,
                       double omega2, std::int64_t period);

// First-principal-component MC covariate for one low-frequency column: builds
// the matrix with one column per omega2 in the grid and one row per entry of
// target_periods, and returns the first PC scores (one per target period).
// Throws InvalidInput when the grid is empty or fewer than 2 target periods
// are given; InsufficientHistory propagates from midas_component.
std::vector<double> midas_pca_component(const LowFreqSeries& low, std::size_t column,
                                        const MidasSpec& spec,
                                        std::span<const std::int64_t> target_periods);

// Aligns the two frequencies into the training table: each usable row carries
// the outcome, the daily covariates lagged one observation (crossing period
// boundaries; contemporaneous columns exempt), and MC column(s) computed from
// periods strictly before the row's period. Rows lacking the lagged covariate
// or the filter history are dropped and counted. `specs` holds one entry per
// low-frequency covariate, or a single entry broadcast to all.
// Throws InvalidInput on malformed series, InsufficientData when no row
// survives trimming.
MixedFrequencyTable align_mixed_frequency(const HighFreqSeries& high, const LowFreqSeries& low,
                                          const std::vector<MidasSpec>& specs,
                                          const AlignOptions& options = {});

} // namespace qrfx
