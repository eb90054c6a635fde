#pragma once

// Finite-mixture quantile regression forest for longitudinal data: an
// asymmetric-Laplace working likelihood whose unit-level intercepts follow a
// discrete K-point mixture, estimated by EM around a case-weighted forest fit
// of the fixed part.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qrfx/forest.hpp"
#include "qrfx/matrix.hpp"

namespace qrfx {

// Longitudinal panel with rows grouped contiguously by unit.
struct PanelDataset {
    Matrix X;                         // n_obs x p
    std::vector<double> y;            // n_obs
    std::vector<int> unit;            // per-row unit index, 0..N-1, nondecreasing
    std::vector<std::size_t> unit_start; // N+1 row offsets; unit i owns
                                         // rows [unit_start[i], unit_start[i+1])
    std::vector<std::string> unit_labels; // original ingestion labels
    std::vector<std::string> feature_names;

    std::size_t n_obs() const { return y.size(); }
    std::size_t n_units() const { return unit_start.empty() ? 0 : unit_start.size() - 1; }

    // Groups rows by unit label (first-appearance order, stable within unit)
    // and validates finiteness. Labels may arrive interleaved.
    static PanelDataset from_rows(const Matrix& X, std::span<const double> y,
                                  const std::vector<std::string>& labels,
                                  std::vector<std::string> feature_names = {});
};

// All mixture parameters plus the latent quantities the EM steps exchange.
struct MixtureState {
    double tau = 0.5;
    int k = 1;
    std::vector<double> alpha; // K mass points
    std::vector<double> pi;    // K mixing weights, sum 1
    double sigma = 1.0;        // ALD scale, > 0
    Matrix W;                  // N x K responsibilities, rows sum 1
    Matrix V;                  // n_obs x K latent inverse moments
    QuantileForest fixed_part; // houses g

    double theta() const { return (1.0 - 2.0 * tau) / (tau * (1.0 - tau)); }
    double rho2() const { return 2.0 / (tau * (1.0 - tau)); }
};

enum class MStepKind { closed_form, nelder_mead };

struct EmConfig {
    int k = 2;
    int max_iter = 50;
    double loglik_tol = 1e-4; // stop when |delta loglik| drops below this
    MStepKind m_step = MStepKind::closed_form;
    TrainConfig forest;
    double v_floor = 1e-6; // relative floor on |residual| in the inverse moment
    bool zero_alpha_init = false;  // reproduce the degenerate all-zero start
    bool freeze_fixed_part = false; // test hook: skip the forest refit each loop
};

struct FmQrfModel {
    MixtureState state;
    std::vector<int> map_component;   // per unit, argmax of its W row
    std::vector<double> loglik_trace; // observed log-likelihood: entry 0 after
                                      // initialization, then one per iteration
    int n_iterations = 0;
    bool converged = false;
    int starvation_events = 0;
    std::vector<std::string> feature_names;
    std::vector<std::string> unit_labels; // training panel units, index-aligned
                                          // with map_component
};

// log f_ALD(y | mu, sigma, tau) = log(tau(1-tau)/sigma) - rho_tau((y-mu)/sigma).
double ald_log_density(double y, double mu, double sigma, double tau);

// E[V^-1] of the latent ALD scale: sqrt(theta^2 + 2 rho^2) / |residual|, the
// absolute residual floored at floor_abs (0 = no floor).
double latent_v(double residual, double tau, double floor_abs = 0.0);

// Per-row fixed-part values g(x_it) at the state's tau.
std::vector<double> fixed_part_predictions(const PanelDataset& panel,
                                           const MixtureState& state);

// Initialization: pooled forest fit ignoring the clustering; sigma = mean
// check loss of the pooled predictions (out-of-bag where available, in-sample
// otherwise); pi = Gauss-Hermite weights; alpha = Gauss-Hermite nodes scaled
// by the median absolute out-of-bag residual (all zeros under
// zero_alpha_init); W rows replicate pi; V filled from the initial residuals.
// Throws InvalidConfig when k > N.
MixtureState init_em(const PanelDataset& panel, double tau, const EmConfig& config);

// E-step: responsibilities from per-unit ALD log-likelihoods (log-space with
// per-unit max subtraction), then pi = column means of W. Mutates W and pi.
// Throws NumericalDegeneracy if a unit's likelihood vanishes in every
// component.
void e_step(const PanelDataset& panel, MixtureState& state);

// Fits the fixed part on the K-replica expanded panel: replica k of each
// observation carries outcome y - alpha_k and case weight W(unit, k).
// Replicas are laid out k-major (all of component 0 first).
QuantileForest refit_fixed_part(const PanelDataset& panel, const MixtureState& state,
                                const TrainConfig& forest_config);

// Recomputes state.V at the current alpha and fixed part. The floor is
// v_floor times the median absolute residual over all (row, component) pairs.
void update_latent_v(const PanelDataset& panel, MixtureState& state, double v_floor);

struct MStepResult {
    std::vector<double> alpha;
    double sigma = 0.0;
    int starved = 0;      // components frozen at their current mass point
    bool converged = true; // numeric flavor: optimizer stopping rule met
};

// Closed-form update: alpha_k = [sum w v (y-g) - theta sum w] / [sum w v],
// the stationary point of the latent-conditioned quadratic objective, using
// state.V as given; sigma refreshed with the ALD scale MLE at the new alpha.
// Components whose responsibility mass falls below 1e-8 are frozen.
MStepResult m_step_closed_form(const PanelDataset& panel, const MixtureState& state);

struct NumericMStepOptions {
    bool optimize_sigma = true; // false: hold sigma at its current value
    // true: minimize the latent-conditioned quadratic surrogate (state.V
    // frozen, sigma untouched) instead of the ALD complete-data objective —
    // the direct numerical counterpart of m_step_closed_form.
    bool frozen_v_surrogate = false;
};

// Numeric update: Nelder-Mead over (alpha_1..alpha_K [, log sigma]) from the
// current state, maximizing the responsibility-weighted ALD complete-data
// log-likelihood (or the frozen-V surrogate, see options).
MStepResult m_step_numeric(const PanelDataset& panel, const MixtureState& state,
                           const NumericMStepOptions& options = {});

// sum_i log sum_k pi_k prod_t f_ALD(y_it | g + alpha_k, sigma), via
// log-sum-exp.
double observed_log_likelihood(const PanelDataset& panel, const MixtureState& state);

// Full EM loop: init, then iterate { e_step -> refit fixed part -> latent
// update -> m_step } until |delta observed log-likelihood| < loglik_tol or
// max_iter. Starved components keep their mass point, with their mixing
// weight floored at 1e-6 and the vector renormalized.
FmQrfModel fit_fm_qrf(const PanelDataset& panel, double tau, const EmConfig& config);

// Quantile prediction: g(x) + alpha of the unit's MAP component for a known
// unit index, or g(x) + sum_k pi_k alpha_k for an unknown unit.
double predict_fm_qrf(const FmQrfModel& model, std::span<const double> x,
                      std::optional<int> unit = std::nullopt);

struct BootstrapResult {
    std::vector<double> mean; // per query, across successful replicates
    std::vector<double> se;   // sample standard deviation (0 when <= 1 replicate)
    int n_success = 0;
    int n_failed = 0;
};

// Unit-resampling bootstrap: B replicates, each resampling N units with
// replacement (relabeled contiguously), refit with a seed derived from
// (forest seed, b). Query rows are predicted per replicate: a query naming an
// original unit uses the MAP component of that unit's first resampled copy
// when present, the unknown-unit rule otherwise. Failed replicates are
// dropped and counted.
BootstrapResult bootstrap_se(const PanelDataset& panel, double tau, const EmConfig& config,
                             int b_replicates, const Matrix& queries,
                             const std::vector<std::optional<int>>& query_units = {});

} // namespace qrfx
