#pragma once

// Simulation-study runner: for each scenario and quantile level, replicates
// the DGP, fits the mixture model and a pooled forest benchmark on the
// training panel, and scores both on the unbalanced test panel with the
// per-unit equal-weight MAE / MSE / RAMP losses plus a pooled pseudo-R^2.

#include <cstdint>
#include <string>
#include <vector>

#include "qrfx/fmqrf.hpp"
#include "qrfx/forest.hpp"
#include "qrfx/simulation.hpp"

namespace qrfx {

// Tuned mixture-model configuration for the study. The fixed-part forest's
// min_node_size is scaled by K: the replica panel holds each physical row K
// times (responsibilities summing to one), so a leaf needs K x the row count
// to hold the same number of distinct observations as a pooled fit. mtry=1
// decorrelates the trees, which keeps the tail forecasts RAMP-calibrated.
EmConfig default_study_em();

// Pooled-forest benchmark: the same tree parameters on the raw panel.
TrainConfig default_benchmark_forest();

struct StudyConfig {
    std::vector<Scenario> scenarios = all_scenarios();
    std::vector<double> taus = {0.1, 0.9};
    int replications = 20;
    int n_units = 100;
    int t_train = 5;
    std::vector<int> test_sizes = {9, 27, 45, 63, 81};
    std::uint64_t seed = 1;
    EmConfig em = default_study_em();
    TrainConfig benchmark = default_benchmark_forest();
};

// One (scenario, tau) cell, averaged over the completed replications.
// MAE/MSE are distances to the oracle quantile; RAMP is the fraction of test
// outcomes strictly below the forecast (target: tau); pseudo_r2 compares the
// pooled check loss against the constant empirical tau-quantile of the test
// outcomes. Every per-replication average weights units equally (1/T_i
// within a unit), matching the unbalanced-panel loss definitions.
struct StudyCell {
    std::string scenario;
    double tau = 0.0;
    double fm_mae = 0.0, fm_mse = 0.0, fm_ramp = 0.0, fm_pseudo_r2 = 0.0;
    double qrf_mae = 0.0, qrf_mse = 0.0, qrf_ramp = 0.0, qrf_pseudo_r2 = 0.0;
    int replications = 0; // completed
    int failures = 0;     // replications dropped due to fitting errors
};

struct StudyResult {
    std::vector<StudyCell> cells; // scenario-major, tau-minor
};

// Runs the full grid. Replication r of scenario s draws its panel with seed
// derive_seed(derive_seed(seed, s), r); the benchmark forest and each
// tau-level mixture fit use further streams of that seed, so the whole study
// is deterministic. Replications whose fit throws a library error are
// excluded from the averages and counted in `failures`.
StudyResult run_study(const StudyConfig& config);

} // namespace qrfx
