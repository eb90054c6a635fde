#include "qrfx/study.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "qrfx/errors.hpp"
#include "qrfx/evaluation.hpp"
#include "qrfx/rng.hpp"

namespace qrfx {

namespace {

// Type-1 empirical quantile (inf{y : F_n(y) >= tau}) of a copy of `values`.
double empirical_quantile(std::vector<double> values, double tau) {
    const std::size_t n = values.size();
    std::sort(values.begin(), values.end());
    const auto raw = static_cast<std::ptrdiff_t>(
        std::ceil(tau * static_cast<double>(n) - 1e-9));
    const std::size_t idx = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, raw - 1));
    return values[std::min(idx, n - 1)];
}

struct RepScores {
    double mae = 0.0, mse = 0.0, ramp = 0.0, pseudo_r2 = 0.0;
};

// Per-unit equal-weight losses of one forecast vector on the test panel,
// plus the pooled pseudo-R^2 against the constant null forecast.
RepScores score_forecasts(const SimulatedPanel& sim, const std::vector<double>& forecast,
                          double tau, double error_q, double null_q) {
    const PanelDataset& test = sim.test;
    const std::size_t n_units = test.n_units();
    RepScores out;
    double loss_model = 0.0;
    double loss_null = 0.0;
    for (std::size_t i = 0; i < n_units; ++i) {
        double mae_u = 0.0, mse_u = 0.0, ramp_u = 0.0;
        const double t_i = static_cast<double>(test.unit_start[i + 1] - test.unit_start[i]);
        for (std::size_t r = test.unit_start[i]; r < test.unit_start[i + 1]; ++r) {
            const double theo = sim.g_test[r] + sim.b[i] + error_q;
            const double diff = theo - forecast[r];
            mae_u += std::abs(diff);
            mse_u += diff * diff;
            if (test.y[r] < forecast[r]) ramp_u += 1.0;
            loss_model += check_loss(test.y[r] - forecast[r], tau);
            loss_null += check_loss(test.y[r] - null_q, tau);
        }
        const double unit_w = 1.0 / (t_i * static_cast<double>(n_units));
        out.mae += mae_u * unit_w;
        out.mse += mse_u * unit_w;
        out.ramp += ramp_u * unit_w;
    }
    out.pseudo_r2 = loss_null > 0.0 ? 1.0 - loss_model / loss_null : 0.0;
    return out;
}

} // namespace

EmConfig default_study_em() {
    EmConfig em;
    em.k = 11;
    em.max_iter = 8;
    em.loglik_tol = 1e-3;
    em.forest.n_trees = 30;
    em.forest.mtry = 1;
    // K-replica rows: each observation appears K times, so scale the leaf
    // size by K to keep ~20 distinct observations per leaf.
    em.forest.min_node_size = 220;
    return em;
}

TrainConfig default_benchmark_forest() {
    TrainConfig config;
    config.n_trees = 30;
    config.mtry = 1;
    config.min_node_size = 40;
    return config;
}

StudyResult run_study(const StudyConfig& config) {
    if (config.scenarios.empty()) throw InvalidConfig("run_study: no scenarios");
    if (config.taus.empty()) throw InvalidConfig("run_study: no quantile levels");
    for (double tau : config.taus)
        if (!(tau > 0.0) || !(tau < 1.0))
            throw InvalidConfig("run_study: every tau must lie in (0, 1)");
    if (config.replications < 1) throw InvalidConfig("run_study: replications must be >= 1");

    StudyResult result;
    result.cells.reserve(config.scenarios.size() * config.taus.size());
    for (const Scenario& scenario : config.scenarios) {
        for (double tau : config.taus) {
            StudyCell cell;
            cell.scenario = scenario.name;
            cell.tau = tau;
            result.cells.push_back(cell);
        }
    }

    for (std::size_t si = 0; si < config.scenarios.size(); ++si) {
        const Scenario& scenario = config.scenarios[si];
        const std::uint64_t scenario_seed = derive_seed(config.seed, si);
        for (int rep = 0; rep < config.replications; ++rep) {
            const std::uint64_t rep_seed =
                derive_seed(scenario_seed, static_cast<std::uint64_t>(rep));
            const SimulatedPanel sim = simulate_scenario(scenario, config.n_units,
                                                         config.t_train, config.test_sizes,
                                                         rep_seed);
            const std::size_t n_test = sim.test.n_obs();

            for (std::size_t ti = 0; ti < config.taus.size(); ++ti) {
                const double tau = config.taus[ti];
                StudyCell& cell = result.cells[si * config.taus.size() + ti];
                try {
                    EmConfig em = config.em;
                    em.forest.seed = derive_seed(rep_seed, 2 + ti);
                    const FmQrfModel model = fit_fm_qrf(sim.train, tau, em);

                    TrainConfig qc = config.benchmark;
                    qc.seed = derive_seed(rep_seed, 1);
                    const std::vector<double> ones(sim.train.n_obs(), 1.0);
                    const QuantileForest qrf =
                        fit_forest(sim.train.X, sim.train.y, ones, qc, sim.train.feature_names);

                    std::vector<double> fm_q(n_test), qr_q(n_test);
                    for (std::size_t r = 0; r < n_test; ++r) {
                        fm_q[r] = predict_fm_qrf(model, sim.test.X.row(r), sim.test.unit[r]);
                        qr_q[r] = predict_quantile(qrf, sim.test.X.row(r), tau);
                    }

                    const double error_q = error_quantile(sim.scenario.error, tau);
                    const double null_q = empirical_quantile(sim.test.y, tau);
                    const RepScores fm = score_forecasts(sim, fm_q, tau, error_q, null_q);
                    const RepScores qr = score_forecasts(sim, qr_q, tau, error_q, null_q);

                    cell.fm_mae += fm.mae;
                    cell.fm_mse += fm.mse;
                    cell.fm_ramp += fm.ramp;
                    cell.fm_pseudo_r2 += fm.pseudo_r2;
                    cell.qrf_mae += qr.mae;
                    cell.qrf_mse += qr.mse;
                    cell.qrf_ramp += qr.ramp;
                    cell.qrf_pseudo_r2 += qr.pseudo_r2;
                    cell.replications += 1;
                } catch (const Error&) {
                    cell.failures += 1;
                }
            }
        }
    }

    for (StudyCell& cell : result.cells) {
        if (cell.replications == 0) continue;
        const double inv = 1.0 / static_cast<double>(cell.replications);
        cell.fm_mae *= inv;
        cell.fm_mse *= inv;
        cell.fm_ramp *= inv;
        cell.fm_pseudo_r2 *= inv;
        cell.qrf_mae *= inv;
        cell.qrf_mse *= inv;
        cell.qrf_ramp *= inv;
        cell.qrf_pseudo_r2 *= inv;
    }
    return result;
}

} // namespace qrfx
