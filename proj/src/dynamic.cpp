#include "qrfx/dynamic.hpp"

#include <algorithm>
#include <cmath>

#include "qrfx/errors.hpp"
#include "qrfx/evaluation.hpp"
#include "qrfx/numerics.hpp"
#include "qrfx/rng.hpp"

namespace qrfx {

namespace {

double empirical_quantile(std::vector<double> v, double tau) {
    std::sort(v.begin(), v.end());
    const auto n = static_cast<double>(v.size());
    const auto pos = static_cast<std::size_t>(
        std::max(0.0, std::ceil(tau * n - 1e-9) - 1.0));
    return v[std::min(pos, v.size() - 1)];
}

double path_avg_loss(const CaviarParams& params, std::span<const double> returns) {
    double total = 0.0;
    double q = params.q0;
    for (std::size_t t = 0; t < returns.size(); ++t) {
        if (t > 0)
            q = params.beta0 + params.beta1 * q + params.beta2 * std::abs(returns[t - 1]);
        total += check_loss(returns[t] - q, params.tau);
    }
    return total / static_cast<double>(returns.size());
}

} // namespace

std::vector<double> caviar_sav_path(const CaviarParams& params,
                                    std::span<const double> returns) {
    std::vector<double> path(returns.size());
    double q = params.q0;
    for (std::size_t t = 0; t < returns.size(); ++t) {
        if (t > 0)
            q = params.beta0 + params.beta1 * q + params.beta2 * std::abs(returns[t - 1]);
        path[t] = q;
    }
    return path;
}

CaviarFit fit_caviar_sav(std::span<const double> returns, double tau, int restarts,
                         std::uint64_t seed) {
    if (returns.size() < 30)
        throw InsufficientData("fit_caviar_sav: at least 30 observations required");
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidInput("fit_caviar_sav: tau outside (0,1)");
    if (restarts < 0) throw InvalidConfig("fit_caviar_sav: restarts must be >= 0");
    for (double r : returns)
        if (!std::isfinite(r)) throw InvalidInput("fit_caviar_sav: non-finite return");

    const std::size_t head = std::min<std::size_t>(returns.size(), 50);
    const double q0 =
        empirical_quantile({returns.begin(), returns.begin() + head}, tau);
    const double q_star = empirical_quantile({returns.begin(), returns.end()}, tau);

    auto objective = [&](const std::vector<double>& b) {
        CaviarParams p{b[0], b[1], b[2], tau, q0};
        return path_avg_loss(p, returns);
    };

    NelderMeadOptions opts;
    opts.max_iter = 1000;

    // Deterministic start at the static empirical-quantile solution.
    std::vector<std::vector<double>> starts{{q_star, 0.0, 0.0}};
    Rng rng = make_rng(seed);
    const double b0_half = std::max(2.0 * std::abs(q_star), 0.1);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int s = 0; s < restarts; ++s) {
        const double b0 = (2.0 * u01(rng) - 1.0) * b0_half;
        const double b1 = 0.95 * u01(rng);
        const double b2 = tau <= 0.5 ? -u01(rng) : u01(rng);
        starts.push_back({b0, b1, b2});
    }

    std::vector<double> best_x = starts[0];
    double best_f = objective(starts[0]);
    for (const auto& x0 : starts) {
        const auto res = nelder_mead(objective, x0, opts);
        if (res.value < best_f) {
            best_f = res.value;
            best_x = res.argmin;
        }
    }

    CaviarFit fit;
    fit.params = CaviarParams{best_x[0], best_x[1], best_x[2], tau, q0};
    fit.forecasts = caviar_sav_path(fit.params, returns);
    fit.avg_check_loss = best_f;
    return fit;
}

DynamicFitResult fit_dynamic_midas_qrf(const MixedFrequencyTable& table, double tau,
                                       const DynamicConfig& config) {
    const std::size_t R = table.y.size();
    if (R == 0) throw InvalidInput("fit_dynamic_midas_qrf: empty table");
    if (table.X.rows() != R)
        throw InvalidInput("fit_dynamic_midas_qrf: table row count mismatch");
    if (!(tau > 0.0 && tau < 1.0))
        throw InvalidInput("fit_dynamic_midas_qrf: tau outside (0,1)");
    if (config.refit_every < 1)
        throw InvalidConfig("fit_dynamic_midas_qrf: refit_every must be >= 1");

    int V = config.warmup;
    if (V == 0)
        V = std::max(config.min_warmup,
                     static_cast<int>(std::ceil(0.25 * static_cast<double>(R))));
    if (V < config.min_warmup)
        throw InvalidConfig("fit_dynamic_midas_qrf: warmup shorter than min_warmup");
    if (static_cast<std::size_t>(V) >= R)
        throw InvalidConfig("fit_dynamic_midas_qrf: warmup must leave rows to predict");
    if (config.lag_quant_override && config.lag_quant_override->size() != R)
        throw InvalidConfig("fit_dynamic_midas_qrf: lag_quant_override length mismatch");

    DynamicFitResult result;
    result.warmup = V;
    result.feature_names = table.feature_names;
    result.feature_names.push_back("lag_quant");
    result.predictions.assign(R, 0.0);
    result.lag_quant.assign(R, 0.0);

    // Step 0: warmup predictions from the CaViaR-SAV fit on rows 0..V-2.
    const std::span<const double> warm_y(table.y.data(), static_cast<std::size_t>(V) - 1);
    result.caviar = fit_caviar_sav(warm_y, tau, config.caviar_restarts, config.forest.seed);
    for (std::size_t r = 0; r + 1 < static_cast<std::size_t>(V); ++r)
        result.predictions[r] = result.caviar.forecasts[r];

    auto lag_value = [&](std::size_t r) {
        if (config.lag_quant_override) return (*config.lag_quant_override)[r];
        return r == 0 ? result.caviar.params.q0 : result.predictions[r - 1];
    };

    const std::vector<double> unit_weights(R, 1.0);
    const std::size_t p = table.X.cols();
    QuantileForest forest;
    bool have_forest = false;

    auto refit_on = [&](std::size_t train_rows) {
        Matrix Xa(train_rows, p + 1);
        for (std::size_t i = 0; i < train_rows; ++i) {
            for (std::size_t c = 0; c < p; ++c) Xa(i, c) = table.X(i, c);
            Xa(i, p) = result.lag_quant[i];
        }
        TrainConfig cfg = config.forest;
        cfg.seed = derive_seed(config.forest.seed, train_rows);
        const std::span<const double> ytr(table.y.data(), train_rows);
        const std::span<const double> wtr(unit_weights.data(), train_rows);
        forest = fit_forest(Xa, ytr, wtr, cfg, result.feature_names);
        have_forest = true;
    };

    // Two-step expanding loop: predict row r with a forest trained on rows < r.
    std::vector<double> xq(p + 1);
    const auto first = static_cast<std::size_t>(V) - 1;
    for (std::size_t r = 0; r < R; ++r) {
        result.lag_quant[r] = lag_value(r);
        if (r < first) continue;
        if (!have_forest || (r - first) % static_cast<std::size_t>(config.refit_every) == 0) {
            refit_on(r);
            result.refit_rows.push_back(static_cast<int>(r));
        }
        for (std::size_t c = 0; c < p; ++c) xq[c] = table.X(r, c);
        xq[p] = result.lag_quant[r];
        result.predictions[r] = predict_quantile(forest, xq, tau);
    }

    // Final retrain on the complete table, for downstream forecasting.
    refit_on(R);
    result.final_forest = std::move(forest);
    return result;
}

} // namespace qrfx
