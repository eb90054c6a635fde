#include "qrfx/fmqrf.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "qrfx/errors.hpp"
#include "qrfx/evaluation.hpp"
#include "qrfx/numerics.hpp"
#include "qrfx/rng.hpp"

namespace qrfx {

namespace {

constexpr double kStarvationMass = 1e-8; // unit responsibility mass below which
                                         // a component is frozen
constexpr double kPiFloor = 1e-6;        // mixing-weight floor for starved components
constexpr double kSigmaFloor = 1e-8;     // global lower bound on the ALD scale

void validate_panel(const PanelDataset& panel) {
    const std::size_t n = panel.y.size();
    if (n == 0) throw InvalidInput("panel: no observations");
    if (panel.X.rows() != n) throw InvalidInput("panel: covariate rows do not match outcomes");
    if (panel.X.cols() == 0) throw InvalidInput("panel: no covariates");
    if (panel.unit.size() != n) throw InvalidInput("panel: unit column does not match outcomes");
    const std::size_t n_units = panel.n_units();
    if (n_units == 0 || panel.unit_start.front() != 0 || panel.unit_start.back() != n)
        throw InvalidInput("panel: unit_start must start at 0 and cover every row");
    for (std::size_t i = 0; i < n_units; ++i) {
        if (panel.unit_start[i + 1] <= panel.unit_start[i])
            throw InvalidInput("panel: every unit needs at least one observation");
        for (std::size_t r = panel.unit_start[i]; r < panel.unit_start[i + 1]; ++r)
            if (panel.unit[r] != static_cast<int>(i))
                throw InvalidInput("panel: unit column disagrees with unit_start");
    }
    if (!panel.feature_names.empty() && panel.feature_names.size() != panel.X.cols())
        throw InvalidInput("panel: feature name count does not match covariates");
    for (double v : panel.y)
        if (!std::isfinite(v)) throw InvalidInput("panel: non-finite outcome");
    for (double v : panel.X.data())
        if (!std::isfinite(v)) throw InvalidInput("panel: non-finite covariate");
}

void validate_state(const PanelDataset& panel, const MixtureState& state, bool need_v) {
    if (state.k < 1) throw InvalidInput("state: component count must be positive");
    const auto k = static_cast<std::size_t>(state.k);
    if (state.alpha.size() != k || state.pi.size() != k)
        throw InvalidInput("state: alpha/pi length does not match component count");
    if (!(state.sigma > 0.0)) throw InvalidInput("state: sigma must be positive");
    if (!(state.tau > 0.0 && state.tau < 1.0)) throw InvalidInput("state: tau must lie in (0,1)");
    if (state.W.rows() != panel.n_units() || state.W.cols() != k)
        throw InvalidInput("state: responsibility matrix has wrong shape");
    if (need_v && (state.V.rows() != panel.n_obs() || state.V.cols() != k))
        throw InvalidInput("state: latent moment matrix has wrong shape");
}

double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

// Per-unit component log-likelihoods log pi_k + sum_t log f_ALD, shared by the
// E-step and the observed log-likelihood.
void unit_log_terms(const PanelDataset& panel, const MixtureState& state,
                    std::span<const double> g, std::size_t i, std::vector<double>& lw) {
    const int k_count = state.k;
    const double log_const = std::log(state.tau * (1.0 - state.tau) / state.sigma);
    const std::size_t lo = panel.unit_start[i];
    const std::size_t hi = panel.unit_start[i + 1];
    for (int k = 0; k < k_count; ++k) {
        double s = state.pi[static_cast<std::size_t>(k)] > 0.0
                       ? std::log(state.pi[static_cast<std::size_t>(k)])
                       : -std::numeric_limits<double>::infinity();
        const double ak = state.alpha[static_cast<std::size_t>(k)];
        for (std::size_t r = lo; r < hi; ++r) {
            s += log_const - check_loss((panel.y[r] - g[r] - ak) / state.sigma, state.tau);
        }
        lw[static_cast<std::size_t>(k)] = s;
    }
}

void e_step_impl(const PanelDataset& panel, MixtureState& state, std::span<const double> g) {
    const std::size_t n_units = panel.n_units();
    const auto k_count = static_cast<std::size_t>(state.k);
    Matrix w(n_units, k_count);
    std::vector<double> lw(k_count);
    std::vector<double> new_pi(k_count, 0.0);
    for (std::size_t i = 0; i < n_units; ++i) {
        unit_log_terms(panel, state, g, i, lw);
        double m = -std::numeric_limits<double>::infinity();
        for (double v : lw)
            if (v > m) m = v;
        if (!std::isfinite(m))
            throw NumericalDegeneracy("e_step: likelihood vanished in every component for unit " +
                                      std::to_string(i));
        double total = 0.0;
        for (std::size_t k = 0; k < k_count; ++k) {
            const double e = std::exp(lw[k] - m);
            w(i, k) = e;
            total += e;
        }
        if (!(total > 0.0) || !std::isfinite(total))
            throw NumericalDegeneracy("e_step: responsibilities not normalizable for unit " +
                                      std::to_string(i));
        for (std::size_t k = 0; k < k_count; ++k) {
            w(i, k) /= total;
            new_pi[k] += w(i, k);
        }
    }
    state.W = std::move(w);
    for (std::size_t k = 0; k < k_count; ++k)
        state.pi[k] = new_pi[k] / static_cast<double>(n_units);
}

double observed_ll_impl(const PanelDataset& panel, const MixtureState& state,
                        std::span<const double> g) {
    const std::size_t n_units = panel.n_units();
    const auto k_count = static_cast<std::size_t>(state.k);
    std::vector<double> lw(k_count);
    double ll = 0.0;
    for (std::size_t i = 0; i < n_units; ++i) {
        unit_log_terms(panel, state, g, i, lw);
        double m = -std::numeric_limits<double>::infinity();
        for (double v : lw)
            if (v > m) m = v;
        if (!std::isfinite(m)) return -std::numeric_limits<double>::infinity();
        double total = 0.0;
        for (double v : lw) total += std::exp(v - m);
        ll += m + std::log(total);
    }
    return ll;
}

void update_latent_v_impl(const PanelDataset& panel, MixtureState& state,
                          std::span<const double> g, double v_floor) {
    const std::size_t n = panel.n_obs();
    const auto k_count = static_cast<std::size_t>(state.k);
    std::vector<double> abs_res(n * k_count);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < k_count; ++k)
            abs_res[r * k_count + k] = std::abs(panel.y[r] - g[r] - state.alpha[k]);
    double scale = median_of(abs_res);
    if (!(scale > 0.0)) scale = 1.0;
    const double floor_abs = v_floor * scale;
    const double c = std::sqrt(state.theta() * state.theta() + 2.0 * state.rho2());
    Matrix v(n, k_count);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < k_count; ++k)
            v(r, k) = c / std::max(abs_res[r * k_count + k], floor_abs);
    state.V = std::move(v);
}

// Unit-level responsibility mass per component, the starvation criterion.
std::vector<double> component_masses(const MixtureState& state) {
    const auto k_count = static_cast<std::size_t>(state.k);
    std::vector<double> mass(k_count, 0.0);
    for (std::size_t i = 0; i < state.W.rows(); ++i)
        for (std::size_t k = 0; k < k_count; ++k) mass[k] += state.W(i, k);
    return mass;
}

double ald_sigma_mle(const PanelDataset& panel, const MixtureState& state,
                     std::span<const double> g, const std::vector<double>& alpha) {
    const auto k_count = static_cast<std::size_t>(state.k);
    double acc = 0.0;
    for (std::size_t r = 0; r < panel.n_obs(); ++r) {
        const auto i = static_cast<std::size_t>(panel.unit[r]);
        for (std::size_t k = 0; k < k_count; ++k)
            acc += state.W(i, k) * check_loss(panel.y[r] - g[r] - alpha[k], state.tau);
    }
    return std::max(acc / static_cast<double>(panel.n_obs()), kSigmaFloor);
}

MStepResult m_step_closed_impl(const PanelDataset& panel, const MixtureState& state,
                               std::span<const double> g) {
    const auto k_count = static_cast<std::size_t>(state.k);
    const double theta = state.theta();
    const std::vector<double> mass = component_masses(state);
    MStepResult res;
    res.alpha = state.alpha;
    for (std::size_t k = 0; k < k_count; ++k) {
        if (mass[k] < kStarvationMass) {
            ++res.starved;
            continue;
        }
        double num = 0.0, den = 0.0, row_mass = 0.0;
        for (std::size_t r = 0; r < panel.n_obs(); ++r) {
            const double w = state.W(static_cast<std::size_t>(panel.unit[r]), k);
            num += w * state.V(r, k) * (panel.y[r] - g[r]);
            den += w * state.V(r, k);
            row_mass += w;
        }
        num -= theta * row_mass;
        if (!(den > 0.0)) {
            ++res.starved;
            continue;
        }
        res.alpha[k] = num / den;
    }
    res.sigma = ald_sigma_mle(panel, state, g, res.alpha);
    res.converged = true;
    return res;
}

MStepResult m_step_numeric_impl(const PanelDataset& panel, const MixtureState& state,
                                std::span<const double> g, const NumericMStepOptions& options) {
    const auto k_count = static_cast<std::size_t>(state.k);
    const std::size_t n = panel.n_obs();
    const double tau = state.tau;
    const std::vector<double> mass = component_masses(state);

    const bool with_sigma = options.optimize_sigma && !options.frozen_v_surrogate;
    std::vector<double> x0 = state.alpha;
    if (with_sigma) x0.push_back(std::log(state.sigma));

    std::function<double(const std::vector<double>&)> objective;
    if (options.frozen_v_surrogate) {
        // Latent-conditioned quadratic surrogate (minimized): for each
        // observation/component, w * [v d^2 / 2 - theta d] with d = y - g - alpha_k.
        const double theta = state.theta();
        objective = [&, theta](const std::vector<double>& x) {
            double j = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                const auto i = static_cast<std::size_t>(panel.unit[r]);
                const double yg = panel.y[r] - g[r];
                for (std::size_t k = 0; k < k_count; ++k) {
                    const double d = yg - x[k];
                    j += state.W(i, k) * (0.5 * state.V(r, k) * d * d - theta * d);
                }
            }
            return j;
        };
    } else {
        // Negative responsibility-weighted ALD complete-data log-likelihood
        // (the log pi terms are constant in alpha and sigma and omitted).
        objective = [&, with_sigma](const std::vector<double>& x) {
            const double sigma = with_sigma ? std::exp(x[k_count]) : state.sigma;
            if (!(sigma > 0.0) || !std::isfinite(sigma))
                return std::numeric_limits<double>::infinity();
            const double log_const = std::log(tau * (1.0 - tau) / sigma);
            double neg = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                const auto i = static_cast<std::size_t>(panel.unit[r]);
                const double yg = panel.y[r] - g[r];
                for (std::size_t k = 0; k < k_count; ++k)
                    neg -= state.W(i, k) * (log_const - check_loss((yg - x[k]) / sigma, tau));
            }
            return neg;
        };
    }

    NelderMeadOptions nm;
    nm.max_iter = std::max<int>(2000, 400 * static_cast<int>(x0.size()));
    nm.x_tol = 1e-9;
    const OptResult opt = nelder_mead(objective, std::move(x0), nm);

    MStepResult res;
    res.alpha.assign(opt.argmin.begin(), opt.argmin.begin() + static_cast<std::ptrdiff_t>(k_count));
    for (std::size_t k = 0; k < k_count; ++k) {
        if (mass[k] < kStarvationMass) {
            res.alpha[k] = state.alpha[k];
            ++res.starved;
        }
    }
    res.sigma = with_sigma ? std::max(std::exp(opt.argmin[k_count]), kSigmaFloor) : state.sigma;
    res.converged = opt.converged;
    return res;
}

} // namespace

PanelDataset PanelDataset::from_rows(const Matrix& X, std::span<const double> y,
                                     const std::vector<std::string>& labels,
                                     std::vector<std::string> feature_names) {
    const std::size_t n = y.size();
    if (n == 0) throw InvalidInput("PanelDataset: no observations");
    if (X.rows() != n || labels.size() != n)
        throw InvalidInput("PanelDataset: covariates, outcomes and labels must have equal length");
    if (X.cols() == 0) throw InvalidInput("PanelDataset: no covariates");
    if (!feature_names.empty() && feature_names.size() != X.cols())
        throw InvalidInput("PanelDataset: feature name count does not match covariates");

    std::unordered_map<std::string, int> unit_index;
    std::vector<int> row_unit(n);
    std::vector<std::string> unit_labels;
    for (std::size_t r = 0; r < n; ++r) {
        auto it = unit_index.find(labels[r]);
        if (it == unit_index.end()) {
            it = unit_index.emplace(labels[r], static_cast<int>(unit_labels.size())).first;
            unit_labels.push_back(labels[r]);
        }
        row_unit[r] = it->second;
    }
    const std::size_t n_units = unit_labels.size();

    std::vector<std::size_t> counts(n_units, 0);
    for (int u : row_unit) ++counts[static_cast<std::size_t>(u)];
    PanelDataset out;
    out.unit_start.assign(n_units + 1, 0);
    for (std::size_t i = 0; i < n_units; ++i) out.unit_start[i + 1] = out.unit_start[i] + counts[i];

    out.X = Matrix(n, X.cols());
    out.y.resize(n);
    out.unit.resize(n);
    std::vector<std::size_t> cursor(out.unit_start.begin(), out.unit_start.end() - 1);
    for (std::size_t r = 0; r < n; ++r) {
        const auto u = static_cast<std::size_t>(row_unit[r]);
        const std::size_t dst = cursor[u]++;
        for (std::size_t c = 0; c < X.cols(); ++c) out.X(dst, c) = X(r, c);
        out.y[dst] = y[r];
        out.unit[dst] = row_unit[r];
    }
    out.unit_labels = std::move(unit_labels);
    if (feature_names.empty()) {
        out.feature_names.reserve(X.cols());
        for (std::size_t c = 0; c < X.cols(); ++c)
            out.feature_names.push_back("x" + std::to_string(c + 1));
    } else {
        out.feature_names = std::move(feature_names);
    }
    validate_panel(out);
    return out;
}

double ald_log_density(double y, double mu, double sigma, double tau) {
    if (!(sigma > 0.0)) throw InvalidInput("ald_log_density: sigma must be positive");
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidInput("ald_log_density: tau must lie in (0,1)");
    return std::log(tau * (1.0 - tau) / sigma) - check_loss((y - mu) / sigma, tau);
}

double latent_v(double residual, double tau, double floor_abs) {
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidInput("latent_v: tau must lie in (0,1)");
    const double theta = (1.0 - 2.0 * tau) / (tau * (1.0 - tau));
    const double rho2 = 2.0 / (tau * (1.0 - tau));
    return std::sqrt(theta * theta + 2.0 * rho2) / std::max(std::abs(residual), floor_abs);
}

std::vector<double> fixed_part_predictions(const PanelDataset& panel, const MixtureState& state) {
    return predict_quantiles(state.fixed_part, panel.X, state.tau);
}

MixtureState init_em(const PanelDataset& panel, double tau, const EmConfig& config) {
    validate_panel(panel);
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidInput("init_em: tau must lie in (0,1)");
    if (config.k < 1) throw InvalidConfig("init_em: component count must be >= 1");
    if (static_cast<std::size_t>(config.k) > panel.n_units())
        throw InvalidConfig("init_em: more components than units");
    if (!(config.v_floor > 0.0)) throw InvalidConfig("init_em: v_floor must be positive");

    const std::size_t n = panel.n_obs();
    const std::vector<double> ones(n, 1.0);
    QuantileForest forest = fit_forest(panel.X, panel.y, ones, config.forest, panel.feature_names);

    // Pooled predictions: out-of-bag where a row has one, in-sample otherwise.
    std::vector<double> ghat(n);
    std::vector<std::uint8_t> had_oob(n, 0);
    for (std::size_t r = 0; r < n; ++r) {
        double q = 0.0;
        if (oob_predict_quantile(forest, panel.X, static_cast<int>(r), tau, q)) {
            ghat[r] = q;
            had_oob[r] = 1;
        } else {
            ghat[r] = predict_quantile(forest, panel.X.row(r), tau);
        }
    }

    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) loss += check_loss(panel.y[r] - ghat[r], tau);
    const double sigma0 = std::max(loss / static_cast<double>(n), kSigmaFloor);

    std::vector<double> abs_res;
    abs_res.reserve(n);
    for (std::size_t r = 0; r < n; ++r)
        if (had_oob[r]) abs_res.push_back(std::abs(panel.y[r] - ghat[r]));
    if (abs_res.empty())
        for (std::size_t r = 0; r < n; ++r) abs_res.push_back(std::abs(panel.y[r] - ghat[r]));
    const double scale = median_of(std::move(abs_res));

    const Quadrature gh = gauss_hermite(config.k);
    MixtureState state;
    state.tau = tau;
    state.k = config.k;
    state.alpha.assign(static_cast<std::size_t>(config.k), 0.0);
    if (!config.zero_alpha_init)
        for (std::size_t k = 0; k < gh.nodes.size(); ++k) state.alpha[k] = gh.nodes[k] * scale;
    state.pi = gh.weights;
    state.sigma = sigma0;
    state.W = Matrix(panel.n_units(), static_cast<std::size_t>(config.k));
    for (std::size_t i = 0; i < panel.n_units(); ++i)
        for (std::size_t k = 0; k < state.pi.size(); ++k) state.W(i, k) = state.pi[k];
    state.fixed_part = std::move(forest);
    update_latent_v(panel, state, config.v_floor);
    return state;
}

void e_step(const PanelDataset& panel, MixtureState& state) {
    validate_panel(panel);
    validate_state(panel, state, /*need_v=*/false);
    const std::vector<double> g = fixed_part_predictions(panel, state);
    e_step_impl(panel, state, g);
}

QuantileForest refit_fixed_part(const PanelDataset& panel, const MixtureState& state,
                                const TrainConfig& forest_config) {
    validate_panel(panel);
    validate_state(panel, state, /*need_v=*/false);
    const std::size_t n = panel.n_obs();
    const auto k_count = static_cast<std::size_t>(state.k);
    const std::size_t p = panel.X.cols();
    Matrix x_rep(n * k_count, p);
    std::vector<double> y_rep(n * k_count);
    std::vector<double> w_rep(n * k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
        const std::size_t base = k * n;
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < p; ++c) x_rep(base + r, c) = panel.X(r, c);
            y_rep[base + r] = panel.y[r] - state.alpha[k];
            w_rep[base + r] = state.W(static_cast<std::size_t>(panel.unit[r]), k);
        }
    }
    return fit_forest(x_rep, y_rep, w_rep, forest_config, panel.feature_names);
}

void update_latent_v(const PanelDataset& panel, MixtureState& state, double v_floor) {
    validate_panel(panel);
    validate_state(panel, state, /*need_v=*/false);
    if (!(v_floor > 0.0)) throw InvalidInput("update_latent_v: v_floor must be positive");
    const std::vector<double> g = fixed_part_predictions(panel, state);
    update_latent_v_impl(panel, state, g, v_floor);
}

MStepResult m_step_closed_form(const PanelDataset& panel, const MixtureState& state) {
    validate_panel(panel);
    validate_state(panel, state, /*need_v=*/true);
    const std::vector<double> g = fixed_part_predictions(panel, state);
    return m_step_closed_impl(panel, state, g);
}

MStepResult m_step_numeric(const PanelDataset& panel, const MixtureState& state,
                           const NumericMStepOptions& options) {
    validate_panel(panel);
    validate_state(panel, state, /*need_v=*/options.frozen_v_surrogate);
    const std::vector<double> g = fixed_part_predictions(panel, state);
    return m_step_numeric_impl(panel, state, g, options);
}

double observed_log_likelihood(const PanelDataset& panel, const MixtureState& state) {
    validate_panel(panel);
    validate_state(panel, state, /*need_v=*/false);
    const std::vector<double> g = fixed_part_predictions(panel, state);
    return observed_ll_impl(panel, state, g);
}

FmQrfModel fit_fm_qrf(const PanelDataset& panel, double tau, const EmConfig& config) {
    if (config.max_iter < 0) throw InvalidConfig("fit_fm_qrf: max_iter must be >= 0");
    if (!(config.loglik_tol > 0.0)) throw InvalidConfig("fit_fm_qrf: loglik_tol must be positive");

    MixtureState state = init_em(panel, tau, config);
    std::vector<double> g = fixed_part_predictions(panel, state);

    FmQrfModel model;
    model.feature_names = panel.feature_names;
    model.unit_labels = panel.unit_labels;
    model.loglik_trace.push_back(observed_ll_impl(panel, state, g));
    double prev = model.loglik_trace.back();

    for (int iter = 1; iter <= config.max_iter; ++iter) {
        try {
            e_step_impl(panel, state, g);

            // Starved components keep their mass point; their mixing weight is
            // floored and the vector renormalized so no component disappears.
            const std::vector<double> mass = component_masses(state);
            bool floored = false;
            for (std::size_t k = 0; k < mass.size(); ++k) {
                if (mass[k] < kStarvationMass && state.pi[k] < kPiFloor) {
                    state.pi[k] = kPiFloor;
                    floored = true;
                }
            }
            if (floored) {
                double total = 0.0;
                for (double v : state.pi) total += v;
                for (double& v : state.pi) v /= total;
            }

            if (!config.freeze_fixed_part) {
                state.fixed_part = refit_fixed_part(panel, state, config.forest);
                g = fixed_part_predictions(panel, state);
            }
            update_latent_v_impl(panel, state, g, config.v_floor);

            const MStepResult ms = config.m_step == MStepKind::closed_form
                                       ? m_step_closed_impl(panel, state, g)
                                       : m_step_numeric_impl(panel, state, g, {});
            state.alpha = ms.alpha;
            state.sigma = std::max(ms.sigma, kSigmaFloor);
            model.starvation_events += ms.starved;

            const double ll = observed_ll_impl(panel, state, g);
            model.loglik_trace.push_back(ll);
            model.n_iterations = iter;
            if (std::abs(ll - prev) < config.loglik_tol) {
                model.converged = true;
                break;
            }
            prev = ll;
        } catch (const NumericalDegeneracy& e) {
            throw NumericalDegeneracy(std::string(e.what()) + " (EM iteration " +
                                      std::to_string(iter) + ")");
        }
    }

    model.map_component.resize(panel.n_units());
    for (std::size_t i = 0; i < panel.n_units(); ++i) {
        int best = 0;
        for (int k = 1; k < state.k; ++k)
            if (state.W(i, static_cast<std::size_t>(k)) >
                state.W(i, static_cast<std::size_t>(best)))
                best = k;
        model.map_component[i] = best;
    }
    model.state = std::move(state);
    return model;
}

double predict_fm_qrf(const FmQrfModel& model, std::span<const double> x,
                      std::optional<int> unit) {
    const MixtureState& s = model.state;
    const double gx = predict_quantile(s.fixed_part, x, s.tau);
    if (unit.has_value()) {
        if (*unit < 0 || static_cast<std::size_t>(*unit) >= model.map_component.size())
            throw InvalidInput("predict_fm_qrf: unit index out of range");
        return gx + s.alpha[static_cast<std::size_t>(model.map_component[static_cast<std::size_t>(*unit)])];
    }
    double shift = 0.0;
    for (std::size_t k = 0; k < s.pi.size(); ++k) shift += s.pi[k] * s.alpha[k];
    return gx + shift;
}

BootstrapResult bootstrap_se(const PanelDataset& panel, double tau, const EmConfig& config,
                             int b_replicates, const Matrix& queries,
                             const std::vector<std::optional<int>>& query_units) {
    validate_panel(panel);
    if (b_replicates < 1) throw InvalidConfig("bootstrap_se: need at least one replicate");
    const std::size_t n_queries = queries.rows();
    if (n_queries > 0 && queries.cols() != panel.X.cols())
        throw InvalidInput("bootstrap_se: query dimension mismatch");
    if (!query_units.empty() && query_units.size() != n_queries)
        throw InvalidInput("bootstrap_se: query unit list length mismatch");
    const std::size_t n_units = panel.n_units();
    for (const auto& u : query_units)
        if (u.has_value() && (*u < 0 || static_cast<std::size_t>(*u) >= n_units))
            throw InvalidInput("bootstrap_se: query unit index out of range");

    const std::size_t p = panel.X.cols();
    std::vector<std::vector<double>> draws(n_queries);
    BootstrapResult result;

    for (int b = 1; b <= b_replicates; ++b) {
        const std::uint64_t rep_seed = derive_seed(config.forest.seed, static_cast<std::uint64_t>(b));
        Rng rng = make_rng(rep_seed, 0);
        std::uniform_int_distribution<std::size_t> pick(0, n_units - 1);
        std::vector<std::size_t> drawn(n_units);
        for (std::size_t j = 0; j < n_units; ++j) drawn[j] = pick(rng);

        // Resampled units become distinct units of the replicate even when they
        // share a source, so the replicate panel is constructed directly.
        PanelDataset rep;
        rep.unit_start.reserve(n_units + 1);
        rep.unit_start.push_back(0);
        for (std::size_t j = 0; j < n_units; ++j) {
            const std::size_t src = drawn[j];
            rep.unit_start.push_back(rep.unit_start.back() + panel.unit_start[src + 1] -
                                     panel.unit_start[src]);
        }
        const std::size_t total = rep.unit_start.back();
        rep.X = Matrix(total, p);
        rep.y.resize(total);
        rep.unit.resize(total);
        rep.unit_labels.reserve(n_units);
        std::size_t cursor = 0;
        for (std::size_t j = 0; j < n_units; ++j) {
            const std::size_t src = drawn[j];
            rep.unit_labels.push_back(panel.unit_labels.empty() ? std::to_string(src)
                                                                : panel.unit_labels[src]);
            for (std::size_t r = panel.unit_start[src]; r < panel.unit_start[src + 1]; ++r) {
                for (std::size_t c = 0; c < p; ++c) rep.X(cursor, c) = panel.X(r, c);
                rep.y[cursor] = panel.y[r];
                rep.unit[cursor] = static_cast<int>(j);
                ++cursor;
            }
        }
        rep.feature_names = panel.feature_names;

        EmConfig rep_config = config;
        rep_config.forest.seed = rep_seed;
        try {
            const FmQrfModel fitted = fit_fm_qrf(rep, tau, rep_config);
            for (std::size_t q = 0; q < n_queries; ++q) {
                std::optional<int> rep_unit;
                if (!query_units.empty() && query_units[q].has_value()) {
                    const auto want = static_cast<std::size_t>(*query_units[q]);
                    for (std::size_t j = 0; j < n_units; ++j) {
                        if (drawn[j] == want) {
                            rep_unit = static_cast<int>(j);
                            break;
                        }
                    }
                }
                draws[q].push_back(predict_fm_qrf(fitted, queries.row(q), rep_unit));
            }
            ++result.n_success;
        } catch (const Error&) {
            ++result.n_failed;
        }
    }

    if (result.n_success == 0)
        throw NumericalDegeneracy("bootstrap_se: every replicate failed");

    result.mean.resize(n_queries);
    result.se.resize(n_queries);
    for (std::size_t q = 0; q < n_queries; ++q) {
        const auto& v = draws[q];
        double m = 0.0;
        for (double d : v) m += d;
        m /= static_cast<double>(v.size());
        result.mean[q] = m;
        if (v.size() <= 1) {
            result.se[q] = 0.0;
        } else {
            double ss = 0.0;
            for (double d : v) ss += (d - m) * (d - m);
            result.se[q] = std::sqrt(ss / static_cast<double>(v.size() - 1));
        }
    }
    return result;
}

} // namespace qrfx
