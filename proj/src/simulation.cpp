#include "qrfx/simulation.hpp"

#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <utility>

#include "qrfx/errors.hpp"
#include "qrfx/numerics.hpp"
#include "qrfx/rng.hpp"

namespace qrfx {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double standard_normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
}

// Inverse standard normal CDF: Newton iteration on erfc with a bisection
// safeguard keeping every iterate inside the current bracket.
double standard_normal_quantile(double tau) {
    double lo = -40.0;
    double hi = 40.0;
    double x = 0.0;
    for (int iter = 0; iter < 200; ++iter) {
        double cdf = standard_normal_cdf(x);
        if (cdf > tau) {
            hi = x;
        } else {
            lo = x;
        }
        double pdf = standard_normal_pdf(x);
        double next;
        if (pdf > 1e-300) {
            next = x - (cdf - tau) / pdf;
        } else {
            next = 0.5 * (lo + hi);
        }
        if (!(next > lo) || !(next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - x) <= 1e-15 * std::max(1.0, std::abs(x))) return next;
        x = next;
    }
    return x;
}

// CDF of the Student t with 3 degrees of freedom through the regularized
// incomplete beta: for t >= 0, P(T <= t) = 1 - I_z(3/2, 1/2) / 2 with
// z = 3 / (3 + t^2); the negative side follows by symmetry.
double student_t3_cdf(double t) {
    if (t == 0.0) return 0.5;
    double z = 3.0 / (3.0 + t * t);
    double tail = 0.5 * detail::regularized_beta(1.5, 0.5, z);
    return t > 0.0 ? 1.0 - tail : tail;
}

// Inverse t(3) CDF by bisection (the CDF is strictly increasing and the
// cubic tail keeps every quantile in (0,1) far inside the initial bracket).
double student_t3_quantile(double tau) {
    double lo = -1e9;
    double hi = 1e9;
    for (int iter = 0; iter < 300; ++iter) {
        double mid = 0.5 * (lo + hi);
        if (student_t3_cdf(mid) < tau) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo <= 1e-14 * std::max(1.0, std::abs(lo))) break;
    }
    return 0.5 * (lo + hi);
}

double draw(TailFamily family, Rng& rng, std::normal_distribution<double>& normal,
            std::student_t_distribution<double>& student) {
    return family == TailFamily::normal ? normal(rng) : student(rng);
}

} // namespace

Scenario Scenario::from_name(std::string_view name) {
    Scenario s;
    s.name = std::string(name);
    if (name == "NN-S") {
        s.effect = TailFamily::normal;
        s.error = TailFamily::normal;
        s.sigma_b = 0.5;
    } else if (name == "NN-L") {
        s.effect = TailFamily::normal;
        s.error = TailFamily::normal;
        s.sigma_b = 2.0;
    } else if (name == "TT-S") {
        s.effect = TailFamily::student_t3;
        s.error = TailFamily::student_t3;
        s.sigma_b = 0.5;
    } else if (name == "TT-L") {
        s.effect = TailFamily::student_t3;
        s.error = TailFamily::student_t3;
        s.sigma_b = 2.0;
    } else {
        throw InvalidInput("Scenario::from_name: unknown scenario '" + s.name +
                           "' (expected NN-S, NN-L, TT-S or TT-L)");
    }
    return s;
}

std::vector<Scenario> all_scenarios() {
    return {Scenario::from_name("NN-S"), Scenario::from_name("NN-L"), Scenario::from_name("TT-S"),
            Scenario::from_name("TT-L")};
}

double dgp_g(std::span<const double> x) {
    if (x.size() != 3)
        throw InvalidInput("dgp_g: expected 3 covariates, got " + std::to_string(x.size()));
    double indicator = x[2] > 0.0 ? 1.0 : 0.0;
    return 2.0 * x[0] + x[1] * x[1] + 4.0 * indicator + 2.0 * x[2] * std::log(std::abs(x[0]));
}

double error_quantile(TailFamily family, double tau) {
    if (!(tau > 0.0) || !(tau < 1.0))
        throw InvalidInput("error_quantile: tau must lie in (0, 1)");
    return family == TailFamily::normal ? standard_normal_quantile(tau) : student_t3_quantile(tau);
}

SimulatedPanel simulate_scenario(const Scenario& scenario, int n_units, int t_train,
                                 const std::vector<int>& test_sizes, std::uint64_t seed) {
    if (!(scenario.sigma_b > 0.0) || !std::isfinite(scenario.sigma_b))
        throw InvalidConfig("simulate_scenario: sigma_b must be positive and finite");
    if (n_units < 1) throw InvalidInput("simulate_scenario: n_units must be >= 1");
    if (t_train < 1) throw InvalidInput("simulate_scenario: t_train must be >= 1");
    if (test_sizes.empty()) throw InvalidInput("simulate_scenario: test_sizes must be nonempty");
    for (int t : test_sizes)
        if (t < 1) throw InvalidInput("simulate_scenario: every test size must be >= 1");

    const std::size_t n = static_cast<std::size_t>(n_units);
    Rng rng = make_rng(seed, 0);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::student_t_distribution<double> student(3.0);

    SimulatedPanel out;
    out.scenario = scenario;
    out.b.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        out.b[i] = scenario.sigma_b * draw(scenario.effect, rng, normal, student);

    std::vector<std::string> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = "u" + std::to_string(i);
    const std::vector<std::string> feature_names = {"x1", "x2", "x3"};

    auto fill_panel = [&](PanelDataset& panel, std::vector<double>& g_values,
                          auto&& rows_for_unit) {
        std::vector<std::size_t> sizes(n);
        std::size_t total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            sizes[i] = rows_for_unit(i);
            total += sizes[i];
        }
        panel.X = Matrix(total, 3);
        panel.y.resize(total);
        panel.unit.resize(total);
        panel.unit_start.assign(n + 1, 0);
        panel.unit_labels = labels;
        panel.feature_names = feature_names;
        g_values.resize(total);
        std::size_t r = 0;
        for (std::size_t i = 0; i < n; ++i) {
            panel.unit_start[i] = r;
            for (std::size_t t = 0; t < sizes[i]; ++t, ++r) {
                for (std::size_t j = 0; j < 3; ++j) panel.X(r, j) = normal(rng);
                double g = dgp_g(panel.X.row(r));
                double eps = draw(scenario.error, rng, normal, student);
                g_values[r] = g;
                panel.y[r] = g + out.b[i] + eps;
                panel.unit[r] = static_cast<int>(i);
            }
        }
        panel.unit_start[n] = r;
    };

    fill_panel(out.train, out.g_train,
               [&](std::size_t) { return static_cast<std::size_t>(t_train); });
    fill_panel(out.test, out.g_test, [&](std::size_t i) {
        return static_cast<std::size_t>(test_sizes[i % test_sizes.size()]);
    });
    return out;
}

double theoretical_quantile(const SimulatedPanel& panel, int unit, std::span<const double> x,
                            double tau) {
    if (unit < 0 || static_cast<std::size_t>(unit) >= panel.b.size())
        throw InvalidInput("theoretical_quantile: unit index out of range");
    return dgp_g(x) + panel.b[static_cast<std::size_t>(unit)] + error_quantile(panel.scenario.error, tau);
}

} // namespace qrfx
