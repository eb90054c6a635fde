#pragma once

// Simulation harness for the longitudinal experiments: a nonlinear DGP with
// unit-level random effects, four canonical scenarios crossing the tail family
// (normal vs Student t(3)) with the random-effect share of variance, balanced
// training panels, unbalanced test panels, and the oracle quantile.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qrfx/fmqrf.hpp"

namespace qrfx {

enum class TailFamily { normal, student_t3 };

struct Scenario {
    std::string name;
    TailFamily effect = TailFamily::normal; // distribution of the unit effects b_i
    TailFamily error = TailFamily::normal;  // distribution of the observation noise
    double sigma_b = 0.5;                   // random-effect scale (small vs large share)

    // Parses the four canonical names NN-S, NN-L, TT-S, TT-L (first letter
    // pair = effect/error family, suffix = small or large effect scale).
    static Scenario from_name(std::string_view name);
};

// The four canonical scenarios in table order.
std::vector<Scenario> all_scenarios();

struct SimulatedPanel {
    Scenario scenario;
    PanelDataset train;          // balanced: every unit has t_train rows
    PanelDataset test;           // unbalanced: unit i has test_sizes[i % |sizes|] rows
    std::vector<double> b;       // planted random effect per unit (shared by both panels)
    std::vector<double> g_train; // g(x) per training row
    std::vector<double> g_test;  // g(x) per test row
};

// The nonlinear fixed part g(x) = 2 x1 + x2^2 + 4*1{x3>0} + 2 x3 log|x1|.
// Requires exactly three covariates.
double dgp_g(std::span<const double> x);

// Quantile of the standardized error family: inverse standard normal CDF
// (Newton with bisection safeguard on erfc) or inverse t(3) CDF (bisection
// through the regularized incomplete beta). The t(3) is not rescaled to unit
// variance.
double error_quantile(TailFamily family, double tau);

// Draws a training panel (n_units x t_train) and a test panel whose unit i
// reuses b_i and has test_sizes[i % test_sizes.size()] rows. Covariates are
// iid standard normal, b_i = sigma_b * (effect-family draw), noise iid from
// the error family. Deterministic in the seed.
SimulatedPanel simulate_scenario(const Scenario& scenario, int n_units = 100, int t_train = 5,
                                 const std::vector<int>& test_sizes = {9, 27, 45, 63, 81},
                                 std::uint64_t seed = 1);

// Oracle conditional quantile g(x) + b_i + F_error^{-1}(tau) for a simulated
// unit.
double theoretical_quantile(const SimulatedPanel& panel, int unit, std::span<const double> x,
                            double tau);

} // namespace qrfx
