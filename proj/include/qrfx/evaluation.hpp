#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qrfx {

// Check (pinball) loss rho_tau(u) = u * (tau - 1{u < 0}).
double check_loss(double u, double tau);

// Mean check loss of the residuals y - q. Lengths must match and be nonzero.
double quantile_loss(std::span<const double> y, std::span<const double> q, double tau);

// Violation indicators for lower-tail VaR: hit_t = 1{y_t < q_t}. Ties count
// as non-violations (relevant only for discrete inputs; continuous data make
// ties measure-zero).
std::vector<int> violation_hits(std::span<const double> y, std::span<const double> q);

struct TestResult {
    double statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
    int n_violations = 0;
    // Set when the statistic could not be computed (e.g. the DQ design matrix
    // is singular because no violations ever occur); p_value is then 1.
    bool degenerate = false;
};

// Kupiec unconditional-coverage likelihood ratio. Compares the binomial
// likelihood of the observed violation frequency against the nominal rate tau;
// 0 * log 0 terms are taken as 0, so x = 0 and x = n are handled exactly.
// p-value from the chi-square(1) tail.
TestResult kupiec_uc(const std::vector<int>& hits, double tau);

// Christoffersen conditional-coverage test: LR_cc = LR_uc + LR_ind, where
// LR_ind tests first-order Markov dependence of the hit sequence against the
// iid alternative (transition counts n00, n01, n10, n11). p-value from the
// chi-square(2) tail.
TestResult christoffersen_cc(const std::vector<int>& hits, double tau);

// Engle-Manganelli Dynamic Quantile test. Centered hits Hit_t = 1{y_t<q_t} - tau
// are regressed on an intercept, n_lags lagged hits and (optionally) the
// contemporaneous quantile forecast; DQ = (X'Hit)'(X'X)^{-1}(X'Hit) / (tau(1-tau)),
// p-value from the chi-square tail with df = number of regressors.
// A singular design (e.g. a hit column that never varies) yields a degenerate
// result with p = 1 rather than an error.
TestResult dq_test(std::span<const double> y, std::span<const double> q, double tau,
                   int n_lags = 4, bool include_quantile_regressor = true);

struct BacktestReport {
    double tau = 0.0;
    std::vector<int> hits;
    TestResult uc, cc, dq;
    double ae_ratio = 0.0;      // n_violations / (n * tau)
    double avg_check_loss = 0.0;
};

// Runs all three backtests plus the AE ratio and mean check loss.
BacktestReport backtest(std::span<const double> y, std::span<const double> q, double tau,
                        int n_lags = 4);

struct AccuracyMetrics {
    std::optional<double> mae;        // vs the oracle quantile, when given
    std::optional<double> mse;
    double ramp = 0.0;                // fraction of outcomes below the forecast
    std::optional<double> pseudo_r2;  // 1 - loss(model)/loss(null), when null given
    std::optional<double> pct_loss;   // loss(model)/loss(benchmark), when benchmark given
    double avg_check_loss = 0.0;
};

// Forecast-accuracy summary. q_true enables MAE/MSE against the oracle
// quantile; null_q (a constant null forecast, typically the unconditional
// empirical tau-quantile) enables the pseudo-R^2; benchmark_q enables the
// relative-loss ratio.
AccuracyMetrics accuracy_metrics(std::span<const double> q_hat, std::span<const double> y,
                                 double tau,
                                 std::span<const double> q_true = {},
                                 std::optional<double> null_q = std::nullopt,
                                 std::span<const double> benchmark_q = {});

// JSON rendering with stable field names (statistic, df, p_value,
// n_violations, ae_ratio, avg_check_loss, tau, n_obs).
std::string backtest_report_to_json(const BacktestReport& report, int indent = 2);

} // namespace qrfx
