#include "qrfx/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "qrfx/errors.hpp"
#include "qrfx/matrix.hpp"
#include "qrfx/numerics.hpp"

namespace qrfx {

namespace {

void require_tau(double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidInput("tau must lie strictly inside (0,1)");
}

// x * log(p) with the 0 * log 0 = 0 convention used throughout the
// likelihood-ratio backtests.
double xlogp(double x, double p) {
    if (x == 0.0) return 0.0;
    return x * std::log(p);
}

} // namespace

double check_loss(double u, double tau) {
    return u * (tau - (u < 0.0 ? 1.0 : 0.0));
}

double quantile_loss(std::span<const double> y, std::span<const double> q, double tau) {
    require_tau(tau);
    if (y.size() != q.size()) throw InvalidInput("quantile_loss: length mismatch");
    if (y.empty()) throw InvalidInput("quantile_loss: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += check_loss(y[i] - q[i], tau);
    return s / static_cast<double>(y.size());
}

std::vector<int> violation_hits(std::span<const double> y, std::span<const double> q) {
    if (y.size() != q.size()) throw InvalidInput("violation_hits: length mismatch");
    std::vector<int> hits(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) hits[i] = y[i] < q[i] ? 1 : 0;
    return hits;
}

TestResult kupiec_uc(const std::vector<int>& hits, double tau) {
    require_tau(tau);
    const std::size_t n = hits.size();
    if (n == 0) throw InvalidInput("kupiec_uc: empty hit sequence");

    double x = 0.0;
    for (int h : hits) x += h ? 1.0 : 0.0;
    const double nn = static_cast<double>(n);
    const double pi_hat = x / nn;

    const double log_null = xlogp(nn - x, 1.0 - tau) + xlogp(x, tau);
    const double log_alt = xlogp(nn - x, 1.0 - pi_hat) + xlogp(x, pi_hat);
    const double lr = std::max(0.0, -2.0 * (log_null - log_alt));

    TestResult r;
    r.statistic = lr;
    r.df = 1;
    r.p_value = chi_square_sf(lr, 1);
    r.n_violations = static_cast<int>(x);
    return r;
}

TestResult christoffersen_cc(const std::vector<int>& hits, double tau) {
    require_tau(tau);
    const std::size_t n = hits.size();
    if (n < 2) throw InvalidInput("christoffersen_cc: need at least 2 observations");

    double n00 = 0, n01 = 0, n10 = 0, n11 = 0;
    for (std::size_t t = 1; t < n; ++t) {
        const int prev = hits[t - 1] ? 1 : 0;
        const int cur = hits[t] ? 1 : 0;
        if (prev == 0 && cur == 0) n00 += 1;
        if (prev == 0 && cur == 1) n01 += 1;
        if (prev == 1 && cur == 0) n10 += 1;
        if (prev == 1 && cur == 1) n11 += 1;
    }

    // Markov alternative: state-dependent violation probabilities.
    const double from0 = n00 + n01, from1 = n10 + n11;
    const double pi01 = from0 > 0 ? n01 / from0 : 0.0;
    const double pi11 = from1 > 0 ? n11 / from1 : 0.0;
    // iid null within the transition sample.
    const double pi2 = (n01 + n11) / (from0 + from1);

    const double log_null = xlogp(n00 + n10, 1.0 - pi2) + xlogp(n01 + n11, pi2);
    const double log_alt = xlogp(n00, 1.0 - pi01) + xlogp(n01, pi01) +
                           xlogp(n10, 1.0 - pi11) + xlogp(n11, pi11);
    const double lr_ind = std::max(0.0, -2.0 * (log_null - log_alt));

    const TestResult uc = kupiec_uc(hits, tau);

    TestResult r;
    r.statistic = uc.statistic + lr_ind;
    r.df = 2;
    r.p_value = chi_square_sf(r.statistic, 2);
    r.n_violations = uc.n_violations;
    return r;
}

TestResult dq_test(std::span<const double> y, std::span<const double> q, double tau,
                   int n_lags, bool include_quantile_regressor) {
    require_tau(tau);
    if (y.size() != q.size()) throw InvalidInput("dq_test: length mismatch");
    if (n_lags < 0) throw InvalidInput("dq_test: negative lag count");
    const std::size_t n = y.size();
    if (n <= static_cast<std::size_t>(n_lags) + 2)
        throw InvalidInput("dq_test: series too short for the requested lags");

    std::vector<double> hit(n);
    int n_viol = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const bool v = y[t] < q[t];
        hit[t] = (v ? 1.0 : 0.0) - tau;
        n_viol += v ? 1 : 0;
    }

    const std::size_t rows = n - static_cast<std::size_t>(n_lags);
    const std::size_t cols = 1 + static_cast<std::size_t>(n_lags) + (include_quantile_regressor ? 1 : 0);

    TestResult r;
    r.df = static_cast<int>(cols);
    r.n_violations = n_viol;

    if (rows < cols) {
        r.degenerate = true;
        r.p_value = 1.0;
        return r;
    }

    Matrix x(rows, cols);
    std::vector<double> h(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t t = i + static_cast<std::size_t>(n_lags);
        x(i, 0) = 1.0;
        for (int l = 1; l <= n_lags; ++l) x(i, static_cast<std::size_t>(l)) = hit[t - l];
        if (include_quantile_regressor) x(i, cols - 1) = q[t];
        h[i] = hit[t];
    }

    std::vector<double> beta;
    try {
        beta = ols_solve(x, h);
    } catch (const SingularDesign&) {
        r.degenerate = true;
        r.p_value = 1.0;
        return r;
    }

    // DQ = (X'H)' beta / (tau (1 - tau)), since beta = (X'X)^{-1} X'H.
    double stat = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        double xh = 0.0;
        for (std::size_t i = 0; i < rows; ++i) xh += x(i, j) * h[i];
        stat += xh * beta[j];
    }
    stat /= tau * (1.0 - tau);

    r.statistic = std::max(0.0, stat);
    r.p_value = chi_square_sf(r.statistic, r.df);
    return r;
}

BacktestReport backtest(std::span<const double> y, std::span<const double> q, double tau,
                        int n_lags) {
    require_tau(tau);
    if (y.size() != q.size()) throw InvalidInput("backtest: length mismatch");
    if (y.empty()) throw InvalidInput("backtest: empty input");

    BacktestReport rep;
    rep.tau = tau;
    rep.hits = violation_hits(y, q);
    rep.uc = kupiec_uc(rep.hits, tau);
    rep.cc = christoffersen_cc(rep.hits, tau);
    rep.dq = dq_test(y, q, tau, n_lags);
    rep.ae_ratio = static_cast<double>(rep.uc.n_violations) /
                   (static_cast<double>(y.size()) * tau);
    rep.avg_check_loss = quantile_loss(y, q, tau);
    return rep;
}

AccuracyMetrics accuracy_metrics(std::span<const double> q_hat, std::span<const double> y,
                                 double tau,
                                 std::span<const double> q_true,
                                 std::optional<double> null_q,
                                 std::span<const double> benchmark_q) {
    require_tau(tau);
    if (q_hat.size() != y.size()) throw InvalidInput("accuracy_metrics: length mismatch");
    if (q_hat.empty()) throw InvalidInput("accuracy_metrics: empty input");
    const double n = static_cast<double>(y.size());

    AccuracyMetrics m;
    m.avg_check_loss = quantile_loss(y, q_hat, tau);

    double below = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) below += y[i] < q_hat[i] ? 1.0 : 0.0;
    m.ramp = below / n;

    if (!q_true.empty()) {
        if (q_true.size() != y.size())
            throw InvalidInput("accuracy_metrics: oracle quantile length mismatch");
        double ae = 0.0, se = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double d = q_hat[i] - q_true[i];
            ae += std::fabs(d);
            se += d * d;
        }
        m.mae = ae / n;
        m.mse = se / n;
    }

    if (null_q.has_value()) {
        double null_loss = 0.0;
        for (double yi : y) null_loss += check_loss(yi - *null_q, tau);
        null_loss /= n;
        if (null_loss <= 0.0)
            throw InvalidInput("accuracy_metrics: null model has zero loss");
        m.pseudo_r2 = 1.0 - m.avg_check_loss / null_loss;
    }

    if (!benchmark_q.empty()) {
        if (benchmark_q.size() != y.size())
            throw InvalidInput("accuracy_metrics: benchmark length mismatch");
        const double bench_loss = quantile_loss(y, benchmark_q, tau);
        if (bench_loss <= 0.0)
            throw InvalidInput("accuracy_metrics: benchmark has zero loss");
        m.pct_loss = m.avg_check_loss / bench_loss;
    }
    return m;
}

std::string backtest_report_to_json(const BacktestReport& report, int indent) {
    auto test_json = [](const TestResult& t) {
        nlohmann::json j;
        j["statistic"] = t.statistic;
        j["df"] = t.df;
        j["p_value"] = t.p_value;
        j["n_violations"] = t.n_violations;
        j["degenerate"] = t.degenerate;
        return j;
    };
    nlohmann::json j;
    j["tau"] = report.tau;
    j["n_obs"] = report.hits.size();
    j["uc"] = test_json(report.uc);
    j["cc"] = test_json(report.cc);
    j["dq"] = test_json(report.dq);
    j["ae_ratio"] = report.ae_ratio;
    j["avg_check_loss"] = report.avg_check_loss;
    return j.dump(indent);
}

} // namespace qrfx
