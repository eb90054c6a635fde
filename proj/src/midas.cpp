#include "qrfx/midas.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <unordered_map>

#include "qrfx/errors.hpp"
#include "qrfx/numerics.hpp"

namespace qrfx {

namespace {

std::string format_omega(double w) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", w);
    return buf;
}

void validate_low(const LowFreqSeries& low) {
    if (low.values.rows() != low.periods.size())
        throw InvalidInput("low-frequency series: row count does not match period count");
    for (std::size_t i = 1; i < low.periods.size(); ++i)
        if (low.periods[i] <= low.periods[i - 1])
            throw InvalidInput("low-frequency series: periods must be strictly increasing");
    for (std::size_t i = 0; i < low.values.rows(); ++i)
        for (std::size_t h = 0; h < low.values.cols(); ++h)
            if (!std::isfinite(low.values(i, h)))
                throw InvalidInput("low-frequency series: non-finite value");
}

void validate_high(const HighFreqSeries& high) {
    const std::size_t n = high.y.size();
    if (high.period.size() != n || high.within.size() != n)
        throw InvalidInput("high-frequency series: timestamp/outcome length mismatch");
    if (high.X.cols() > 0 && high.X.rows() != n)
        throw InvalidInput("high-frequency series: covariate row count mismatch");
    for (std::size_t i = 1; i < n; ++i) {
        const bool increasing = high.period[i] > high.period[i - 1] ||
                                (high.period[i] == high.period[i - 1] &&
                                 high.within[i] > high.within[i - 1]);
        if (!increasing)
            throw InvalidInput(
                "high-frequency series: (period, within) must be strictly increasing");
    }
}

} // namespace

std::vector<double> beta_weights(int k_lags, double omega1, double omega2) {
    if (k_lags < 1) throw InvalidInput("beta_weights: k_lags must be >= 1");
    if (!(omega1 > 0.0) || !(omega2 > 0.0))
        throw InvalidInput("beta_weights: omega parameters must be positive");

    const auto K = static_cast<std::size_t>(k_lags);
    std::vector<double> w(K);
    double sum = 0.0;
    bool saw_inf = false;
    for (std::size_t k = 1; k <= K; ++k) {
        const double u = static_cast<double>(k) / static_cast<double>(K);
        const double term = std::pow(u, omega1 - 1.0) * std::pow(1.0 - u, omega2 - 1.0);
        w[k - 1] = term;
        if (std::isinf(term)) saw_inf = true;
        sum += term;
    }
    if (saw_inf) {
        // omega2 < 1 blows up at the k = K endpoint; the normalized limit puts
        // all mass there.
        std::size_t n_inf = 0;
        for (double t : w) n_inf += std::isinf(t) ? 1 : 0;
        for (double& t : w) t = std::isinf(t) ? 1.0 / static_cast<double>(n_inf) : 0.0;
        return w;
    }
    if (sum <= 0.0) {
        // Entire profile underflowed (or K = 1 with omega2 > 1): fall back to
        // uniform weights.
        std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(K));
        return w;
    }
    for (double& t : w) t /= sum;
    return w;
}

double midas_component(const LowFreqSeries& low, std::size_t column, int k_lags, double omega1,
                       double omega2, std::int64_t period) {
    validate_low(low);
    if (column >= low.values.cols())
        throw InvalidInput("midas_component: low-frequency column out of range");

    const auto first_at_or_after =
        std::lower_bound(low.periods.begin(), low.periods.end(), period);
    const auto n_before = static_cast<std::size_t>(first_at_or_after - low.periods.begin());
    if (n_before < static_cast<std::size_t>(k_lags))
        throw InsufficientHistory("midas_component: fewer than k_lags periods precede target");

    const std::vector<double> w = beta_weights(k_lags, omega1, omega2);
    double mc = 0.0;
    for (std::size_t j = 1; j <= static_cast<std::size_t>(k_lags); ++j)
        mc += w[j - 1] * low.values(n_before - j, column);
    return mc;
}

std::vector<double> midas_pca_component(const LowFreqSeries& low, std::size_t column,
                                        const MidasSpec& spec,
                                        std::span<const std::int64_t> target_periods) {
    if (spec.omega2_grid.empty())
        throw InvalidInput("midas_pca_component: omega2 grid must be nonempty");
    if (target_periods.size() < 2)
        throw InvalidInput("midas_pca_component: at least 2 target periods required");

    Matrix M(target_periods.size(), spec.omega2_grid.size());
    for (std::size_t r = 0; r < target_periods.size(); ++r)
        for (std::size_t g = 0; g < spec.omega2_grid.size(); ++g)
            M(r, g) = midas_component(low, column, spec.lag_count, spec.omega1,
                                      spec.omega2_grid[g], target_periods[r]);
    return pca_first_scores(M);
}

MixedFrequencyTable align_mixed_frequency(const HighFreqSeries& high, const LowFreqSeries& low,
                                          const std::vector<MidasSpec>& specs,
                                          const AlignOptions& options) {
    validate_high(high);
    validate_low(low);

    const std::size_t n = high.y.size();
    const std::size_t p = high.X.cols();
    const std::size_t H = low.values.cols();
    if (n == 0) throw InvalidInput("align_mixed_frequency: empty high-frequency series");
    if (H > 0 && specs.size() != H && specs.size() != 1)
        throw InvalidInput(
            "align_mixed_frequency: need one filter spec per low-frequency covariate "
            "(or a single one to broadcast)");
    if (!options.contemporaneous.empty() && options.contemporaneous.size() != p)
        throw InvalidInput("align_mixed_frequency: contemporaneous flag count mismatch");

    auto spec_for = [&](std::size_t h) -> const MidasSpec& {
        return specs.size() == 1 ? specs[0] : specs[h];
    };
    auto is_contemporaneous = [&](std::size_t c) {
        return !options.contemporaneous.empty() && options.contemporaneous[c] != 0;
    };
    bool any_lagged = false;
    for (std::size_t c = 0; c < p; ++c)
        if (!is_contemporaneous(c)) any_lagged = true;

    // Distinct high-frequency periods, in order.
    std::vector<std::int64_t> distinct;
    for (std::size_t i = 0; i < n; ++i)
        if (distinct.empty() || high.period[i] != distinct.back())
            distinct.push_back(high.period[i]);

    // A period is usable when every low-frequency filter has enough history.
    std::vector<std::int64_t> usable;
    for (std::int64_t t : distinct) {
        bool ok = true;
        for (std::size_t h = 0; h < H && ok; ++h) {
            const auto it = std::lower_bound(low.periods.begin(), low.periods.end(), t);
            const auto n_before = static_cast<std::size_t>(it - low.periods.begin());
            ok = n_before >= static_cast<std::size_t>(spec_for(h).lag_count);
        }
        if (ok) usable.push_back(t);
    }

    // MC values per usable period, one block of columns per low covariate.
    std::size_t n_mc_cols = 0;
    for (std::size_t h = 0; h < H; ++h)
        n_mc_cols += options.use_pca ? 1 : spec_for(h).omega2_grid.size();

    std::unordered_map<std::int64_t, std::size_t> usable_pos;
    for (std::size_t r = 0; r < usable.size(); ++r) usable_pos[usable[r]] = r;

    Matrix mc(usable.size(), n_mc_cols);
    std::vector<std::string> mc_names;
    if (H > 0 && !usable.empty()) {
        if (options.use_pca && usable.size() < 2)
            throw InsufficientData(
                "align_mixed_frequency: PCA needs at least 2 usable periods");
        std::size_t col = 0;
        for (std::size_t h = 0; h < H; ++h) {
            const MidasSpec& spec = spec_for(h);
            const std::string base =
                (h < low.names.size() && !low.names[h].empty()) ? low.names[h]
                                                                : "z" + std::to_string(h + 1);
            if (options.use_pca) {
                const auto scores = midas_pca_component(low, h, spec, usable);
                for (std::size_t r = 0; r < usable.size(); ++r) mc(r, col) = scores[r];
                mc_names.push_back(base + "_mc");
                ++col;
            } else {
                if (spec.omega2_grid.empty())
                    throw InvalidInput("align_mixed_frequency: omega2 grid must be nonempty");
                for (double omega2 : spec.omega2_grid) {
                    for (std::size_t r = 0; r < usable.size(); ++r)
                        mc(r, col) = midas_component(low, h, spec.lag_count, spec.omega1,
                                                     omega2, usable[r]);
                    mc_names.push_back(base + "_mc_w" + format_omega(omega2));
                    ++col;
                }
            }
        }
    }

    // Assemble rows.
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < n; ++i) {
        if (any_lagged && i == 0) continue;
        if (H > 0 && !usable_pos.contains(high.period[i])) continue;
        keep.push_back(i);
    }
    if (keep.empty())
        throw InsufficientData("align_mixed_frequency: no rows survive history trimming");

    MixedFrequencyTable table;
    table.n_dropped = n - keep.size();
    table.X = Matrix(keep.size(), p + n_mc_cols);
    table.y.resize(keep.size());
    table.period.resize(keep.size());
    table.within.resize(keep.size());

    for (std::size_t r = 0; r < keep.size(); ++r) {
        const std::size_t i = keep[r];
        table.y[r] = high.y[i];
        table.period[r] = high.period[i];
        table.within[r] = high.within[i];
        for (std::size_t c = 0; c < p; ++c)
            table.X(r, c) = is_contemporaneous(c) ? high.X(i, c) : high.X(i - 1, c);
        if (n_mc_cols > 0) {
            const std::size_t pos = usable_pos.at(high.period[i]);
            for (std::size_t c = 0; c < n_mc_cols; ++c) table.X(r, p + c) = mc(pos, c);
        }
    }

    for (std::size_t c = 0; c < p; ++c) {
        const std::string base = (c < high.x_names.size() && !high.x_names[c].empty())
                                     ? high.x_names[c]
                                     : "x" + std::to_string(c + 1);
        table.feature_names.push_back(is_contemporaneous(c) ? base : base + "_lag1");
    }
    for (auto& name : mc_names) table.feature_names.push_back(std::move(name));
    return table;
}

} // namespace qrfx
