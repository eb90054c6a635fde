#include "qrfx/forest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "qrfx/errors.hpp"

namespace qrfx {

namespace {

// Tolerance for "the cumulative weight reached tau": CDF masses are sums of
// many small shares, so an exact >= comparison can miss by a few ulps when
// tau * n lands exactly on an atom boundary.
constexpr double kCumSlack = 1e-9;

int resolve_mtry(const TrainConfig& cfg, std::size_t p) {
    if (cfg.mtry == 0)
        return std::max(1, static_cast<int>((p + 2) / 3));
    return cfg.mtry;
}

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

void validate_training_inputs(const Matrix& X, std::span<const double> y,
                              std::span<const double> w, const TrainConfig& cfg) {
    const std::size_t n = X.rows(), p = X.cols();
    if (n == 0 || p == 0) throw InvalidInput("forest: empty training input");
    if (y.size() != n) throw InvalidInput("forest: outcome length mismatch");
    if (w.size() != n) throw InvalidInput("forest: weight length mismatch");
    double wsum = 0.0;
    for (double wi : w) {
        if (!(wi >= 0.0)) throw InvalidInput("forest: case weights must be nonnegative");
        wsum += wi;
    }
    if (wsum <= 0.0) throw InvalidInput("forest: case weights must not all be zero");

    if (cfg.n_trees < 1) throw InvalidConfig("forest: n_trees must be >= 1");
    if (cfg.min_node_size < 1) throw InvalidConfig("forest: min_node_size must be >= 1");
    const int mtry = resolve_mtry(cfg, p);
    if (mtry < 1 || mtry > static_cast<int>(p))
        throw InvalidConfig("forest: mtry must lie in [1, p]");
    if (!(cfg.bootstrap_fraction > 0.0 && cfg.bootstrap_fraction <= 1.0))
        throw InvalidConfig("forest: bootstrap_fraction must lie in (0, 1]");
}

struct GrowContext {
    const Matrix& X;
    std::span<const double> y;
    std::span<const double> w;
    int mtry;
    int min_node;
    int max_depth;
    Rng& rng;
    RegressionTree& tree;
};

void make_leaf(GrowContext& ctx, int node_index, std::vector<int>& rows) {
    // Collapse bootstrap multiplicity: each distinct training index appears
    // once with weight case_weight * multiplicity, normalized within the node.
    std::sort(rows.begin(), rows.end());
    auto& tree = ctx.tree;
    const auto begin = static_cast<std::int64_t>(tree.leaf_items.size());

    double total = 0.0;
    for (std::size_t i = 0; i < rows.size();) {
        std::size_t j = i;
        while (j < rows.size() && rows[j] == rows[i]) ++j;
        const double wgt = ctx.w[rows[i]] * static_cast<double>(j - i);
        tree.leaf_items.push_back(rows[i]);
        tree.leaf_weights.push_back(wgt);
        total += wgt;
        i = j;
    }
    const auto end = static_cast<std::int64_t>(tree.leaf_items.size());

    if (total > 0.0) {
        for (std::int64_t k = begin; k < end; ++k) tree.leaf_weights[k] /= total;
    } else {
        // All members carry zero case weight; fall back to uniform shares so
        // the node still defines a proper distribution.
        const double u = 1.0 / static_cast<double>(end - begin);
        for (std::int64_t k = begin; k < end; ++k) tree.leaf_weights[k] = u;
    }

    tree.nodes[node_index].leaf_begin = begin;
    tree.nodes[node_index].leaf_end = end;
}

int grow_node(GrowContext& ctx, std::vector<int> rows, int depth) {
    const int node_index = static_cast<int>(ctx.tree.nodes.size());
    ctx.tree.nodes.emplace_back();

    const std::size_t m = rows.size();

    double sw = 0.0, swy = 0.0;
    for (int idx : rows) {
        sw += ctx.w[idx];
        swy += ctx.w[idx] * ctx.y[idx];
    }
    const double ybar = sw > 0.0 ? swy / sw : 0.0;

    // Shifted second moments keep the SSE prefix scan numerically tame.
    double parent_sse = 0.0, swy_s = 0.0;
    for (int idx : rows) {
        const double d = ctx.y[idx] - ybar;
        parent_sse += ctx.w[idx] * d * d;
        swy_s += ctx.w[idx] * d;
    }

    const bool depth_ok = ctx.max_depth < 0 || depth < ctx.max_depth;
    const bool size_ok = m >= 2 * static_cast<std::size_t>(ctx.min_node);

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_sse = std::numeric_limits<double>::infinity();

    if (depth_ok && size_ok && parent_sse > 0.0) {
        const std::size_t p = ctx.X.cols();
        std::vector<int> feats(p);
        std::iota(feats.begin(), feats.end(), 0);
        for (int j = 0; j < ctx.mtry; ++j) {
            std::uniform_int_distribution<std::size_t> pick(j, p - 1);
            std::swap(feats[static_cast<std::size_t>(j)], feats[pick(ctx.rng)]);
        }
        feats.resize(static_cast<std::size_t>(ctx.mtry));
        // Ascending feature order makes the first-strictly-better update rule
        // break SSE ties toward the lowest feature index.
        std::sort(feats.begin(), feats.end());

        std::vector<std::pair<double, int>> vals(m);
        for (int f : feats) {
            for (std::size_t k = 0; k < m; ++k)
                vals[k] = {ctx.X(static_cast<std::size_t>(rows[k]), static_cast<std::size_t>(f)),
                           rows[k]};
            std::sort(vals.begin(), vals.end());

            double cw = 0.0, sw_l = 0.0, swy_l = 0.0, swy2_l = 0.0;
            for (std::size_t j = 0; j + 1 < m; ++j) {
                const int idx = vals[j].second;
                const double ys = ctx.y[idx] - ybar;
                cw += 1.0;
                sw_l += ctx.w[idx];
                swy_l += ctx.w[idx] * ys;
                swy2_l += ctx.w[idx] * ys * ys;

                if (!(vals[j + 1].first > vals[j].first)) continue;
                if (cw < ctx.min_node) continue;
                if (static_cast<double>(m) - cw < ctx.min_node) continue;

                const double sse_l = sw_l > 0.0 ? std::max(0.0, swy2_l - swy_l * swy_l / sw_l) : 0.0;
                const double sw_r = sw - sw_l;
                const double swy_r = swy_s - swy_l;
                const double swy2_r = parent_sse - swy2_l;
                const double sse_r = sw_r > 0.0 ? std::max(0.0, swy2_r - swy_r * swy_r / sw_r) : 0.0;
                const double child_sse = sse_l + sse_r;

                if (child_sse < best_sse) {
                    best_sse = child_sse;
                    best_feature = f;
                    best_threshold = 0.5 * (vals[j].first + vals[j + 1].first);
                }
            }
        }
    }

    const bool accept = best_feature >= 0 &&
                        best_sse < parent_sse - 1e-12 * std::max(1.0, parent_sse);
    if (!accept) {
        make_leaf(ctx, node_index, rows);
        return node_index;
    }

    std::vector<int> left_rows, right_rows;
    left_rows.reserve(m);
    right_rows.reserve(m);
    for (int idx : rows) {
        if (ctx.X(static_cast<std::size_t>(idx), static_cast<std::size_t>(best_feature)) <=
            best_threshold)
            left_rows.push_back(idx);
        else
            right_rows.push_back(idx);
    }
    rows.clear();
    rows.shrink_to_fit();

    ctx.tree.nodes[node_index].feature = best_feature;
    ctx.tree.nodes[node_index].threshold = best_threshold;
    const int left = grow_node(ctx, std::move(left_rows), depth + 1);
    const int right = grow_node(ctx, std::move(right_rows), depth + 1);
    ctx.tree.nodes[node_index].left = left;
    ctx.tree.nodes[node_index].right = right;
    return node_index;
}

RegressionTree grow_tree(const Matrix& X, std::span<const double> y, std::span<const double> w,
                         const TrainConfig& cfg, Rng& rng, std::vector<int> rows) {
    RegressionTree tree;
    GrowContext ctx{X, y, w, resolve_mtry(cfg, X.cols()), cfg.min_node_size, cfg.max_depth,
                    rng, tree};
    grow_node(ctx, std::move(rows), 0);
    return tree;
}

// Adds the leaf shares of the trees selected by `use_tree` to acc.
// Returns the number of trees used; acc then carries that much total mass.
template <typename Pred>
int accumulate_leaf_weights(const QuantileForest& forest, std::span<const double> x,
                            std::vector<double>& acc, Pred use_tree) {
    int used = 0;
    for (std::size_t b = 0; b < forest.trees.size(); ++b) {
        if (!use_tree(b)) continue;
        const RegressionTree& tree = forest.trees[b];
        const int leaf = tree.route(x);
        const TreeNode& node = tree.nodes[static_cast<std::size_t>(leaf)];
        for (std::int64_t k = node.leaf_begin; k < node.leaf_end; ++k)
            acc[static_cast<std::size_t>(tree.leaf_items[static_cast<std::size_t>(k)])] +=
                tree.leaf_weights[static_cast<std::size_t>(k)];
        ++used;
    }
    return used;
}

// Walks the outcome-ordered accumulated masses and returns the tau-quantile.
double quantile_from_acc(const QuantileForest& forest, const std::vector<double>& acc,
                         int trees_used, double tau) {
    const double total = static_cast<double>(trees_used);
    const double target = tau * total - kCumSlack * total;
    double cum = 0.0;
    double last_with_mass = 0.0;
    bool seen = false;
    for (int idx : forest.order_by_y) {
        const double mass = acc[static_cast<std::size_t>(idx)];
        if (mass <= 0.0) continue;
        cum += mass;
        last_with_mass = forest.train_outcomes[static_cast<std::size_t>(idx)];
        seen = true;
        if (cum >= target) return last_with_mass;
    }
    if (!seen) throw NumericalDegeneracy("forest: conditional distribution carries no mass");
    return last_with_mass;
}

void check_query(const QuantileForest& forest, std::span<const double> x) {
    if (x.size() != forest.n_features())
        throw InvalidInput("forest: query dimension mismatch");
}

} // namespace

int RegressionTree::route(std::span<const double> x) const {
    int cur = 0;
    while (nodes[static_cast<std::size_t>(cur)].feature >= 0) {
        const TreeNode& nd = nodes[static_cast<std::size_t>(cur)];
        cur = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    return cur;
}

void QuantileForest::finalize() {
    const std::size_t n = train_outcomes.size();
    if (trees.empty()) throw InvalidInput("forest: no trees");
    for (const auto& tree : trees) {
        if (tree.nodes.empty()) throw InvalidInput("forest: empty tree");
        for (int idx : tree.leaf_items)
            if (idx < 0 || static_cast<std::size_t>(idx) >= n)
                throw InvalidInput("forest: leaf references an out-of-range training index");
    }
    order_by_y.resize(n);
    std::iota(order_by_y.begin(), order_by_y.end(), 0);
    std::stable_sort(order_by_y.begin(), order_by_y.end(), [&](int a, int b) {
        return train_outcomes[static_cast<std::size_t>(a)] <
               train_outcomes[static_cast<std::size_t>(b)];
    });
}

double StepCdf::value_at(double y) const {
    const auto it = std::upper_bound(atoms.begin(), atoms.end(), y);
    if (it == atoms.begin()) return 0.0;
    return cum_weights[static_cast<std::size_t>(it - atoms.begin()) - 1];
}

double StepCdf::quantile(double tau) const {
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidInput("StepCdf::quantile: tau outside (0,1)");
    const double target = tau - kCumSlack;
    for (std::size_t i = 0; i < atoms.size(); ++i)
        if (cum_weights[i] >= target) return atoms[i];
    return atoms.back();
}

RegressionTree fit_tree(const Matrix& X, std::span<const double> y,
                        std::span<const double> case_weights, const TrainConfig& config,
                        Rng& rng) {
    validate_training_inputs(X, y, case_weights, config);
    std::vector<int> rows(X.rows());
    std::iota(rows.begin(), rows.end(), 0);
    return grow_tree(X, y, case_weights, config, rng, std::move(rows));
}

QuantileForest fit_forest(const Matrix& X, std::span<const double> y,
                          std::span<const double> case_weights, const TrainConfig& config,
                          std::vector<std::string> feature_names) {
    validate_training_inputs(X, y, case_weights, config);
    const std::size_t n = X.rows(), p = X.cols();

    if (feature_names.empty()) {
        feature_names.reserve(p);
        for (std::size_t j = 0; j < p; ++j) feature_names.push_back("x" + std::to_string(j + 1));
    }
    if (feature_names.size() != p)
        throw InvalidInput("fit_forest: feature name count mismatch");

    QuantileForest forest;
    forest.config = config;
    forest.train_outcomes.assign(y.begin(), y.end());
    forest.train_weights.assign(case_weights.begin(), case_weights.end());
    forest.feature_names = std::move(feature_names);
    const int B = config.n_trees;
    forest.trees.resize(static_cast<std::size_t>(B));
    forest.oob.assign(static_cast<std::size_t>(B), std::vector<std::uint8_t>(n, 0));

    auto fit_one = [&](int b) {
        Rng rng = make_rng(config.seed, static_cast<std::uint64_t>(b) + 1);
        std::vector<int> rows;
        if (config.bootstrap) {
            const auto m = static_cast<std::size_t>(
                std::ceil(config.bootstrap_fraction * static_cast<double>(n)));
            rows.resize(std::max<std::size_t>(1, m));
            std::vector<std::uint8_t> inbag(n, 0);
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            for (auto& r : rows) {
                const std::size_t k = pick(rng);
                r = static_cast<int>(k);
                inbag[k] = 1;
            }
            auto& oob_b = forest.oob[static_cast<std::size_t>(b)];
            for (std::size_t i = 0; i < n; ++i) oob_b[i] = inbag[i] ? 0 : 1;
        } else {
            rows.resize(n);
            std::iota(rows.begin(), rows.end(), 0);
        }
        forest.trees[static_cast<std::size_t>(b)] =
            grow_tree(X, y, case_weights, config, rng, std::move(rows));
    };

    const int threads = std::min(resolve_threads(config.n_threads), B);
    if (threads <= 1) {
        for (int b = 0; b < B; ++b) fit_one(b);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&, t]() {
                for (int b = t; b < B; b += threads) fit_one(b);
            });
        }
        for (auto& th : pool) th.join();
    }

    forest.finalize();
    return forest;
}

StepCdf conditional_cdf(const QuantileForest& forest, std::span<const double> x) {
    check_query(forest, x);
    std::vector<double> acc(forest.n_train(), 0.0);
    const int used = accumulate_leaf_weights(forest, x, acc, [](std::size_t) { return true; });

    StepCdf cdf;
    double cum = 0.0;
    for (int idx : forest.order_by_y) {
        const double mass = acc[static_cast<std::size_t>(idx)] / static_cast<double>(used);
        if (mass <= 0.0) continue;
        cum += mass;
        const double yv = forest.train_outcomes[static_cast<std::size_t>(idx)];
        if (!cdf.atoms.empty() && cdf.atoms.back() == yv)
            cdf.cum_weights.back() = cum;
        else {
            cdf.atoms.push_back(yv);
            cdf.cum_weights.push_back(cum);
        }
    }
    if (cdf.atoms.empty())
        throw NumericalDegeneracy("conditional_cdf: no mass at the query point");
    // Remove the accumulated rounding drift so the last step is exactly 1.
    for (double& c : cdf.cum_weights) c /= cum;
    return cdf;
}

double predict_quantile(const QuantileForest& forest, std::span<const double> x, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidInput("predict_quantile: tau outside (0,1)");
    check_query(forest, x);
    std::vector<double> acc(forest.n_train(), 0.0);
    const int used = accumulate_leaf_weights(forest, x, acc, [](std::size_t) { return true; });
    return quantile_from_acc(forest, acc, used, tau);
}

std::vector<double> predict_quantiles(const QuantileForest& forest, const Matrix& X, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidInput("predict_quantiles: tau outside (0,1)");
    if (X.cols() != forest.n_features())
        throw InvalidInput("predict_quantiles: feature dimension mismatch");
    std::vector<double> out(X.rows());
    std::vector<double> acc(forest.n_train());
    for (std::size_t r = 0; r < X.rows(); ++r) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const int used =
            accumulate_leaf_weights(forest, X.row(r), acc, [](std::size_t) { return true; });
        out[r] = quantile_from_acc(forest, acc, used, tau);
    }
    return out;
}

bool oob_predict_quantile(const QuantileForest& forest, const Matrix& X, int row, double tau,
                          double& out) {
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidInput("oob_predict_quantile: tau outside (0,1)");
    if (row < 0 || static_cast<std::size_t>(row) >= X.rows())
        throw InvalidInput("oob_predict_quantile: row out of range");
    if (X.cols() != forest.n_features())
        throw InvalidInput("oob_predict_quantile: feature dimension mismatch");

    std::vector<double> acc(forest.n_train(), 0.0);
    const auto r = static_cast<std::size_t>(row);
    const int used = accumulate_leaf_weights(
        forest, X.row(r), acc, [&](std::size_t b) { return forest.oob[b][r] != 0; });
    if (used == 0) return false;
    out = quantile_from_acc(forest, acc, used, tau);
    return true;
}

std::vector<double> permutation_importance(const QuantileForest& forest, const Matrix& X,
                                           std::span<const double> y, double tau,
                                           int n_repeats, std::uint64_t seed) {
    if (!(tau > 0.0 && tau < 1.0))
        throw InvalidInput("permutation_importance: tau outside (0,1)");
    if (n_repeats < 1) throw InvalidInput("permutation_importance: n_repeats must be >= 1");
    const std::size_t n = X.rows(), p = X.cols();
    if (n != forest.n_train() || y.size() != n)
        throw InvalidInput("permutation_importance: dataset does not match the forest");
    if (p != forest.n_features())
        throw InvalidInput("permutation_importance: feature dimension mismatch");

    // Rows with at least one tree that left them out of bag.
    std::vector<std::size_t> evaluable;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t b = 0; b < forest.trees.size(); ++b) {
            if (forest.oob[b][i]) {
                evaluable.push_back(i);
                break;
            }
        }
    }
    if (evaluable.empty())
        throw InsufficientOob("permutation_importance: no out-of-bag observations");

    std::vector<double> acc(n);
    auto oob_quantile = [&](std::size_t i, std::span<const double> xq) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const int used = accumulate_leaf_weights(
            forest, xq, acc, [&](std::size_t b) { return forest.oob[b][i] != 0; });
        return quantile_from_acc(forest, acc, used, tau);
    };

    double m_base = 0.0;
    for (std::size_t i : evaluable) {
        const double r = y[i] - oob_quantile(i, X.row(i));
        m_base += r * r;
    }

    std::vector<double> importance(p, 0.0);
    std::vector<double> xq(p);
    std::vector<std::size_t> perm;
    for (std::size_t f = 0; f < p; ++f) {
        double m_star_sum = 0.0;
        for (int rep = 0; rep < n_repeats; ++rep) {
            Rng rng = make_rng(seed, f * static_cast<std::uint64_t>(n_repeats) +
                                         static_cast<std::uint64_t>(rep) + 1);
            perm = evaluable;
            std::shuffle(perm.begin(), perm.end(), rng);

            double ssr = 0.0;
            for (std::size_t j = 0; j < evaluable.size(); ++j) {
                const std::size_t i = evaluable[j];
                const auto xrow = X.row(i);
                std::copy(xrow.begin(), xrow.end(), xq.begin());
                xq[f] = X(perm[j], f);
                const double r = y[i] - oob_quantile(i, xq);
                ssr += r * r;
            }
            m_star_sum += ssr;
        }
        importance[f] = m_star_sum / static_cast<double>(n_repeats) - m_base;
    }
    return importance;
}

} // namespace qrfx
