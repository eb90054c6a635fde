#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qrfx/matrix.hpp"
#include "qrfx/rng.hpp"

namespace qrfx {

// Hyper-parameters for a single tree or a forest.
struct TrainConfig {
    int n_trees = 200;
    // Features tried per split. 0 selects the regression default ceil(p/3).
    int mtry = 0;
    int min_node_size = 5;
    // Maximum tree depth; -1 means unlimited.
    int max_depth = -1;
    double bootstrap_fraction = 1.0;
    // Test hook: when false every tree trains on the full sample and no
    // observation is out-of-bag.
    bool bootstrap = true;
    std::uint64_t seed = 1;
    int n_threads = 1;
};

struct TreeNode {
    int feature = -1; // -1 marks a terminal node
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    // Terminal nodes own a slice [leaf_begin, leaf_end) of the tree's
    // leaf_items / leaf_weights pools.
    std::int64_t leaf_begin = -1;
    std::int64_t leaf_end = -1;
};

// A fitted CART regression tree. Terminal nodes hold the distinct training
// indices routed there along with their within-node weight shares
// (case weight times bootstrap multiplicity, normalized to sum 1 per node).
struct RegressionTree {
    std::vector<TreeNode> nodes;
    std::vector<int> leaf_items;
    std::vector<double> leaf_weights;

    // Index of the terminal node x falls into.
    int route(std::span<const double> x) const;
};

// A bagged ensemble supporting weighted conditional CDF queries.
struct QuantileForest {
    std::vector<RegressionTree> trees;
    std::vector<double> train_outcomes;
    std::vector<double> train_weights;
    // oob[b][i] is 1 when training row i is absent from tree b's bootstrap
    // sample.
    std::vector<std::vector<std::uint8_t>> oob;
    std::vector<std::string> feature_names;
    TrainConfig config;

    // Training rows ordered by outcome value; cached so CDF queries can walk
    // atoms in sorted order without re-sorting.
    std::vector<int> order_by_y;

    std::size_t n_train() const { return train_outcomes.size(); }
    std::size_t n_features() const { return feature_names.size(); }

    // Rebuilds order_by_y and checks cross-references; used after direct
    // construction (deserialization) and at the end of fitting.
    void finalize();
};

// Weighted empirical CDF: right-continuous step function over sorted atoms.
struct StepCdf {
    std::vector<double> atoms;       // strictly increasing outcome values
    std::vector<double> cum_weights; // nondecreasing, final entry 1

    // F(y): cumulative weight of atoms <= y.
    double value_at(double y) const;
    // Left-continuous generalized inverse inf{y : F(y) >= tau}.
    double quantile(double tau) const;
};

// Fits one CART regression tree by weighted SSE splitting. Candidate
// thresholds are midpoints between consecutive distinct sorted feature
// values; ties in SSE are broken toward the lowest feature index and then
// the lowest threshold. Splitting stops when a node has fewer than
// 2*min_node_size observations, the depth limit is reached, or no candidate
// strictly reduces the SSE.
RegressionTree fit_tree(const Matrix& X, std::span<const double> y,
                        std::span<const double> case_weights, const TrainConfig& config,
                        Rng& rng);

// Fits n_trees trees on independent bootstrap resamples of size
// ceil(bootstrap_fraction * n) drawn with replacement. Each tree consumes an
// RNG stream derived from (seed, tree index), so the result is identical for
// any thread count. Empty feature_names generates x1..xp.
QuantileForest fit_forest(const Matrix& X, std::span<const double> y,
                          std::span<const double> case_weights, const TrainConfig& config,
                          std::vector<std::string> feature_names = {});

// Weighted conditional CDF at x: each tree routes x to one terminal node and
// contributes its members' outcome atoms with weight (node share)/B.
StepCdf conditional_cdf(const QuantileForest& forest, std::span<const double> x);

// Conditional tau-quantile at x: inf{y : F_hat(y|x) >= tau}.
double predict_quantile(const QuantileForest& forest, std::span<const double> x, double tau);

// Row-wise quantile predictions.
std::vector<double> predict_quantiles(const QuantileForest& forest, const Matrix& X, double tau);

// Out-of-bag quantile prediction for training row i, using only the trees
// whose bootstrap sample excludes i. Returns false when no tree leaves row i
// out-of-bag (the prediction is then unset).
bool oob_predict_quantile(const QuantileForest& forest, const Matrix& X, int row, double tau,
                          double& out);

// Permutation importance at quantile level tau. Baseline m is the sum of
// squared OOB residuals (y_i - Q_tau_oob(x_i))^2 over rows with at least one
// OOB tree; for each feature the OOB column is permuted (n_repeats independent
// permutations, averaged) and the importance is the SSR increase m* - m, so
// informative features score positive. Throws InsufficientOob when no row has
// an OOB tree.
std::vector<double> permutation_importance(const QuantileForest& forest, const Matrix& X,
                                           std::span<const double> y, double tau,
                                           int n_repeats, std::uint64_t seed);

} // namespace qrfx
