#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "qrfx/errors.hpp"
#include "qrfx/forest.hpp"
#include "qrfx/matrix.hpp"
#include "qrfx/rng.hpp"

using namespace qrfx;

namespace {

Matrix column(const std::vector<double>& v) {
    Matrix X(v.size(), 1);
    for (std::size_t i = 0; i < v.size(); ++i) X(i, 0) = v[i];
    return X;
}

std::vector<double> ones(std::size_t n) { return std::vector<double>(n, 1.0); }

// Random regression problem with signal on the first feature.
struct Problem {
    Matrix X;
    std::vector<double> y;
};

Problem make_problem(std::size_t n, std::size_t p, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix X(n, p);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) X(i, j) = gauss(rng);
        y[i] = 10.0 * X(i, 0) + 0.1 * gauss(rng);
    }
    return {std::move(X), std::move(y)};
}

} // namespace

TEST_CASE("constant features grow a single root leaf") {
    Matrix X(12, 2, 3.5);
    std::vector<double> y(12);
    std::iota(y.begin(), y.end(), 0.0);
    auto w = ones(12);

    TrainConfig cfg;
    cfg.n_trees = 1;
    cfg.bootstrap = false;
    cfg.min_node_size = 1;
    cfg.mtry = 2;
    auto forest = fit_forest(X, y, w, cfg);

    REQUIRE(forest.trees.size() == 1);
    CHECK(forest.trees[0].nodes.size() == 1);
    CHECK(forest.trees[0].nodes[0].feature == -1);
    // Twelve distinct outcomes, equal shares.
    CHECK(forest.trees[0].leaf_items.size() == 12);
    for (double lw : forest.trees[0].leaf_weights) CHECK(lw == doctest::Approx(1.0 / 12.0));
}

TEST_CASE("a perfectly separating feature is split on and yields pure children") {
    const std::size_t n = 20;
    Matrix X(n, 2);
    std::vector<double> y(n);
    Rng rng = make_rng(7);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        X(i, 0) = i < n / 2 ? 0.1 : 0.9;
        X(i, 1) = unif(rng); // irrelevant noise column
        y[i] = X(i, 0) > 0.5 ? 1.0 : 0.0;
    }
    auto w = ones(n);

    TrainConfig cfg;
    cfg.n_trees = 1;
    cfg.bootstrap = false;
    cfg.min_node_size = 1;
    cfg.mtry = 2;
    auto forest = fit_forest(X, y, w, cfg);

    const auto& tree = forest.trees[0];
    REQUIRE(tree.nodes.size() >= 3);
    CHECK(tree.nodes[0].feature == 0);
    CHECK(tree.nodes[0].threshold == doctest::Approx(0.5));

    // Both conditional distributions are degenerate: every quantile hits the
    // single class value.
    const std::vector<double> lo{0.1, 0.5}, hi{0.9, 0.5};
    for (double tau : {0.01, 0.3, 0.5, 0.9, 0.99}) {
        CHECK(predict_quantile(forest, lo, tau) == 0.0);
        CHECK(predict_quantile(forest, hi, tau) == 1.0);
    }
}

TEST_CASE("min_node_size >= n forces a single leaf") {
    auto [X, y] = make_problem(30, 3, 11);
    auto w = ones(30);
    TrainConfig cfg;
    cfg.n_trees = 1;
    cfg.bootstrap = false;
    cfg.min_node_size = 30;
    auto forest = fit_forest(X, y, w, cfg);
    CHECK(forest.trees[0].nodes.size() == 1);
}

TEST_CASE("max_depth = 0 keeps the root a leaf even when a split exists") {
    auto [X, y] = make_problem(30, 3, 13);
    auto w = ones(30);
    TrainConfig cfg;
    cfg.n_trees = 1;
    cfg.bootstrap = false;
    cfg.min_node_size = 1;
    cfg.max_depth = 0;
    auto forest = fit_forest(X, y, w, cfg);
    CHECK(forest.trees[0].nodes.size() == 1);
}

TEST_CASE("fit_forest with one unbootstrapped tree reproduces fit_tree") {
    auto [X, y] = make_problem(40, 3, 21);
    auto w = ones(40);
    TrainConfig cfg;
    cfg.n_trees = 1;
    cfg.bootstrap = false;
    cfg.min_node_size = 3;
    cfg.seed = 99;

    auto forest = fit_forest(X, y, w, cfg);
    Rng rng = make_rng(cfg.seed, 1); // the forest derives tree b from stream b+1
    auto tree = fit_tree(X, y, w, cfg, rng);

    const auto& ft = forest.trees[0];
    REQUIRE(ft.nodes.size() == tree.nodes.size());
    for (std::size_t k = 0; k < ft.nodes.size(); ++k) {
        CHECK(ft.nodes[k].feature == tree.nodes[k].feature);
        CHECK(ft.nodes[k].threshold == tree.nodes[k].threshold);
        CHECK(ft.nodes[k].left == tree.nodes[k].left);
        CHECK(ft.nodes[k].right == tree.nodes[k].right);
        CHECK(ft.nodes[k].leaf_begin == tree.nodes[k].leaf_begin);
        CHECK(ft.nodes[k].leaf_end == tree.nodes[k].leaf_end);
    }
    CHECK(ft.leaf_items == tree.leaf_items);
    CHECK(ft.leaf_weights == tree.leaf_weights);
}

TEST_CASE("training is deterministic for a fixed seed and bit-identical across thread counts") {
    auto [X, y] = make_problem(60, 4, 31);
    auto w = ones(60);
    TrainConfig cfg;
    cfg.n_trees = 16;
    cfg.min_node_size = 2;
    cfg.seed = 1234;

    cfg.n_threads = 1;
    auto f1 = fit_forest(X, y, w, cfg);
    auto f2 = fit_forest(X, y, w, cfg);
    cfg.n_threads = 4;
    auto f4 = fit_forest(X, y, w, cfg);

    Rng qrng = make_rng(5);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int q = 0; q < 12; ++q) {
        std::vector<double> x(4);
        for (auto& v : x) v = gauss(qrng);
        for (double tau : {0.1, 0.5, 0.9}) {
            const double a = predict_quantile(f1, x, tau);
            CHECK(a == predict_quantile(f2, x, tau));
            CHECK(a == predict_quantile(f4, x, tau));
        }
    }
    for (std::size_t b = 0; b < f1.trees.size(); ++b) {
        CHECK(f1.trees[b].nodes.size() == f4.trees[b].nodes.size());
        CHECK(f1.oob[b] == f4.oob[b]);
    }
}

TEST_CASE("bootstrap leaves roughly a 1/e fraction of rows out of bag") {
    auto [X, y] = make_problem(200, 2, 41);
    auto w = ones(200);
    TrainConfig cfg;
    cfg.n_trees = 50;
    cfg.min_node_size = 10;
    cfg.seed = 7;
    auto forest = fit_forest(X, y, w, cfg);

    double total = 0.0;
    for (const auto& mask : forest.oob)
        total += std::accumulate(mask.begin(), mask.end(), 0.0);
    const double frac = total / (200.0 * 50.0);
    // (1 - 1/n)^n -> exp(-1) ~ 0.368
    CHECK(frac > 0.33);
    CHECK(frac < 0.41);
}

TEST_CASE("single-leaf conditional distribution is the empirical one") {
    auto X = column({0.0, 0.0, 0.0, 0.0});
    std::vector<double> y{1.0, 2.0, 3.0, 4.0};
    auto w = ones(4);
    TrainConfig cfg;
    cfg.n_trees = 1;
    cfg.bootstrap = false;
    cfg.min_node_size = 4;
    auto forest = fit_forest(X, y, w, cfg);

    const std::vector<double> x{0.0};
    auto cdf = conditional_cdf(forest, x);
    REQUIRE(cdf.atoms == std::vector<double>{1.0, 2.0, 3.0, 4.0});
    CHECK(cdf.value_at(0.0) == 0.0);
    CHECK(cdf.value_at(2.5) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(cdf.value_at(4.0) == 1.0);
    CHECK(cdf.cum_weights.back() == 1.0);
}

TEST_CASE("averaging identical trees changes nothing") {
    auto [X, y] = make_problem(35, 2, 51);
    auto w = ones(35);
    TrainConfig one;
    one.n_trees = 1;
    one.bootstrap = false;
    one.min_node_size = 2;
    one.mtry = 2; // mtry = p: the feature draw is irrelevant, trees identical
    TrainConfig many = one;
    many.n_trees = 9; // without bootstrap all trees see the same rows

    auto fa = fit_forest(X, y, w, one);
    auto fb = fit_forest(X, y, w, many);
    for (std::size_t i = 0; i < X.rows(); ++i)
        for (double tau : {0.2, 0.5, 0.8})
            CHECK(predict_quantile(fa, X.row(i), tau) == predict_quantile(fb, X.row(i), tau));
}

TEST_CASE("hand-assembled forest: weight averaging across trees") {
    // Tree A puts mass 1/2 on outcomes 1 and 2; tree B puts all mass on 3.
    // The ensemble mixes them equally: {1: 0.25, 2: 0.25, 3: 0.5}.
    QuantileForest forest;
    forest.train_outcomes = {1.0, 2.0, 3.0};
    forest.train_weights = {1.0, 1.0, 1.0};
    forest.feature_names = {"x1"};

    RegressionTree a;
    a.nodes.push_back(TreeNode{-1, 0.0, -1, -1, 0, 2});
    a.leaf_items = {0, 1};
    a.leaf_weights = {0.5, 0.5};
    RegressionTree b;
    b.nodes.push_back(TreeNode{-1, 0.0, -1, -1, 0, 1});
    b.leaf_items = {2};
    b.leaf_weights = {1.0};
    forest.trees = {a, b};
    forest.oob.assign(2, std::vector<std::uint8_t>(3, 0));
    forest.finalize();

    const std::vector<double> x{0.0};
    auto cdf = conditional_cdf(forest, x);
    REQUIRE(cdf.atoms == std::vector<double>{1.0, 2.0, 3.0});
    CHECK(cdf.cum_weights[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(cdf.cum_weights[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(cdf.cum_weights[2] == 1.0);

    CHECK(predict_quantile(forest, x, 0.2) == 1.0);
    CHECK(predict_quantile(forest, x, 0.25) == 1.0);  // boundary: F(1) = 0.25 >= tau
    CHECK(predict_quantile(forest, x, 0.26) == 2.0);
    CHECK(predict_quantile(forest, x, 0.5) == 2.0);
    CHECK(predict_quantile(forest, x, 0.51) == 3.0);
    CHECK(predict_quantile(forest, x, 0.999) == 3.0);
}

TEST_CASE("quantiles are nondecreasing in tau and bounded by training extremes") {
    auto [X, y] = make_problem(50, 3, 61);
    auto w = ones(50);
    TrainConfig cfg;
    cfg.n_trees = 25;
    cfg.min_node_size = 3;
    auto forest = fit_forest(X, y, w, cfg);

    const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
    Rng rng = make_rng(8);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int q = 0; q < 10; ++q) {
        std::vector<double> x{gauss(rng), gauss(rng), gauss(rng)};
        double prev = -std::numeric_limits<double>::infinity();
        for (double tau = 0.02; tau < 1.0; tau += 0.02) {
            const double v = predict_quantile(forest, x, tau);
            CHECK(v >= prev);
            CHECK(v >= *ymin);
            CHECK(v <= *ymax);
            prev = v;
        }
    }
}

TEST_CASE("quantile agrees with a direct scan of the conditional distribution") {
    auto [X, y] = make_problem(40, 3, 71);
    auto w = ones(40);
    TrainConfig cfg;
    cfg.n_trees = 30;
    cfg.min_node_size = 2;
    auto forest = fit_forest(X, y, w, cfg);

    Rng rng = make_rng(9);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int q = 0; q < 10; ++q) {
        std::vector<double> x{gauss(rng), gauss(rng), gauss(rng)};
        auto cdf = conditional_cdf(forest, x);
        for (double tau : {0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95}) {
            double expected = cdf.atoms.back();
            for (std::size_t k = 0; k < cdf.atoms.size(); ++k) {
                if (cdf.cum_weights[k] >= tau - 1e-9) {
                    expected = cdf.atoms[k];
                    break;
                }
            }
            CHECK(predict_quantile(forest, x, tau) == expected);
        }
    }
}

TEST_CASE("single leaf of n equal-weight points reproduces the type-1 sample quantile") {
    std::vector<double> y{3.0, 1.0, 4.0, 1.5, 9.0, 2.6, 5.3};
    const std::size_t n = y.size();
    auto X = column(std::vector<double>(n, 0.0));
    auto w = ones(n);
    TrainConfig cfg;
    cfg.n_trees = 1;
    cfg.bootstrap = false;
    cfg.min_node_size = 100;
    auto forest = fit_forest(X, y, w, cfg);

    std::vector<double> sorted = y;
    std::sort(sorted.begin(), sorted.end());
    const std::vector<double> x{0.0};

    std::vector<double> taus{0.001, 0.999, 0.5};
    for (std::size_t k = 1; k <= n; ++k) {
        taus.push_back(static_cast<double>(k) / static_cast<double>(n));
        taus.push_back(static_cast<double>(k) / static_cast<double>(n) - 0.003);
        taus.push_back(static_cast<double>(k) / static_cast<double>(n) + 0.003);
    }
    for (double tau : taus) {
        if (!(tau > 0.0 && tau < 1.0)) continue;
        const auto pos = static_cast<std::size_t>(std::max(
            0.0, std::ceil(tau * static_cast<double>(n) - 1e-9) - 1.0));
        CHECK(predict_quantile(forest, x, tau) == sorted[pos]);
    }
}

TEST_CASE("batch prediction matches per-row prediction") {
    auto [X, y] = make_problem(45, 3, 81);
    auto w = ones(45);
    TrainConfig cfg;
    cfg.n_trees = 20;
    cfg.min_node_size = 3;
    auto forest = fit_forest(X, y, w, cfg);

    auto batch = predict_quantiles(forest, X, 0.3);
    REQUIRE(batch.size() == X.rows());
    for (std::size_t i = 0; i < X.rows(); ++i)
        CHECK(batch[i] == predict_quantile(forest, X.row(i), 0.3));
}

TEST_CASE("out-of-bag prediction uses only trees that skipped the row") {
    auto [X, y] = make_problem(80, 2, 91);
    auto w = ones(80);
    TrainConfig cfg;
    cfg.n_trees = 40;
    cfg.min_node_size = 5;
    auto forest = fit_forest(X, y, w, cfg);

    int evaluable = 0;
    for (std::size_t i = 0; i < X.rows(); ++i) {
        double q;
        if (oob_predict_quantile(forest, X, static_cast<int>(i), 0.5, q)) {
            ++evaluable;
            const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
            CHECK(q >= *ymin);
            CHECK(q <= *ymax);
        }
    }
    CHECK(evaluable > 60); // with B = 40 nearly every row has an OOB tree

    // Without bootstrapping nothing is ever out of bag.
    cfg.bootstrap = false;
    auto full = fit_forest(X, y, w, cfg);
    double q;
    for (std::size_t i = 0; i < X.rows(); ++i)
        CHECK_FALSE(oob_predict_quantile(full, X, static_cast<int>(i), 0.5, q));
}

TEST_CASE("duplicating a row is equivalent to doubling its case weight") {
    const std::size_t n = 16;
    Rng rng = make_rng(101);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix X(n, 2);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        X(i, 0) = gauss(rng);
        X(i, 1) = gauss(rng);
        y[i] = X(i, 0) + 0.05 * gauss(rng);
    }

    // Weighted version: row 0 counts twice.
    std::vector<double> w(n, 1.0);
    w[0] = 2.0;

    // Duplicated version: row 0 appears twice.
    Matrix X2(n + 1, 2);
    std::vector<double> y2(n + 1);
    for (std::size_t i = 0; i < n; ++i) {
        X2(i, 0) = X(i, 0);
        X2(i, 1) = X(i, 1);
        y2[i] = y[i];
    }
    X2(n, 0) = X(0, 0);
    X2(n, 1) = X(0, 1);
    y2[n] = y[0];

    TrainConfig cfg;
    cfg.n_trees = 1;
    cfg.bootstrap = false;
    cfg.min_node_size = 1;
    cfg.mtry = 2;
    auto fw = fit_forest(X, y, w, cfg);
    auto fd = fit_forest(X2, y2, ones(n + 1), cfg);

    for (std::size_t i = 0; i < n; ++i)
        for (double tau : {0.1, 0.5, 0.9})
            CHECK(predict_quantile(fw, X.row(i), tau) ==
                  doctest::Approx(predict_quantile(fd, X.row(i), tau)).epsilon(1e-9));
}

TEST_CASE("unequal case weights shift the leaf distribution") {
    auto X = column({0.0, 0.0});
    std::vector<double> y{1.0, 2.0};
    std::vector<double> w{1.0, 3.0};
    TrainConfig cfg;
    cfg.n_trees = 1;
    cfg.bootstrap = false;
    cfg.min_node_size = 10;
    auto forest = fit_forest(X, y, w, cfg);

    const std::vector<double> x{0.0};
    auto cdf = conditional_cdf(forest, x);
    REQUIRE(cdf.atoms == std::vector<double>{1.0, 2.0});
    CHECK(cdf.cum_weights[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(cdf.cum_weights[1] == 1.0);
    CHECK(predict_quantile(forest, x, 0.25) == 1.0);
    CHECK(predict_quantile(forest, x, 0.3) == 2.0);
    CHECK(predict_quantile(forest, x, 0.9) == 2.0);
}

TEST_CASE("permutation importance ranks the signal feature first") {
    const std::size_t n = 120, p = 4;
    Rng rng = make_rng(111);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix X(n, p);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) X(i, j) = gauss(rng);
        y[i] = 10.0 * X(i, 0) + 0.5 * gauss(rng);
    }
    auto w = ones(n);
    TrainConfig cfg;
    cfg.n_trees = 60;
    cfg.min_node_size = 5;
    cfg.seed = 3;
    auto forest = fit_forest(X, y, w, cfg);

    auto imp = permutation_importance(forest, X, y, 0.5, 3, 42);
    REQUIRE(imp.size() == p);
    CHECK(imp[0] > 0.0);
    for (std::size_t j = 1; j < p; ++j) CHECK(imp[0] > imp[j]);

    // Deterministic given the seed.
    auto imp2 = permutation_importance(forest, X, y, 0.5, 3, 42);
    CHECK(imp == imp2);
}

TEST_CASE("importance requires out-of-bag information") {
    auto [X, y] = make_problem(30, 2, 121);
    auto w = ones(30);
    TrainConfig cfg;
    cfg.n_trees = 4;
    cfg.bootstrap = false;
    auto forest = fit_forest(X, y, w, cfg);
    CHECK_THROWS_AS(permutation_importance(forest, X, y, 0.5, 2, 1), InsufficientOob);
}

TEST_CASE("invalid inputs are rejected") {
    auto [X, y] = make_problem(20, 2, 131);
    auto w = ones(20);
    TrainConfig cfg;
    cfg.n_trees = 2;

    SUBCASE("empty matrix") {
        Matrix empty(0, 0);
        std::vector<double> none;
        CHECK_THROWS_AS(fit_forest(empty, none, none, cfg), InvalidInput);
    }
    SUBCASE("outcome length mismatch") {
        std::vector<double> bad(19, 0.0);
        CHECK_THROWS_AS(fit_forest(X, bad, w, cfg), InvalidInput);
    }
    SUBCASE("negative weight") {
        auto bad = w;
        bad[3] = -1.0;
        CHECK_THROWS_AS(fit_forest(X, y, bad, cfg), InvalidInput);
    }
    SUBCASE("all-zero weights") {
        std::vector<double> zeros(20, 0.0);
        CHECK_THROWS_AS(fit_forest(X, y, zeros, cfg), InvalidInput);
    }
    SUBCASE("mtry out of range") {
        auto bad = cfg;
        bad.mtry = 3;
        CHECK_THROWS_AS(fit_forest(X, y, w, bad), InvalidConfig);
    }
    SUBCASE("bad bootstrap fraction") {
        auto bad = cfg;
        bad.bootstrap_fraction = 0.0;
        CHECK_THROWS_AS(fit_forest(X, y, w, bad), InvalidConfig);
    }
    SUBCASE("tau bounds and query dimension") {
        auto forest = fit_forest(X, y, w, cfg);
        const std::vector<double> x{0.0, 0.0};
        const std::vector<double> short_x{0.0};
        CHECK_THROWS_AS(predict_quantile(forest, x, 0.0), InvalidInput);
        CHECK_THROWS_AS(predict_quantile(forest, x, 1.0), InvalidInput);
        CHECK_THROWS_AS(predict_quantile(forest, short_x, 0.5), InvalidInput);
        CHECK_THROWS_AS(conditional_cdf(forest, short_x), InvalidInput);
    }
}
