// CSV ingestion/emission, model persistence, and the command-line front end.
// CLI cases invoke the real binary (path injected as QRFX_CLI_PATH) through
// std::system and inspect the artifacts it writes.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "doctest.h"
#include "json.hpp"

#include "qrfx/csv.hpp"
#include "qrfx/dynamic.hpp"
#include "qrfx/errors.hpp"
#include "qrfx/evaluation.hpp"
#include "qrfx/fmqrf.hpp"
#include "qrfx/forest.hpp"
#include "qrfx/model_io.hpp"
#include "qrfx/rng.hpp"
#include "qrfx/simulation.hpp"

using namespace qrfx;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "qrfx_io_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream file(path, std::ios::binary);
    REQUIRE(file.good());
    std::ostringstream buf;
    buf << file.rdbuf();
    return buf.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(QRFX_CLI_PATH) + " " + args;
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// Mirrors the planted-shift panel used by the mixture tests: outcome
// shift[i] + 2 x1 + 0.3 noise with two covariates.
PanelDataset two_shift_panel(std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t n_units = 40, t_len = 5, p = 2;
    PanelDataset panel;
    panel.X = Matrix(n_units * t_len, p);
    panel.y.resize(n_units * t_len);
    panel.unit.resize(n_units * t_len);
    panel.unit_start.resize(n_units + 1);
    std::size_t r = 0;
    for (std::size_t i = 0; i < n_units; ++i) {
        panel.unit_start[i] = r;
        const double shift = i < 20 ? 5.0 : -5.0;
        for (std::size_t t = 0; t < t_len; ++t, ++r) {
            for (std::size_t c = 0; c < p; ++c) panel.X(r, c) = gauss(rng);
            panel.y[r] = shift + 2.0 * panel.X(r, 0) + 0.3 * gauss(rng);
            panel.unit[r] = static_cast<int>(i);
        }
        panel.unit_labels.push_back("u" + std::to_string(i));
    }
    panel.unit_start[n_units] = r;
    panel.feature_names = {"x1", "x2"};
    return panel;
}

} // namespace

TEST_CASE("format_double: shortest exact round trip") {
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(1.0) == "1");
    CHECK(format_double(-2.5) == "-2.5");
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unif(-1e8, 1e8);
    for (int i = 0; i < 5000; ++i) {
        double v = unif(rng);
        if (i % 3 == 0) v = std::ldexp(v, (i % 600) - 300);
        const std::string s = format_double(v);
        CHECK(std::strtod(s.c_str(), nullptr) == v);
    }
}

TEST_CASE("read_csv/write_csv: quoting, CRLF, and error context") {
    const fs::path dir = fresh_dir("csv_core");

    SUBCASE("quoted cells round-trip") {
        const std::vector<std::string> header = {"a", "b,b", "c"};
        const std::vector<std::vector<std::string>> rows = {
            {"plain", "has,comma", "has\"quote"},
            {"", "x", "wrap\",\"mid"},
        };
        const std::string path = (dir / "q.csv").string();
        write_csv(path, header, rows);
        const CsvTable t = read_csv(path);
        CHECK(t.header == header);
        CHECK(t.rows == rows);
    }

    SUBCASE("CRLF line endings are tolerated") {
        const std::string path = (dir / "crlf.csv").string();
        std::ofstream(path, std::ios::binary) << "a,b\r\n1,2\r\n";
        const CsvTable t = read_csv(path);
        REQUIRE(t.n_rows() == 1);
        CHECK(t.rows[0][1] == "2");
    }

    SUBCASE("errors name the line and column") {
        auto message_of = [](auto&& fn) {
            try {
                fn();
            } catch (const DataError& e) {
                return std::string(e.what());
            }
            return std::string("<no error>");
        };
        const std::string ragged = (dir / "ragged.csv").string();
        std::ofstream(ragged) << "a,b\n1,2,3\n";
        CHECK(message_of([&] { read_csv(ragged); }).find("expected 2 columns, found 3") !=
              std::string::npos);

        const std::string dup = (dir / "dup.csv").string();
        std::ofstream(dup) << "a,a\n1,2\n";
        CHECK(message_of([&] { read_csv(dup); }).find("duplicate column name 'a'") !=
              std::string::npos);

        const std::string unterminated = (dir / "unterminated.csv").string();
        std::ofstream(unterminated) << "a\n\"oops\n";
        CHECK(message_of([&] { read_csv(unterminated); }).find("unterminated") !=
              std::string::npos);

        const std::string badnum = (dir / "badnum.csv").string();
        std::ofstream(badnum) << "unit,time,y,x1\nu0,1,zap,0.5\n";
        const std::string msg = message_of([&] { read_panel_csv(badnum); });
        CHECK(msg.find("column 'y'") != std::string::npos);
        CHECK(msg.find(":2") != std::string::npos); // header is line 1

        CHECK_THROWS_AS(read_csv((dir / "missing.csv").string()), IoError);
        const std::string empty = (dir / "empty.csv").string();
        std::ofstream(empty) << "";
        CHECK_THROWS_AS(read_csv(empty), DataError);
    }
}

TEST_CASE("panel CSV: grouping, time ordering, exact round trip") {
    const fs::path dir = fresh_dir("csv_panel");
    const std::string path = (dir / "p.csv").string();
    std::ofstream(path) << "unit,time,y,x1,x2\n"
                           "b,2,1.5,0.25,-1\n"
                           "a,1,2.5,0.5,3\n"
                           "b,1,0.5,0.125,4\n"
                           "a,2,3.5,0.75,5\n";
    const PanelDataset p = read_panel_csv(path);
    REQUIRE(p.n_units() == 2);
    CHECK(p.unit_labels == std::vector<std::string>{"b", "a"}); // first appearance
    CHECK(p.y == std::vector<double>{0.5, 1.5, 2.5, 3.5});      // time-sorted per unit
    CHECK(p.feature_names == std::vector<std::string>{"x1", "x2"});
    CHECK(p.X(0, 0) == 0.125);
    CHECK(p.X(1, 1) == -1.0);
    CHECK(p.unit_start == std::vector<std::size_t>{0, 2, 4});

    const std::string path2 = (dir / "p2.csv").string();
    write_panel_csv(path2, p);
    const PanelDataset p2 = read_panel_csv(path2);
    CHECK(p2.y == p.y);
    CHECK(p2.X.data() == p.X.data());
    CHECK(p2.unit_labels == p.unit_labels);
    CHECK(p2.unit_start == p.unit_start);

    // A panel of awkward doubles survives the text round trip bit-for-bit.
    Rng rng = make_rng(404);
    std::normal_distribution<double> gauss(0.0, 1.0);
    PanelDataset wild;
    wild.X = Matrix(30, 2);
    wild.y.resize(30);
    wild.unit.resize(30);
    wild.unit_start = {0, 10, 20, 30};
    wild.unit_labels = {"alpha", "beta,comma", "gamma\"quote"};
    wild.feature_names = {"f1", "f2"};
    for (std::size_t r = 0; r < 30; ++r) {
        wild.X(r, 0) = std::ldexp(gauss(rng), static_cast<int>(r) * 20 - 300);
        wild.X(r, 1) = gauss(rng) / 3.0;
        wild.y[r] = gauss(rng) * 1e-7;
        wild.unit[r] = static_cast<int>(r / 10);
    }
    const std::string path3 = (dir / "wild.csv").string();
    write_panel_csv(path3, wild);
    const PanelDataset w2 = read_panel_csv(path3);
    CHECK(w2.y == wild.y);
    CHECK(w2.X.data() == wild.X.data());
    CHECK(w2.unit_labels == wild.unit_labels);
}

TEST_CASE("high/low frequency CSV loaders") {
    const fs::path dir = fresh_dir("csv_freq");

    SUBCASE("high-frequency within index and date passthrough") {
        const std::string path = (dir / "h.csv").string();
        std::ofstream(path) << "date,period,y,r1\n"
                               "2020-01-01,100,0.5,1\n"
                               "2020-01-02,100,0.6,2\n"
                               "2020-02-01,101,0.7,3\n";
        const HighFreqCsv h = read_high_freq_csv(path);
        CHECK(h.series.within == std::vector<std::int64_t>{0, 1, 0});
        CHECK(h.series.period == std::vector<std::int64_t>{100, 100, 101});
        CHECK(h.dates == std::vector<std::string>{"2020-01-01", "2020-01-02", "2020-02-01"});
        CHECK(h.series.x_names == std::vector<std::string>{"r1"});
        CHECK(h.series.y == std::vector<double>{0.5, 0.6, 0.7});

        const std::string bad = (dir / "h_bad.csv").string();
        std::ofstream(bad) << "date,period,y\nd1,5,0.1\nd2,4,0.2\n";
        CHECK_THROWS_AS(read_high_freq_csv(bad), DataError);
    }

    SUBCASE("low-frequency strictly increasing periods") {
        const std::string path = (dir / "l.csv").string();
        std::ofstream(path) << "period,z1,z2\n1,0.5,2\n3,0.25,4\n";
        const LowFreqSeries low = read_low_freq_csv(path);
        CHECK(low.periods == std::vector<std::int64_t>{1, 3});
        CHECK(low.names == std::vector<std::string>{"z1", "z2"});
        CHECK(low.values(1, 1) == 4.0);

        const std::string bad = (dir / "l_bad.csv").string();
        std::ofstream(bad) << "period,z\n2,1\n2,2\n";
        CHECK_THROWS_AS(read_low_freq_csv(bad), DataError);
    }
}

TEST_CASE("model persistence: loaded models predict bit-identically") {
    const fs::path dir = fresh_dir("model_io");

    SUBCASE("plain forest") {
        Rng rng = make_rng(42);
        std::normal_distribution<double> gauss(0.0, 1.0);
        const std::size_t n = 120, p = 3;
        Matrix X(n, p);
        std::vector<double> y(n);
        const std::vector<double> w(n, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < p; ++j) X(i, j) = gauss(rng);
            y[i] = 3.0 * X(i, 0) + gauss(rng);
        }
        TrainConfig config;
        config.n_trees = 25;
        config.seed = 9;
        const QuantileForest fitted = fit_forest(X, y, w, config);
        const std::string path = (dir / "f.json").string();
        save_forest_model(path, fitted);
        CHECK(model_type(path) == "qrf");
        const QuantileForest loaded = load_forest_model(path);
        CHECK(loaded.feature_names == fitted.feature_names);
        CHECK(loaded.train_outcomes == fitted.train_outcomes);
        for (std::size_t i = 0; i < 25; ++i) {
            for (double tau : {0.05, 0.5, 0.9}) {
                CHECK(predict_quantile(loaded, X.row(i), tau) ==
                      predict_quantile(fitted, X.row(i), tau));
            }
        }
        // Serialization is a fixpoint: save(load(file)) is byte-identical.
        const std::string path2 = (dir / "f2.json").string();
        save_forest_model(path2, loaded);
        CHECK(slurp(path) == slurp(path2));
    }

    SUBCASE("mixture model with unit labels") {
        const SimulatedPanel sim =
            simulate_scenario(Scenario::from_name("NN-S"), 15, 5, {3}, 5);
        EmConfig config;
        config.k = 3;
        config.max_iter = 4;
        config.forest.n_trees = 15;
        config.forest.min_node_size = 20;
        config.forest.seed = 3;
        const FmQrfModel fitted = fit_fm_qrf(sim.train, 0.5, config);
        const std::string path = (dir / "m.json").string();
        save_fmqrf_model(path, fitted);
        CHECK(model_type(path) == "fmqrf");
        const FmQrfModel loaded = load_fmqrf_model(path);
        CHECK(loaded.state.alpha == fitted.state.alpha);
        CHECK(loaded.state.pi == fitted.state.pi);
        CHECK(loaded.state.W.data() == fitted.state.W.data());
        CHECK(loaded.state.V.data() == fitted.state.V.data());
        CHECK(loaded.map_component == fitted.map_component);
        CHECK(loaded.loglik_trace == fitted.loglik_trace);
        CHECK(loaded.unit_labels == fitted.unit_labels);
        CHECK(loaded.converged == fitted.converged);
        for (std::size_t r = 0; r < 12; ++r) {
            CHECK(predict_fm_qrf(loaded, sim.test.X.row(r), sim.test.unit[r]) ==
                  predict_fm_qrf(fitted, sim.test.X.row(r), sim.test.unit[r]));
            CHECK(predict_fm_qrf(loaded, sim.test.X.row(r)) ==
                  predict_fm_qrf(fitted, sim.test.X.row(r)));
        }
    }

    SUBCASE("dynamic result") {
        Rng rng = make_rng(11);
        std::normal_distribution<double> gauss(0.0, 1.0);
        const std::size_t n = 130;
        MixedFrequencyTable table;
        table.X = Matrix(n, 2);
        table.y.resize(n);
        table.period.resize(n);
        table.within.resize(n);
        table.feature_names = {"f1", "f2"};
        for (std::size_t r = 0; r < n; ++r) {
            table.X(r, 0) = gauss(rng);
            table.X(r, 1) = gauss(rng);
            table.y[r] = 0.8 * table.X(r, 0) + gauss(rng);
            table.period[r] = static_cast<std::int64_t>(r / 21);
            table.within[r] = static_cast<std::int64_t>(r % 21);
        }
        DynamicConfig config;
        config.refit_every = 30;
        config.caviar_restarts = 2;
        config.forest.n_trees = 10;
        config.forest.seed = 4;
        const DynamicFitResult fitted = fit_dynamic_midas_qrf(table, 0.1, config);
        const std::string path = (dir / "d.json").string();
        save_dynamic_model(path, fitted);
        CHECK(model_type(path) == "dynamic");
        const DynamicFitResult loaded = load_dynamic_model(path);
        CHECK(loaded.predictions == fitted.predictions);
        CHECK(loaded.lag_quant == fitted.lag_quant);
        CHECK(loaded.refit_rows == fitted.refit_rows);
        CHECK(loaded.warmup == fitted.warmup);
        CHECK(loaded.caviar.params.beta0 == fitted.caviar.params.beta0);
        CHECK(loaded.caviar.forecasts == fitted.caviar.forecasts);
        const std::vector<double> xq = {0.4, -0.3, fitted.lag_quant.back()};
        CHECK(predict_quantile(loaded.final_forest, xq, 0.1) ==
              predict_quantile(fitted.final_forest, xq, 0.1));
    }

    SUBCASE("envelope validation") {
        Matrix X(40, 1);
        std::vector<double> y(40);
        for (std::size_t i = 0; i < 40; ++i) {
            X(i, 0) = static_cast<double>(i);
            y[i] = static_cast<double>(i % 7);
        }
        TrainConfig config;
        config.n_trees = 3;
        const QuantileForest forest = fit_forest(X, y, std::vector<double>(40, 1.0), config);
        const std::string path = (dir / "v.json").string();
        save_forest_model(path, forest);
        CHECK_THROWS_AS(load_fmqrf_model(path), DataError); // wrong type

        const std::string bad_magic = (dir / "bad_magic.json").string();
        std::ofstream(bad_magic) << "{\"magic\":\"nope\",\"version\":\"1.0.0\","
                                    "\"type\":\"qrf\",\"payload\":{}}";
        CHECK_THROWS_AS(load_forest_model(bad_magic), DataError);

        const std::string bad_version = (dir / "bad_version.json").string();
        std::ofstream(bad_version) << "{\"magic\":\"qrfx-model\",\"version\":\"2.0.0\","
                                      "\"type\":\"qrf\",\"payload\":{}}";
        CHECK_THROWS_AS(load_forest_model(bad_version), DataError);

        const std::string not_json = (dir / "not_json.json").string();
        std::ofstream(not_json) << "definitely not json";
        CHECK_THROWS_AS(model_type(not_json), DataError);

        CHECK_THROWS_AS(load_forest_model((dir / "absent.json").string()), IoError);
    }
}

TEST_CASE("cli: simulate is deterministic and lossless at 17 digits") {
    const fs::path dir = fresh_dir("cli_sim");
    const std::string flags = "simulate --scenario TT-L --seed 7 --units 10 --t-train 4 "
                              "--test-sizes 3,5 --tau 0.1,0.9 --out " +
                              dir.string();
    REQUIRE(run_cli(flags) == 0);
    const std::string train1 = slurp(dir / "train.csv");
    const std::string test1 = slurp(dir / "test.csv");
    const std::string oracle1 = slurp(dir / "oracle.csv");
    const std::string echo1 = slurp(dir / "simulate-config.txt");

    REQUIRE(run_cli(flags) == 0); // identical resolved config, same artifacts
    CHECK(slurp(dir / "train.csv") == train1);
    CHECK(slurp(dir / "test.csv") == test1);
    CHECK(slurp(dir / "oracle.csv") == oracle1);
    CHECK(slurp(dir / "simulate-config.txt") == echo1);

    // The CSV written by the CLI reproduces the in-process generator exactly.
    const SimulatedPanel sim =
        simulate_scenario(Scenario::from_name("TT-L"), 10, 4, {3, 5}, 7);
    const PanelDataset train = read_panel_csv((dir / "train.csv").string());
    CHECK(train.y == sim.train.y);
    CHECK(train.X.data() == sim.train.X.data());
    CHECK(train.unit_labels == sim.train.unit_labels);
    const PanelDataset test = read_panel_csv((dir / "test.csv").string());
    CHECK(test.y == sim.test.y);
    CHECK(test.X.data() == sim.test.X.data());

    // Oracle rows carry the theoretical quantiles bit-for-bit.
    const CsvTable oracle = read_csv((dir / "oracle.csv").string());
    REQUIRE(oracle.n_rows() == 2 * sim.test.n_obs());
    const std::size_t id_col = oracle.column("row_id");
    const std::size_t tau_col = oracle.column("tau");
    const std::size_t q_col = oracle.column("theoretical_quantile");
    for (std::size_t r = 0; r < oracle.n_rows(); ++r) {
        const auto row = static_cast<std::size_t>(parse_cell_int(oracle, r, id_col));
        const double tau = parse_cell(oracle, r, tau_col);
        CHECK(parse_cell(oracle, r, q_col) ==
              theoretical_quantile(sim, sim.test.unit[row], sim.test.X.row(row), tau));
    }
}

TEST_CASE("cli: fit-fmqrf on the two-shift panel reports mass points near +-5") {
    const fs::path dir = fresh_dir("cli_fmqrf");
    const PanelDataset panel = two_shift_panel(83);
    write_panel_csv((dir / "toy.csv").string(), panel);

    REQUIRE(run_cli("fit-fmqrf --train " + (dir / "toy.csv").string() +
                    " --k 2 --tau 0.5 --trees 50 --min-node 5 --max-iter 15 --tol 1e-3 "
                    "--seed 19 --out " +
                    dir.string()) == 0);
    const nlohmann::json report = nlohmann::json::parse(slurp(dir / "fmqrf-report.json"));
    REQUIRE(report.at("results").size() == 1);
    std::vector<double> alpha =
        report.at("results")[0].at("alpha").get<std::vector<double>>();
    REQUIRE(alpha.size() == 2);
    std::sort(alpha.begin(), alpha.end());
    CHECK(std::abs(alpha[0] + 5.0) < 0.5);
    CHECK(std::abs(alpha[1] - 5.0) < 0.5);

    // The CLI fit is the library fit: same panel, same config, same alphas.
    EmConfig config;
    config.k = 2;
    config.max_iter = 15;
    config.loglik_tol = 1e-3;
    config.forest.n_trees = 50;
    config.forest.min_node_size = 5;
    config.forest.seed = 19;
    const FmQrfModel direct = fit_fm_qrf(panel, 0.5, config);
    std::vector<double> direct_alpha = direct.state.alpha;
    std::sort(direct_alpha.begin(), direct_alpha.end());
    CHECK(alpha[0] == direct_alpha[0]);
    CHECK(alpha[1] == direct_alpha[1]);

    // The saved model file predicts identically to the in-process model.
    const FmQrfModel loaded = load_fmqrf_model((dir / "fmqrf-model.json").string());
    for (std::size_t r = 0; r < 10; ++r) {
        CHECK(predict_fm_qrf(loaded, panel.X.row(r), panel.unit[r]) ==
              predict_fm_qrf(direct, panel.X.row(r), panel.unit[r]));
    }
}

TEST_CASE("cli: backtest report matches direct library calls bit-for-bit") {
    const fs::path dir = fresh_dir("cli_backtest");
    Rng rng = make_rng(31);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t n = 400;
    const double tau = 0.01;
    std::vector<double> y(n), q(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = gauss(rng);
        q[i] = -2.326347874040841 + 0.1 * gauss(rng); // noisy 1% VaR line
    }
    std::vector<std::vector<std::string>> pred_rows, outcome_rows;
    for (std::size_t i = 0; i < n; ++i) {
        pred_rows.push_back({std::to_string(i), format_double(tau), format_double(q[i])});
        outcome_rows.push_back({format_double(y[i])});
    }
    write_csv((dir / "preds.csv").string(), {"row_id", "tau", "prediction"}, pred_rows);
    write_csv((dir / "outcomes.csv").string(), {"y"}, outcome_rows);

    REQUIRE(run_cli("backtest --predictions " + (dir / "preds.csv").string() +
                    " --outcomes " + (dir / "outcomes.csv").string() +
                    " --tau 0.01 --out " + dir.string()) == 0);

    const nlohmann::json report = nlohmann::json::parse(slurp(dir / "backtest-report.json"));
    REQUIRE(report.at("results").size() == 1);
    const nlohmann::json& cli = report.at("results")[0];
    const BacktestReport direct = backtest(y, q, tau);
    const nlohmann::json expected = nlohmann::json::parse(backtest_report_to_json(direct));
    CHECK(cli == expected);
    CHECK(cli.at("uc").at("p_value").get<double>() == direct.uc.p_value);
    CHECK(cli.at("cc").at("statistic").get<double>() == direct.cc.statistic);
    CHECK(cli.at("dq").at("p_value").get<double>() == direct.dq.p_value);
}

TEST_CASE("cli: fit, predict, and importance share one model artifact") {
    const fs::path dir = fresh_dir("cli_qrf");
    const SimulatedPanel sim = simulate_scenario(Scenario::from_name("NN-S"), 12, 6, {4}, 3);
    write_panel_csv((dir / "train.csv").string(), sim.train);
    write_panel_csv((dir / "test.csv").string(), sim.test);

    REQUIRE(run_cli("fit-qrf --train " + (dir / "train.csv").string() + " --test " +
                    (dir / "test.csv").string() +
                    " --tau 0.25,0.75 --trees 30 --seed 5 --out " + dir.string()) == 0);
    const std::string fit_preds = slurp(dir / "qrf-predictions.csv");

    // Re-running with the identical resolved config reproduces every artifact.
    const std::string model1 = slurp(dir / "qrf-model.json");
    REQUIRE(run_cli("fit-qrf --train " + (dir / "train.csv").string() + " --test " +
                    (dir / "test.csv").string() +
                    " --tau 0.25,0.75 --trees 30 --seed 5 --out " + dir.string()) == 0);
    CHECK(slurp(dir / "qrf-model.json") == model1);
    CHECK(slurp(dir / "qrf-predictions.csv") == fit_preds);

    // predict from the saved model matches the fit-time predictions.
    REQUIRE(run_cli("predict --model " + (dir / "qrf-model.json").string() + " --data " +
                    (dir / "test.csv").string() + " --tau 0.25,0.75 --out " +
                    dir.string()) == 0);
    const CsvTable a = read_csv((dir / "predictions.csv").string());
    const CsvTable b = read_csv((dir / "qrf-predictions.csv").string());
    CHECK(a.rows == b.rows);

    // importance runs against the training data and ranks every feature.
    REQUIRE(run_cli("importance --model " + (dir / "qrf-model.json").string() + " --data " +
                    (dir / "train.csv").string() + " --tau 0.5 --repeats 2 --seed 4 --out " +
                    dir.string()) == 0);
    const CsvTable imp = read_csv((dir / "importance.csv").string());
    CHECK(imp.n_rows() == 3);
    const nlohmann::json imp_report =
        nlohmann::json::parse(slurp(dir / "importance-report.json"));
    CHECK(imp_report.at("results")[0].at("ranking").size() == 3);
}

TEST_CASE("cli: exit codes and config files") {
    const fs::path dir = fresh_dir("cli_errors");

    SUBCASE("unknown flag is a usage error") {
        CHECK(run_cli("fit-qrf --definitely-not-a-flag 2>/dev/null") == 1);
        CHECK(run_cli("not-a-command 2>/dev/null") == 1);
    }

    SUBCASE("malformed csv is a data error") {
        const std::string bad = (dir / "bad.csv").string();
        std::ofstream(bad) << "unit,time,y,x1\nu0,1,zap,0.5\n";
        CHECK(run_cli("fit-qrf --train " + bad + " --out " + dir.string() +
                      " 2>/dev/null") == 2);
        CHECK(run_cli("fit-qrf --train " + (dir / "absent.csv").string() + " --out " +
                      dir.string() + " 2>/dev/null") == 2);
    }

    SUBCASE("invalid tau is a usage error") {
        const SimulatedPanel sim =
            simulate_scenario(Scenario::from_name("NN-S"), 6, 4, {2}, 1);
        write_panel_csv((dir / "train.csv").string(), sim.train);
        CHECK(run_cli("fit-qrf --train " + (dir / "train.csv").string() +
                      " --tau 1.5 --out " + dir.string() + " 2>/dev/null") == 1);
    }

    SUBCASE("config file fills options, flags win") {
        const SimulatedPanel sim =
            simulate_scenario(Scenario::from_name("NN-S"), 6, 4, {2}, 1);
        write_panel_csv((dir / "train.csv").string(), sim.train);
        const std::string conf = (dir / "run.conf").string();
        std::ofstream(conf) << "# comment line\n"
                               "train=" << (dir / "train.csv").string() << "\n"
                               "tau=0.3,0.7\n"
                               "trees=12\n"
                               "seed=21\n";
        REQUIRE(run_cli("fit-qrf --config " + conf + " --seed 99 --out " + dir.string()) ==
                0);
        const std::string echo = slurp(dir / "fit-qrf-config.txt");
        CHECK(echo.find("seed=99\n") != std::string::npos);   // flag overrides config
        CHECK(echo.find("tau=0.3,0.7\n") != std::string::npos);
        CHECK(echo.find("trees=12\n") != std::string::npos);

        std::ofstream((dir / "bad.conf").string()) << "bogus_key=1\n";
        CHECK(run_cli("fit-qrf --train " + (dir / "train.csv").string() + " --config " +
                      (dir / "bad.conf").string() + " 2>/dev/null") == 1);
    }

    SUBCASE("missing required input is a usage error") {
        CHECK(run_cli("fit-qrf 2>/dev/null") == 1);
    }
}

TEST_CASE("cli: mixed-frequency pipeline runs end to end") {
    const fs::path dir = fresh_dir("cli_midas");

    // Low-frequency factor and a high-frequency price/return series.
    Rng rng = make_rng(17);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int n_periods = 14, per = 12;
    std::vector<std::vector<std::string>> low_rows;
    std::vector<double> z(n_periods);
    double state = 0.0;
    for (int p = 0; p < n_periods; ++p) {
        state = 0.7 * state + gauss(rng);
        z[p] = state;
        low_rows.push_back({std::to_string(p), format_double(state)});
    }
    write_csv((dir / "low.csv").string(), {"period", "z1"}, low_rows);

    std::vector<std::vector<std::string>> high_rows;
    double price = 100.0;
    int day = 0;
    for (int p = 0; p < n_periods; ++p) {
        const double vol = 0.5 + 0.3 * std::abs(p > 0 ? z[p - 1] : 0.0);
        for (int d = 0; d < per; ++d, ++day) {
            const double ret = vol * gauss(rng);
            price *= std::exp(ret / 100.0);
            high_rows.push_back({"d" + std::to_string(day), std::to_string(p),
                                 format_double(ret), format_double(price)});
        }
    }
    write_csv((dir / "high.csv").string(), {"date", "period", "y", "price"}, high_rows);

    REQUIRE(run_cli("fit-midas-qrf --high " + (dir / "high.csv").string() + " --low " +
                    (dir / "low.csv").string() +
                    " --lags 6 --log-returns price --tau 0.05 --trees 20 --seed 2 --out " +
                    dir.string()) == 0);
    const nlohmann::json midas_report =
        nlohmann::json::parse(slurp(dir / "midas-qrf-report.json"));
    CHECK(midas_report.at("n_rows").get<int>() > 0);
    const auto features = midas_report.at("feature_names").get<std::vector<std::string>>();
    REQUIRE(features.size() == 2);
    CHECK(features[0] == "price_lag1");
    CHECK(features[1].find("z1") == 0); // filter column derived from z1

    // The aligned table the CLI writes matches the model's training rows.
    const CsvTable aligned = read_csv((dir / "midas-aligned.csv").string());
    CHECK(aligned.n_rows() == midas_report.at("n_rows").get<std::size_t>());

    REQUIRE(run_cli("fit-dynamic --high " + (dir / "high.csv").string() + " --low " +
                    (dir / "low.csv").string() +
                    " --lags 6 --omega2 3 --log-returns price --tau 0.05 --trees 15 "
                    "--min-warmup 40 --refit-every 40 --caviar-restarts 2 --seed 4 --out " +
                    dir.string()) == 0);
    const nlohmann::json dyn_report =
        nlohmann::json::parse(slurp(dir / "dynamic-report.json"));
    const nlohmann::json& entry = dyn_report.at("results")[0];
    CHECK(entry.at("warmup").get<int>() >= 40);
    CHECK(entry.at("caviar").contains("beta1"));
    CHECK(entry.at("oos_backtest").contains("uc"));

    // The dynamic model file reloads into the identical expanding-window path.
    const DynamicFitResult loaded =
        load_dynamic_model((dir / "dynamic-model.json").string());
    const CsvTable preds = read_csv((dir / "dynamic-predictions.csv").string());
    REQUIRE(preds.n_rows() == loaded.predictions.size());
    const std::size_t pcol = preds.column("prediction");
    for (std::size_t r = 0; r < preds.n_rows(); ++r) {
        CHECK(parse_cell(preds, r, pcol) == loaded.predictions[r]);
    }
}
