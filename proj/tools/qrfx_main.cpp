// qrfx: command-line front end for quantile regression forests on
// mixed-frequency and longitudinal data.
//
// Subcommands: simulate, fit-qrf, fit-midas-qrf, fit-dynamic, fit-fmqrf,
// predict, backtest, importance, bootstrap. Every run writes a resolved-config
// echo (<command>-config.txt) next to its artifacts, and runs with identical
// resolved configs produce identical artifacts.
//
// Exit codes: 0 success, 1 usage error (bad flags or parameters), 2 data error
// (unreadable or malformed inputs, degenerate fits).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "qrfx/csv.hpp"
#include "qrfx/dynamic.hpp"
#include "qrfx/errors.hpp"
#include "qrfx/evaluation.hpp"
#include "qrfx/fmqrf.hpp"
#include "qrfx/forest.hpp"
#include "qrfx/matrix.hpp"
#include "qrfx/midas.hpp"
#include "qrfx/model_io.hpp"
#include "qrfx/simulation.hpp"
#include "qrfx/study.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qrfx;

namespace {

// ---------------------------------------------------------------------------
// small utilities
// ---------------------------------------------------------------------------

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += format_double(v[i]);
    }
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

std::string join_strings(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += v[i];
    }
    return out;
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream file(path, std::ios::binary);
    if (!file) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    file << content;
    file.flush();
    if (!file) {
        throw IoError("failed writing '" + path.string() + "'");
    }
}

void write_report(const fs::path& dir, const std::string& name, const json& report) {
    write_text(dir / name, report.dump(2) + "\n");
}

void validate_taus(const std::vector<double>& taus) {
    if (taus.empty()) {
        throw InvalidInput("at least one tau is required");
    }
    for (double t : taus) {
        if (!std::isfinite(t) || t <= 0.0 || t >= 1.0) {
            throw InvalidInput("tau must lie strictly inside (0, 1)");
        }
    }
}

int resolve_threads(int threads) {
    if (threads < 0) {
        throw InvalidInput("--threads must be >= 0");
    }
    if (threads == 0) {
        const unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }
    return threads;
}

// Type-1 empirical quantile: inf{y : F_n(y) >= tau}.
double empirical_quantile(std::vector<double> values, double tau) {
    if (values.empty()) {
        throw InvalidInput("empirical quantile of an empty sample");
    }
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    auto idx = static_cast<std::ptrdiff_t>(std::ceil(tau * n - 1e-9)) - 1;
    idx = std::max<std::ptrdiff_t>(idx, 0);
    return values[static_cast<std::size_t>(idx)];
}

// Resolved-config echo: key=value lines, one per option, written next to the
// artifacts. Identical echoes imply identical artifacts.
class ConfigEcho {
public:
    explicit ConfigEcho(std::string command) { add("command", std::move(command)); }

    void add(const std::string& key, std::string value) {
        lines_ += key + "=" + value + "\n";
    }
    void add(const std::string& key, const char* value) { add(key, std::string(value)); }
    void add(const std::string& key, double value) { add(key, format_double(value)); }
    void add(const std::string& key, int value) { add(key, std::to_string(value)); }
    void add(const std::string& key, std::uint64_t value) { add(key, std::to_string(value)); }
    void add(const std::string& key, bool value) { add(key, value ? "true" : "false"); }
    void add(const std::string& key, const std::vector<double>& value) {
        add(key, join_doubles(value));
    }
    void add(const std::string& key, const std::vector<int>& value) {
        add(key, join_ints(value));
    }
    void add(const std::string& key, const std::vector<std::string>& value) {
        add(key, join_strings(value));
    }

    void write(const fs::path& dir, const std::string& command) const {
        write_text(dir / (command + "-config.txt"), lines_);
    }

private:
    std::string lines_;
};

json metrics_to_json(const AccuracyMetrics& m) {
    json j;
    if (m.mae) j["mae"] = *m.mae;
    if (m.mse) j["mse"] = *m.mse;
    j["ramp"] = m.ramp;
    if (m.pseudo_r2) j["pseudo_r2"] = *m.pseudo_r2;
    if (m.pct_loss) j["pct_loss"] = *m.pct_loss;
    j["avg_check_loss"] = m.avg_check_loss;
    return j;
}

json backtest_to_json(const BacktestReport& report) {
    // Parse the library's own rendering so the CLI report carries exactly the
    // numbers a direct library call would produce.
    return json::parse(backtest_report_to_json(report));
}

// ---------------------------------------------------------------------------
// shared option bundles
// ---------------------------------------------------------------------------

struct CommonOpts {
    std::string out = ".";
    std::uint64_t seed = 1;
    std::vector<double> taus;
    int threads = 0;
    std::string config_file;
};

void require_option(const std::string& value, const char* flag) {
    if (value.empty()) {
        throw InvalidInput(std::string(flag) + " is required (flag or config file)");
    }
}

// Plain key=value config file: keys are long option names without dashes,
// '#' starts a comment. Values fill in options the command line left unset.
void apply_config_file(CLI::App* sub, const std::string& path) {
    std::ifstream file(path);
    if (!file) {
        throw IoError("cannot open config file '" + path + "'");
    }
    auto trim = [](std::string s) {
        const char* ws = " \t\r";
        const auto begin = s.find_first_not_of(ws);
        if (begin == std::string::npos) return std::string();
        return s.substr(begin, s.find_last_not_of(ws) - begin + 1);
    };
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(file, line)) {
        ++lineno;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw InvalidInput(path + ":" + std::to_string(lineno) +
                               ": expected key=value");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) {
            throw InvalidInput(path + ":" + std::to_string(lineno) + ": empty key");
        }
        if (key == "config") continue;
        CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (opt == nullptr) {
            throw InvalidInput(path + ": unknown config key '" + key + "' for command '" +
                               sub->get_name() + "'");
        }
        if (opt->count() > 0) continue; // command-line flags take precedence
        opt->add_result(value);
        opt->run_callback();
    }
}

struct ForestOpts {
    int trees = 200;
    int mtry = 0;
    int min_node = 5;
    int max_depth = -1;
    double bootstrap_fraction = 1.0;
    bool no_bootstrap = false;

    TrainConfig to_config(std::uint64_t seed, int threads) const {
        TrainConfig c;
        c.n_trees = trees;
        c.mtry = mtry;
        c.min_node_size = min_node;
        c.max_depth = max_depth;
        c.bootstrap_fraction = bootstrap_fraction;
        c.bootstrap = !no_bootstrap;
        c.seed = seed;
        c.n_threads = threads;
        return c;
    }

    void echo(ConfigEcho& e) const {
        e.add("trees", trees);
        e.add("mtry", mtry);
        e.add("min-node", min_node);
        e.add("max-depth", max_depth);
        e.add("bootstrap-fraction", bootstrap_fraction);
        e.add("no-bootstrap", no_bootstrap);
    }
};

struct EmOpts {
    int k = 2;
    int max_iter = 50;
    double tol = 1e-4;
    std::string m_step = "closed";

    EmConfig to_config(const ForestOpts& forest, std::uint64_t seed, int threads) const {
        EmConfig c;
        c.k = k;
        c.max_iter = max_iter;
        c.loglik_tol = tol;
        c.m_step = m_step == "numeric" ? MStepKind::nelder_mead : MStepKind::closed_form;
        c.forest = forest.to_config(seed, threads);
        return c;
    }

    void echo(ConfigEcho& e) const {
        e.add("k", k);
        e.add("max-iter", max_iter);
        e.add("tol", tol);
        e.add("m-step", m_step);
    }
};

struct MidasOpts {
    int lags = 12;
    double omega1 = 1.0;
    std::optional<double> omega2;
    std::vector<std::string> log_return_cols;
    std::vector<std::string> diff_cols;

    void echo(ConfigEcho& e) const {
        e.add("lags", lags);
        e.add("omega1", omega1);
        e.add("omega2", omega2 ? format_double(*omega2) : std::string("grid"));
        e.add("log-returns", log_return_cols);
        e.add("diff", diff_cols);
    }
};

void add_common(CLI::App* sub, CommonOpts& c, std::vector<double> default_taus) {
    c.taus = std::move(default_taus);
    sub->add_option("--out", c.out, "Output directory (created if missing)")
        ->capture_default_str();
    sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
    sub->add_option("--tau", c.taus, "Quantile levels, comma separated")
        ->delimiter(',')
        ->capture_default_str();
    sub->add_option("--threads", c.threads, "Worker threads (0 = auto)")
        ->capture_default_str();
    sub->add_option("--config", c.config_file,
                    "Plain key=value config file; flags override it");
}

void add_forest(CLI::App* sub, ForestOpts& f) {
    sub->add_option("--trees", f.trees, "Number of trees")->capture_default_str();
    sub->add_option("--mtry", f.mtry, "Features tried per split (0 = ceil(p/3))")
        ->capture_default_str();
    sub->add_option("--min-node", f.min_node, "Minimum terminal node size")
        ->capture_default_str();
    sub->add_option("--max-depth", f.max_depth, "Maximum tree depth (-1 = unlimited)")
        ->capture_default_str();
    sub->add_option("--bootstrap-fraction", f.bootstrap_fraction,
                    "Bootstrap sample size as a fraction of n")
        ->capture_default_str();
    sub->add_flag("--no-bootstrap", f.no_bootstrap,
                  "Train every tree on the full sample");
}

void add_em(CLI::App* sub, EmOpts& e) {
    sub->add_option("--k", e.k, "Number of mixture components")->capture_default_str();
    sub->add_option("--max-iter", e.max_iter, "Maximum EM iterations")
        ->capture_default_str();
    sub->add_option("--tol", e.tol, "Log-likelihood convergence tolerance")
        ->capture_default_str();
    sub->add_option("--m-step", e.m_step, "M-step flavor")
        ->check(CLI::IsMember({"closed", "numeric"}))
        ->capture_default_str();
}

void add_midas(CLI::App* sub, MidasOpts& m) {
    sub->add_option("--lags", m.lags, "Low-frequency lags entering the filter")
        ->capture_default_str();
    sub->add_option("--omega1", m.omega1, "First Beta-lag shape parameter")
        ->capture_default_str();
    sub->add_option("--omega2", m.omega2,
                    "Fix the second shape parameter (skips the grid + PCA step)");
    sub->add_option("--log-returns", m.log_return_cols,
                    "High-frequency columns replaced by 100 * delta log")
        ->delimiter(',');
    sub->add_option("--diff", m.diff_cols,
                    "High-frequency columns replaced by first differences")
        ->delimiter(',');
}

fs::path prepare_out_dir(const std::string& out) {
    fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create output directory '" + out + "': " + ec.message());
    }
    return dir;
}

// Model artifact name: base.json for a single tau, base-tau<t>.json otherwise.
std::string model_file_name(const std::string& base, const std::vector<double>& taus,
                            double tau) {
    if (taus.size() == 1) return base + ".json";
    return base + "-tau" + format_double(tau) + ".json";
}

// Reorders a panel's feature columns to match `wanted` by name.
Matrix map_features(const PanelDataset& data, const std::vector<std::string>& wanted,
                    const std::string& data_path) {
    std::vector<std::size_t> index(wanted.size());
    for (std::size_t j = 0; j < wanted.size(); ++j) {
        auto it = std::find(data.feature_names.begin(), data.feature_names.end(), wanted[j]);
        if (it == data.feature_names.end()) {
            throw DataError(data_path + ": missing feature column '" + wanted[j] + "'");
        }
        index[j] = static_cast<std::size_t>(it - data.feature_names.begin());
    }
    Matrix out(data.n_obs(), wanted.size());
    for (std::size_t r = 0; r < data.n_obs(); ++r) {
        for (std::size_t j = 0; j < wanted.size(); ++j) {
            out(r, j) = data.X(r, index[j]);
        }
    }
    return out;
}

// Maps panel unit labels onto a fitted model's training units; unmatched
// labels predict under the population (mixture-averaged) rule.
std::vector<std::optional<int>> map_units(const PanelDataset& data,
                                          const std::vector<std::string>& train_labels) {
    std::vector<std::optional<int>> out(data.n_obs());
    for (std::size_t i = 0; i < data.n_units(); ++i) {
        std::optional<int> mapped;
        auto it = std::find(train_labels.begin(), train_labels.end(), data.unit_labels[i]);
        if (it != train_labels.end()) {
            mapped = static_cast<int>(it - train_labels.begin());
        }
        for (std::size_t r = data.unit_start[i]; r < data.unit_start[i + 1]; ++r) {
            out[r] = mapped;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// high-frequency preprocessing
// ---------------------------------------------------------------------------

enum class Transform { log_return, difference };

void transform_column(HighFreqCsv& hf, const std::string& name, Transform kind,
                      const std::string& path) {
    std::vector<double> values;
    const std::size_t n = hf.series.y.size();
    std::ptrdiff_t col = -1;
    if (name == "y") {
        values = hf.series.y;
    } else {
        auto it = std::find(hf.series.x_names.begin(), hf.series.x_names.end(), name);
        if (it == hf.series.x_names.end()) {
            throw DataError(path + ": no column '" + name + "' to transform");
        }
        col = it - hf.series.x_names.begin();
        values.resize(n);
        for (std::size_t r = 0; r < n; ++r) {
            values[r] = hf.series.X(r, static_cast<std::size_t>(col));
        }
    }
    if (n < 2) {
        throw DataError(path + ": column '" + name +
                        "' needs at least two rows to transform");
    }
    std::vector<double> out(n, 0.0);
    for (std::size_t r = 1; r < n; ++r) {
        if (kind == Transform::log_return) {
            if (!(values[r] > 0.0) || !(values[r - 1] > 0.0)) {
                throw DataError(path + ":" + std::to_string(r + 2) + ": column '" + name +
                                "': log-return requires positive values");
            }
            out[r] = 100.0 * (std::log(values[r]) - std::log(values[r - 1]));
        } else {
            out[r] = values[r] - values[r - 1];
        }
    }
    if (col < 0) {
        hf.series.y = std::move(out);
    } else {
        for (std::size_t r = 0; r < n; ++r) {
            hf.series.X(r, static_cast<std::size_t>(col)) = out[r];
        }
    }
}

void drop_first_row(HighFreqCsv& hf) {
    const std::size_t n = hf.series.y.size();
    if (n <= 1) {
        throw DataError("high-frequency series has no rows left after transforms");
    }
    hf.series.period.erase(hf.series.period.begin());
    hf.series.within.erase(hf.series.within.begin());
    hf.series.y.erase(hf.series.y.begin());
    hf.dates.erase(hf.dates.begin());
    Matrix trimmed(n - 1, hf.series.X.cols());
    for (std::size_t r = 1; r < n; ++r) {
        for (std::size_t c = 0; c < hf.series.X.cols(); ++c) {
            trimmed(r - 1, c) = hf.series.X(r, c);
        }
    }
    hf.series.X = std::move(trimmed);
}

HighFreqCsv load_high_freq(const std::string& path, const MidasOpts& opts) {
    HighFreqCsv hf = read_high_freq_csv(path);
    for (const auto& name : opts.log_return_cols) {
        transform_column(hf, name, Transform::log_return, path);
    }
    for (const auto& name : opts.diff_cols) {
        transform_column(hf, name, Transform::difference, path);
    }
    if (!opts.log_return_cols.empty() || !opts.diff_cols.empty()) {
        drop_first_row(hf);
    }
    return hf;
}

MixedFrequencyTable build_table(const std::string& high_path, const std::string& low_path,
                                const MidasOpts& opts) {
    HighFreqCsv hf = load_high_freq(high_path, opts);
    if (!low_path.empty()) {
        LowFreqSeries low = read_low_freq_csv(low_path);
        MidasSpec spec;
        spec.lag_count = opts.lags;
        spec.omega1 = opts.omega1;
        AlignOptions options;
        if (opts.omega2) {
            spec.omega2_grid = {*opts.omega2};
            options.use_pca = false;
        }
        return align_mixed_frequency(hf.series, low, {spec}, options);
    }
    // No low-frequency file: same alignment discipline (covariates lagged one
    // observation), just without filter columns.
    const std::size_t n = hf.series.y.size();
    if (n < 2) {
        throw DataError(high_path + ": need at least two rows");
    }
    MixedFrequencyTable table;
    table.X = Matrix(n - 1, hf.series.X.cols());
    table.y.resize(n - 1);
    table.period.resize(n - 1);
    table.within.resize(n - 1);
    table.feature_names = hf.series.x_names;
    table.n_dropped = 1;
    for (std::size_t r = 1; r < n; ++r) {
        for (std::size_t c = 0; c < hf.series.X.cols(); ++c) {
            table.X(r - 1, c) = hf.series.X(r - 1, c);
        }
        table.y[r - 1] = hf.series.y[r];
        table.period[r - 1] = hf.series.period[r];
        table.within[r - 1] = hf.series.within[r];
    }
    if (table.feature_names.empty()) {
        throw DataError(high_path +
                        ": no covariate columns; provide --low or add covariates");
    }
    return table;
}

void write_aligned_csv(const fs::path& dir, const std::string& name,
                       const MixedFrequencyTable& table) {
    std::vector<std::string> header = {"period", "within", "y"};
    header.insert(header.end(), table.feature_names.begin(), table.feature_names.end());
    std::vector<std::vector<std::string>> rows;
    rows.reserve(table.y.size());
    for (std::size_t r = 0; r < table.y.size(); ++r) {
        std::vector<std::string> row;
        row.reserve(header.size());
        row.push_back(std::to_string(table.period[r]));
        row.push_back(std::to_string(table.within[r]));
        row.push_back(format_double(table.y[r]));
        for (std::size_t c = 0; c < table.X.cols(); ++c) {
            row.push_back(format_double(table.X(r, c)));
        }
        rows.push_back(std::move(row));
    }
    write_csv((dir / name).string(), header, rows);
}

// ---------------------------------------------------------------------------
// subcommand payloads
// ---------------------------------------------------------------------------

struct SimulateOpts {
    CommonOpts common;
    std::string scenario = "NN-S";
    int units = 100;
    int t_train = 5;
    std::vector<int> test_sizes = {9, 27, 45, 63, 81};
    bool study = false;
    int reps = 20;
};

void run_simulate(const SimulateOpts& o) {
    validate_taus(o.common.taus);
    const fs::path dir = prepare_out_dir(o.common.out);
    ConfigEcho echo("simulate");
    echo.add("out", o.common.out);
    echo.add("seed", o.common.seed);
    echo.add("tau", o.common.taus);
    echo.add("threads", resolve_threads(o.common.threads));
    echo.add("scenario", o.scenario);
    echo.add("units", o.units);
    echo.add("t-train", o.t_train);
    echo.add("test-sizes", o.test_sizes);
    echo.add("study", o.study);
    echo.add("reps", o.reps);

    json report;
    report["command"] = "simulate";
    report["seed"] = o.common.seed;
    report["taus"] = o.common.taus;

    if (o.study) {
        StudyConfig config;
        config.taus = o.common.taus;
        config.replications = o.reps;
        config.n_units = o.units;
        config.t_train = o.t_train;
        config.test_sizes = o.test_sizes;
        config.seed = o.common.seed;
        StudyResult result = run_study(config);

        std::vector<std::vector<std::string>> rows;
        json cells = json::array();
        for (const auto& c : result.cells) {
            rows.push_back({c.scenario, format_double(c.tau), format_double(c.fm_mae),
                            format_double(c.fm_mse), format_double(c.fm_ramp),
                            format_double(c.fm_pseudo_r2), format_double(c.qrf_mae),
                            format_double(c.qrf_mse), format_double(c.qrf_ramp),
                            format_double(c.qrf_pseudo_r2), std::to_string(c.replications),
                            std::to_string(c.failures)});
            json cell;
            cell["scenario"] = c.scenario;
            cell["tau"] = c.tau;
            cell["fm"] = {{"mae", c.fm_mae}, {"mse", c.fm_mse}, {"ramp", c.fm_ramp},
                          {"pseudo_r2", c.fm_pseudo_r2}};
            cell["qrf"] = {{"mae", c.qrf_mae}, {"mse", c.qrf_mse}, {"ramp", c.qrf_ramp},
                           {"pseudo_r2", c.qrf_pseudo_r2}};
            cell["replications"] = c.replications;
            cell["failures"] = c.failures;
            cells.push_back(std::move(cell));
        }
        write_csv((dir / "study.csv").string(),
                  {"scenario", "tau", "fm_mae", "fm_mse", "fm_ramp", "fm_pseudo_r2",
                   "qrf_mae", "qrf_mse", "qrf_ramp", "qrf_pseudo_r2", "replications",
                   "failures"},
                  rows);
        report["mode"] = "study";
        report["replications"] = o.reps;
        report["cells"] = std::move(cells);
    } else {
        Scenario scenario = Scenario::from_name(o.scenario);
        SimulatedPanel sim = simulate_scenario(scenario, o.units, o.t_train, o.test_sizes,
                                               o.common.seed);
        write_panel_csv((dir / "train.csv").string(), sim.train);
        write_panel_csv((dir / "test.csv").string(), sim.test);

        std::vector<std::int64_t> row_ids;
        std::vector<double> taus, oracle;
        for (double tau : o.common.taus) {
            for (std::size_t r = 0; r < sim.test.n_obs(); ++r) {
                row_ids.push_back(static_cast<std::int64_t>(r));
                taus.push_back(tau);
                oracle.push_back(theoretical_quantile(sim, sim.test.unit[r],
                                                      sim.test.X.row(r), tau));
            }
        }
        std::vector<std::vector<std::string>> rows;
        rows.reserve(row_ids.size());
        for (std::size_t i = 0; i < row_ids.size(); ++i) {
            rows.push_back({std::to_string(row_ids[i]), format_double(taus[i]),
                            format_double(oracle[i])});
        }
        write_csv((dir / "oracle.csv").string(), {"row_id", "tau", "theoretical_quantile"},
                  rows);
        report["mode"] = "panel";
        report["scenario"] = o.scenario;
        report["n_units"] = o.units;
        report["t_train"] = o.t_train;
        report["test_sizes"] = o.test_sizes;
        report["n_train_rows"] = sim.train.n_obs();
        report["n_test_rows"] = sim.test.n_obs();
    }
    write_report(dir, "simulate-report.json", report);
    echo.write(dir, "simulate");
}

struct FitQrfOpts {
    CommonOpts common;
    ForestOpts forest;
    std::string train;
    std::string test;
};

void run_fit_qrf(const FitQrfOpts& o) {
    validate_taus(o.common.taus);
    const fs::path dir = prepare_out_dir(o.common.out);
    const int threads = resolve_threads(o.common.threads);
    ConfigEcho echo("fit-qrf");
    echo.add("out", o.common.out);
    echo.add("seed", o.common.seed);
    echo.add("tau", o.common.taus);
    echo.add("threads", threads);
    echo.add("train", o.train);
    echo.add("test", o.test);
    o.forest.echo(echo);

    PanelDataset train = read_panel_csv(o.train);
    const std::vector<double> ones(train.n_obs(), 1.0);
    QuantileForest forest = fit_forest(train.X, train.y,
                                       ones, o.forest.to_config(o.common.seed, threads),
                                       train.feature_names);
    save_forest_model((dir / "qrf-model.json").string(), forest);

    const bool has_test = !o.test.empty();
    PanelDataset eval = has_test ? read_panel_csv(o.test) : train;
    Matrix Xq = has_test ? map_features(eval, forest.feature_names, o.test) : eval.X;

    std::vector<std::int64_t> row_ids;
    std::vector<double> tau_col, preds;
    json per_tau = json::array();
    for (double tau : o.common.taus) {
        std::vector<double> q(eval.n_obs());
        for (std::size_t r = 0; r < eval.n_obs(); ++r) {
            q[r] = predict_quantile(forest, Xq.row(r), tau);
            row_ids.push_back(static_cast<std::int64_t>(r));
            tau_col.push_back(tau);
            preds.push_back(q[r]);
        }
        AccuracyMetrics m = accuracy_metrics(q, eval.y, tau, {},
                                             empirical_quantile(train.y, tau));
        json entry = metrics_to_json(m);
        entry["tau"] = tau;
        entry["n"] = eval.n_obs();
        per_tau.push_back(std::move(entry));
    }
    write_predictions_csv((dir / "qrf-predictions.csv").string(), row_ids, tau_col, preds);

    json report;
    report["command"] = "fit-qrf";
    report["seed"] = o.common.seed;
    report["taus"] = o.common.taus;
    report["n_train"] = train.n_obs();
    report["feature_names"] = forest.feature_names;
    report["evaluated_on"] = has_test ? "test" : "train";
    report["metrics"] = std::move(per_tau);
    write_report(dir, "qrf-report.json", report);
    echo.write(dir, "fit-qrf");
}

struct FitMidasOpts {
    CommonOpts common;
    ForestOpts forest;
    MidasOpts midas;
    std::string high;
    std::string low;
};

void run_fit_midas_qrf(const FitMidasOpts& o) {
    validate_taus(o.common.taus);
    const fs::path dir = prepare_out_dir(o.common.out);
    const int threads = resolve_threads(o.common.threads);
    ConfigEcho echo("fit-midas-qrf");
    echo.add("out", o.common.out);
    echo.add("seed", o.common.seed);
    echo.add("tau", o.common.taus);
    echo.add("threads", threads);
    echo.add("high", o.high);
    echo.add("low", o.low);
    o.midas.echo(echo);
    o.forest.echo(echo);

    MixedFrequencyTable table = build_table(o.high, o.low, o.midas);
    write_aligned_csv(dir, "midas-aligned.csv", table);

    const std::vector<double> ones(table.y.size(), 1.0);
    QuantileForest forest = fit_forest(table.X, table.y, ones,
                                       o.forest.to_config(o.common.seed, threads),
                                       table.feature_names);
    save_forest_model((dir / "midas-qrf-model.json").string(), forest);

    std::vector<std::int64_t> row_ids;
    std::vector<double> tau_col, preds;
    json per_tau = json::array();
    for (double tau : o.common.taus) {
        std::vector<double> q(table.y.size());
        for (std::size_t r = 0; r < table.y.size(); ++r) {
            q[r] = predict_quantile(forest, table.X.row(r), tau);
            row_ids.push_back(static_cast<std::int64_t>(r));
            tau_col.push_back(tau);
            preds.push_back(q[r]);
        }
        AccuracyMetrics m = accuracy_metrics(q, table.y, tau, {},
                                             empirical_quantile(table.y, tau));
        json entry = metrics_to_json(m);
        entry["tau"] = tau;
        entry["n"] = table.y.size();
        per_tau.push_back(std::move(entry));
    }
    write_predictions_csv((dir / "midas-qrf-predictions.csv").string(), row_ids, tau_col,
                          preds);

    json report;
    report["command"] = "fit-midas-qrf";
    report["seed"] = o.common.seed;
    report["taus"] = o.common.taus;
    report["n_rows"] = table.y.size();
    report["n_dropped"] = table.n_dropped;
    report["feature_names"] = table.feature_names;
    report["metrics"] = std::move(per_tau);
    write_report(dir, "midas-qrf-report.json", report);
    echo.write(dir, "fit-midas-qrf");
}

struct FitDynamicOpts {
    CommonOpts common;
    ForestOpts forest;
    MidasOpts midas;
    std::string high;
    std::string low;
    int warmup = 0;
    int min_warmup = 50;
    int refit_every = 10;
    int caviar_restarts = 10;
};

void run_fit_dynamic(const FitDynamicOpts& o) {
    validate_taus(o.common.taus);
    const fs::path dir = prepare_out_dir(o.common.out);
    const int threads = resolve_threads(o.common.threads);
    ConfigEcho echo("fit-dynamic");
    echo.add("out", o.common.out);
    echo.add("seed", o.common.seed);
    echo.add("tau", o.common.taus);
    echo.add("threads", threads);
    echo.add("high", o.high);
    echo.add("low", o.low);
    o.midas.echo(echo);
    o.forest.echo(echo);
    echo.add("warmup", o.warmup);
    echo.add("min-warmup", o.min_warmup);
    echo.add("refit-every", o.refit_every);
    echo.add("caviar-restarts", o.caviar_restarts);

    MixedFrequencyTable table = build_table(o.high, o.low, o.midas);

    DynamicConfig config;
    config.warmup = o.warmup;
    config.min_warmup = o.min_warmup;
    config.refit_every = o.refit_every;
    config.caviar_restarts = o.caviar_restarts;
    config.forest = o.forest.to_config(o.common.seed, threads);

    std::vector<std::int64_t> row_ids;
    std::vector<double> tau_col, preds;
    json per_tau = json::array();
    for (double tau : o.common.taus) {
        DynamicFitResult result = fit_dynamic_midas_qrf(table, tau, config);
        save_dynamic_model(
            (dir / model_file_name("dynamic-model", o.common.taus, tau)).string(), result);
        for (std::size_t r = 0; r < result.predictions.size(); ++r) {
            row_ids.push_back(static_cast<std::int64_t>(r));
            tau_col.push_back(tau);
            preds.push_back(result.predictions[r]);
        }
        const auto start = static_cast<std::size_t>(result.warmup) - 1;
        std::vector<double> y_oos(table.y.begin() + start, table.y.end());
        std::vector<double> q_oos(result.predictions.begin() + start,
                                  result.predictions.end());
        json entry;
        entry["tau"] = tau;
        entry["warmup"] = result.warmup;
        entry["n_refits"] = result.refit_rows.size();
        entry["caviar"] = {{"beta0", result.caviar.params.beta0},
                           {"beta1", result.caviar.params.beta1},
                           {"beta2", result.caviar.params.beta2},
                           {"q0", result.caviar.params.q0},
                           {"avg_check_loss", result.caviar.avg_check_loss}};
        entry["oos_backtest"] = backtest_to_json(backtest(y_oos, q_oos, tau));
        per_tau.push_back(std::move(entry));
    }
    write_predictions_csv((dir / "dynamic-predictions.csv").string(), row_ids, tau_col,
                          preds);

    json report;
    report["command"] = "fit-dynamic";
    report["seed"] = o.common.seed;
    report["taus"] = o.common.taus;
    report["n_rows"] = table.y.size();
    report["n_dropped"] = table.n_dropped;
    report["feature_names"] = table.feature_names;
    report["results"] = std::move(per_tau);
    write_report(dir, "dynamic-report.json", report);
    echo.write(dir, "fit-dynamic");
}

struct FitFmqrfOpts {
    CommonOpts common;
    ForestOpts forest;
    EmOpts em;
    std::string train;
    std::string test;
};

void run_fit_fmqrf(const FitFmqrfOpts& o) {
    validate_taus(o.common.taus);
    const fs::path dir = prepare_out_dir(o.common.out);
    const int threads = resolve_threads(o.common.threads);
    ConfigEcho echo("fit-fmqrf");
    echo.add("out", o.common.out);
    echo.add("seed", o.common.seed);
    echo.add("tau", o.common.taus);
    echo.add("threads", threads);
    echo.add("train", o.train);
    echo.add("test", o.test);
    o.em.echo(echo);
    o.forest.echo(echo);

    PanelDataset train = read_panel_csv(o.train);
    const bool has_test = !o.test.empty();
    PanelDataset eval = has_test ? read_panel_csv(o.test) : train;

    const EmConfig config = o.em.to_config(o.forest, o.common.seed, threads);

    std::vector<std::int64_t> row_ids;
    std::vector<double> tau_col, preds;
    json per_tau = json::array();
    for (double tau : o.common.taus) {
        FmQrfModel model = fit_fm_qrf(train, tau, config);
        save_fmqrf_model((dir / model_file_name("fmqrf-model", o.common.taus, tau)).string(),
                         model);

        Matrix Xq = has_test ? map_features(eval, model.feature_names, o.test) : eval.X;
        std::vector<std::optional<int>> units =
            has_test ? map_units(eval, model.unit_labels)
                     : std::vector<std::optional<int>>();
        if (!has_test) {
            units.resize(eval.n_obs());
            for (std::size_t r = 0; r < eval.n_obs(); ++r) units[r] = eval.unit[r];
        }
        std::vector<double> q(eval.n_obs());
        for (std::size_t r = 0; r < eval.n_obs(); ++r) {
            q[r] = predict_fm_qrf(model, Xq.row(r), units[r]);
            row_ids.push_back(static_cast<std::int64_t>(r));
            tau_col.push_back(tau);
            preds.push_back(q[r]);
        }
        AccuracyMetrics m = accuracy_metrics(q, eval.y, tau, {},
                                             empirical_quantile(train.y, tau));
        json entry;
        entry["tau"] = tau;
        entry["alpha"] = model.state.alpha;
        entry["pi"] = model.state.pi;
        entry["sigma"] = model.state.sigma;
        entry["n_iterations"] = model.n_iterations;
        entry["converged"] = model.converged;
        entry["starvation_events"] = model.starvation_events;
        entry["loglik_initial"] = model.loglik_trace.front();
        entry["loglik_final"] = model.loglik_trace.back();
        entry["metrics"] = metrics_to_json(m);
        per_tau.push_back(std::move(entry));
    }
    write_predictions_csv((dir / "fmqrf-predictions.csv").string(), row_ids, tau_col, preds);

    json report;
    report["command"] = "fit-fmqrf";
    report["seed"] = o.common.seed;
    report["taus"] = o.common.taus;
    report["n_train"] = train.n_obs();
    report["n_units"] = train.n_units();
    report["evaluated_on"] = has_test ? "test" : "train";
    report["results"] = std::move(per_tau);
    write_report(dir, "fmqrf-report.json", report);
    echo.write(dir, "fit-fmqrf");
}

struct PredictOpts {
    CommonOpts common;
    std::string model;
    std::string data;
};

void run_predict(const PredictOpts& o) {
    const fs::path dir = prepare_out_dir(o.common.out);
    ConfigEcho echo("predict");
    echo.add("out", o.common.out);
    echo.add("seed", o.common.seed);
    echo.add("tau", o.common.taus);
    echo.add("threads", resolve_threads(o.common.threads));
    echo.add("model", o.model);
    echo.add("data", o.data);

    const std::string type = model_type(o.model);
    PanelDataset data = read_panel_csv(o.data);

    std::vector<std::int64_t> row_ids;
    std::vector<double> tau_col, preds;
    json report;
    report["command"] = "predict";
    report["model_type"] = type;
    report["n_rows"] = data.n_obs();

    if (type == "qrf") {
        validate_taus(o.common.taus);
        QuantileForest forest = load_forest_model(o.model);
        Matrix Xq = map_features(data, forest.feature_names, o.data);
        for (double tau : o.common.taus) {
            for (std::size_t r = 0; r < data.n_obs(); ++r) {
                row_ids.push_back(static_cast<std::int64_t>(r));
                tau_col.push_back(tau);
                preds.push_back(predict_quantile(forest, Xq.row(r), tau));
            }
        }
        report["taus"] = o.common.taus;
    } else if (type == "fmqrf") {
        FmQrfModel model = load_fmqrf_model(o.model);
        Matrix Xq = map_features(data, model.feature_names, o.data);
        std::vector<std::optional<int>> units = map_units(data, model.unit_labels);
        std::size_t n_known = 0;
        for (std::size_t r = 0; r < data.n_obs(); ++r) {
            if (units[r]) ++n_known;
            row_ids.push_back(static_cast<std::int64_t>(r));
            tau_col.push_back(model.state.tau);
            preds.push_back(predict_fm_qrf(model, Xq.row(r), units[r]));
        }
        report["taus"] = {model.state.tau};
        report["note"] = "mixture models predict at their training tau";
        report["n_rows_with_known_unit"] = n_known;
    } else {
        throw InvalidInput("predict supports qrf and fmqrf models; refit dynamic "
                           "models with fit-dynamic");
    }
    write_predictions_csv((dir / "predictions.csv").string(), row_ids, tau_col, preds);
    write_report(dir, "predict-report.json", report);
    echo.write(dir, "predict");
}

struct BacktestOpts {
    CommonOpts common;
    std::string predictions;
    std::string outcomes;
    int lags = 4;
};

void run_backtest(const BacktestOpts& o) {
    const fs::path dir = prepare_out_dir(o.common.out);
    ConfigEcho echo("backtest");
    echo.add("out", o.common.out);
    echo.add("seed", o.common.seed);
    echo.add("tau", o.common.taus);
    echo.add("threads", resolve_threads(o.common.threads));
    echo.add("predictions", o.predictions);
    echo.add("outcomes", o.outcomes);
    echo.add("lags", o.lags);

    CsvTable preds = read_csv(o.predictions);
    const std::size_t id_col = preds.column("row_id");
    const std::size_t tau_col = preds.column("tau");
    const std::size_t pred_col = preds.column("prediction");

    CsvTable outcomes = read_csv(o.outcomes);
    const std::size_t y_col = outcomes.column("y");
    std::vector<double> y(outcomes.n_rows());
    for (std::size_t r = 0; r < outcomes.n_rows(); ++r) {
        y[r] = parse_cell(outcomes, r, y_col);
    }

    std::vector<double> file_taus(preds.n_rows());
    for (std::size_t r = 0; r < preds.n_rows(); ++r) {
        file_taus[r] = parse_cell(preds, r, tau_col);
    }
    std::vector<double> taus = o.common.taus;
    if (taus.empty()) {
        taus = file_taus;
        std::sort(taus.begin(), taus.end());
        taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
    }
    validate_taus(taus);

    json results = json::array();
    for (double tau : taus) {
        std::vector<double> y_sel, q_sel;
        for (std::size_t r = 0; r < preds.n_rows(); ++r) {
            if (file_taus[r] != tau) continue;
            const std::int64_t id = parse_cell_int(preds, r, id_col);
            if (id < 0 || static_cast<std::size_t>(id) >= y.size()) {
                throw DataError(o.predictions + ": row_id " + std::to_string(id) +
                                " outside the outcomes file");
            }
            y_sel.push_back(y[static_cast<std::size_t>(id)]);
            q_sel.push_back(parse_cell(preds, r, pred_col));
        }
        if (y_sel.empty()) {
            throw DataError(o.predictions + ": no rows with tau " + format_double(tau));
        }
        results.push_back(backtest_to_json(backtest(y_sel, q_sel, tau, o.lags)));
    }

    json report;
    report["command"] = "backtest";
    report["seed"] = o.common.seed;
    report["taus"] = taus;
    report["lags"] = o.lags;
    report["results"] = std::move(results);
    write_report(dir, "backtest-report.json", report);
    echo.write(dir, "backtest");
}

struct ImportanceOpts {
    CommonOpts common;
    std::string model;
    std::string data;
    int repeats = 5;
};

void run_importance(const ImportanceOpts& o) {
    validate_taus(o.common.taus);
    const fs::path dir = prepare_out_dir(o.common.out);
    ConfigEcho echo("importance");
    echo.add("out", o.common.out);
    echo.add("seed", o.common.seed);
    echo.add("tau", o.common.taus);
    echo.add("threads", resolve_threads(o.common.threads));
    echo.add("model", o.model);
    echo.add("data", o.data);
    echo.add("repeats", o.repeats);

    QuantileForest forest = load_forest_model(o.model);
    PanelDataset data = read_panel_csv(o.data);
    if (data.n_obs() != forest.n_train()) {
        throw DataError(o.data + ": importance needs the model's training data (" +
                        std::to_string(forest.n_train()) + " rows, file has " +
                        std::to_string(data.n_obs()) + ")");
    }
    Matrix X = map_features(data, forest.feature_names, o.data);

    std::vector<std::vector<std::string>> csv_rows;
    json per_tau = json::array();
    for (double tau : o.common.taus) {
        std::vector<double> imp =
            permutation_importance(forest, X, data.y, tau, o.repeats, o.common.seed);
        std::vector<std::size_t> order(imp.size());
        for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return imp[a] > imp[b]; });
        json ranked = json::array();
        for (std::size_t j : order) {
            ranked.push_back({{"feature", forest.feature_names[j]},
                              {"importance", imp[j]}});
        }
        json entry;
        entry["tau"] = tau;
        entry["ranking"] = std::move(ranked);
        per_tau.push_back(std::move(entry));
        for (std::size_t j = 0; j < imp.size(); ++j) {
            csv_rows.push_back({forest.feature_names[j], format_double(tau),
                                format_double(imp[j])});
        }
    }
    write_csv((dir / "importance.csv").string(), {"feature", "tau", "importance"}, csv_rows);

    json report;
    report["command"] = "importance";
    report["seed"] = o.common.seed;
    report["taus"] = o.common.taus;
    report["repeats"] = o.repeats;
    report["results"] = std::move(per_tau);
    write_report(dir, "importance-report.json", report);
    echo.write(dir, "importance");
}

struct BootstrapOpts {
    CommonOpts common;
    ForestOpts forest;
    EmOpts em;
    std::string train;
    std::string queries;
    int replicates = 50;
};

void run_bootstrap(const BootstrapOpts& o) {
    validate_taus(o.common.taus);
    const fs::path dir = prepare_out_dir(o.common.out);
    const int threads = resolve_threads(o.common.threads);
    ConfigEcho echo("bootstrap");
    echo.add("out", o.common.out);
    echo.add("seed", o.common.seed);
    echo.add("tau", o.common.taus);
    echo.add("threads", threads);
    echo.add("train", o.train);
    echo.add("queries", o.queries);
    echo.add("replicates", o.replicates);
    o.em.echo(echo);
    o.forest.echo(echo);

    PanelDataset train = read_panel_csv(o.train);
    const bool has_queries = !o.queries.empty();
    PanelDataset query_panel = has_queries ? read_panel_csv(o.queries) : train;
    Matrix Xq = has_queries ? map_features(query_panel, train.feature_names, o.queries)
                            : query_panel.X;
    std::vector<std::optional<int>> units = map_units(query_panel, train.unit_labels);

    const EmConfig config = o.em.to_config(o.forest, o.common.seed, threads);

    std::vector<std::int64_t> row_ids;
    std::vector<double> tau_col, preds;
    std::vector<std::vector<std::string>> se_rows;
    json per_tau = json::array();
    for (double tau : o.common.taus) {
        BootstrapResult result =
            bootstrap_se(train, tau, config, o.replicates, Xq, units);
        for (std::size_t r = 0; r < result.mean.size(); ++r) {
            row_ids.push_back(static_cast<std::int64_t>(r));
            tau_col.push_back(tau);
            preds.push_back(result.mean[r]);
            se_rows.push_back({std::to_string(r), format_double(tau),
                               format_double(result.se[r])});
        }
        json entry;
        entry["tau"] = tau;
        entry["replicates"] = o.replicates;
        entry["n_success"] = result.n_success;
        entry["n_failed"] = result.n_failed;
        per_tau.push_back(std::move(entry));
    }
    write_predictions_csv((dir / "bootstrap-predictions.csv").string(), row_ids, tau_col,
                          preds);
    write_csv((dir / "bootstrap-se.csv").string(), {"row_id", "tau", "se"}, se_rows);

    json report;
    report["command"] = "bootstrap";
    report["seed"] = o.common.seed;
    report["taus"] = o.common.taus;
    report["n_queries"] = Xq.rows();
    report["results"] = std::move(per_tau);
    write_report(dir, "bootstrap-report.json", report);
    echo.write(dir, "bootstrap");
}

} // namespace

namespace {

void apply_config_file_if_set(CLI::App* sub, const CommonOpts& common) {
    if (!common.config_file.empty()) {
        apply_config_file(sub, common.config_file);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantile regression forests for mixed-frequency and longitudinal data"};
    app.require_subcommand(1);
    std::map<CLI::App*, std::function<void()>> runners;

    SimulateOpts sim;
    auto* sub_sim = app.add_subcommand("simulate",
                                       "Generate longitudinal benchmark panels or run the "
                                       "full simulation study");
    add_common(sub_sim, sim.common, {0.1, 0.9});
    sub_sim->add_option("--scenario", sim.scenario,
                        "Scenario name: NN-S, NN-L, TT-S or TT-L")
        ->capture_default_str();
    sub_sim->add_option("--units", sim.units, "Training units")->capture_default_str();
    sub_sim->add_option("--t-train", sim.t_train, "Training observations per unit")
        ->capture_default_str();
    sub_sim->add_option("--test-sizes", sim.test_sizes,
                        "Test lengths cycled across units")
        ->delimiter(',')
        ->capture_default_str();
    sub_sim->add_flag("--study", sim.study,
                      "Run the four-scenario comparison study instead of writing panels");
    sub_sim->add_option("--reps", sim.reps, "Study replications per scenario")
        ->capture_default_str();
    runners[sub_sim] = [&] { apply_config_file_if_set(sub_sim, sim.common); run_simulate(sim); };

    FitQrfOpts qrf;
    auto* sub_qrf = app.add_subcommand("fit-qrf", "Fit a plain quantile regression forest");
    add_common(sub_qrf, qrf.common, {0.5});
    sub_qrf->add_option("--train", qrf.train, "Training panel CSV (unit,time,y,...)");
    sub_qrf->add_option("--test", qrf.test, "Optional panel CSV to predict on");
    add_forest(sub_qrf, qrf.forest);
    runners[sub_qrf] = [&] { apply_config_file_if_set(sub_qrf, qrf.common); require_option(qrf.train, "--train"); run_fit_qrf(qrf); };

    FitMidasOpts midas;
    auto* sub_midas = app.add_subcommand(
        "fit-midas-qrf", "Fit a quantile forest on MIDAS-aligned mixed-frequency data");
    add_common(sub_midas, midas.common, {0.05});
    sub_midas->add_option("--high", midas.high, "High-frequency CSV (date,period,y,...)");
    sub_midas->add_option("--low", midas.low, "Low-frequency CSV (period,...)");
    add_midas(sub_midas, midas.midas);
    add_forest(sub_midas, midas.forest);
    runners[sub_midas] = [&] { apply_config_file_if_set(sub_midas, midas.common); require_option(midas.high, "--high"); require_option(midas.low, "--low"); run_fit_midas_qrf(midas); };

    FitDynamicOpts dyn;
    auto* sub_dyn = app.add_subcommand(
        "fit-dynamic", "Expanding-window autoregressive quantile forecasting");
    add_common(sub_dyn, dyn.common, {0.05});
    sub_dyn->add_option("--high", dyn.high, "High-frequency CSV (date,period,y,...)");
    sub_dyn->add_option("--low", dyn.low, "Optional low-frequency CSV (period,...)");
    add_midas(sub_dyn, dyn.midas);
    add_forest(sub_dyn, dyn.forest);
    sub_dyn->add_option("--warmup", dyn.warmup, "Warmup length (0 = auto)")
        ->capture_default_str();
    sub_dyn->add_option("--min-warmup", dyn.min_warmup, "Minimum warmup length")
        ->capture_default_str();
    sub_dyn->add_option("--refit-every", dyn.refit_every,
                        "Retrain the forest every N appended rows")
        ->capture_default_str();
    sub_dyn->add_option("--caviar-restarts", dyn.caviar_restarts,
                        "Random restarts for the warmup recursion fit")
        ->capture_default_str();
    runners[sub_dyn] = [&] { apply_config_file_if_set(sub_dyn, dyn.common); require_option(dyn.high, "--high"); run_fit_dynamic(dyn); };

    FitFmqrfOpts fm;
    auto* sub_fm = app.add_subcommand(
        "fit-fmqrf", "Fit the finite-mixture quantile forest for longitudinal data");
    add_common(sub_fm, fm.common, {0.5});
    sub_fm->add_option("--train", fm.train, "Training panel CSV (unit,time,y,...)");
    sub_fm->add_option("--test", fm.test, "Optional panel CSV to predict on");
    add_em(sub_fm, fm.em);
    add_forest(sub_fm, fm.forest);
    runners[sub_fm] = [&] { apply_config_file_if_set(sub_fm, fm.common); require_option(fm.train, "--train"); run_fit_fmqrf(fm); };

    PredictOpts pred;
    auto* sub_pred = app.add_subcommand("predict", "Predict from a saved model file");
    add_common(sub_pred, pred.common, {0.5});
    sub_pred->add_option("--model", pred.model, "Model file written by a fit command");
    sub_pred->add_option("--data", pred.data, "Panel CSV to predict on");
    runners[sub_pred] = [&] { apply_config_file_if_set(sub_pred, pred.common); require_option(pred.model, "--model"); require_option(pred.data, "--data"); run_predict(pred); };

    BacktestOpts bt;
    auto* sub_bt = app.add_subcommand(
        "backtest", "Coverage backtests for quantile forecasts");
    add_common(sub_bt, bt.common, {});
    sub_bt->add_option("--predictions", bt.predictions,
                       "Predictions CSV (row_id,tau,prediction)");
    sub_bt->add_option("--outcomes", bt.outcomes, "Outcomes CSV with a y column");
    sub_bt->add_option("--lags", bt.lags, "Lagged hits in the dynamic quantile test")
        ->capture_default_str();
    runners[sub_bt] = [&] { apply_config_file_if_set(sub_bt, bt.common); require_option(bt.predictions, "--predictions"); require_option(bt.outcomes, "--outcomes"); run_backtest(bt); };

    ImportanceOpts imp;
    auto* sub_imp = app.add_subcommand(
        "importance", "Permutation importance of a fitted forest");
    add_common(sub_imp, imp.common, {0.5});
    sub_imp->add_option("--model", imp.model, "Forest model file");
    sub_imp->add_option("--data", imp.data, "The model's training panel CSV");
    sub_imp->add_option("--repeats", imp.repeats, "Permutations averaged per feature")
        ->capture_default_str();
    runners[sub_imp] = [&] { apply_config_file_if_set(sub_imp, imp.common); require_option(imp.model, "--model"); require_option(imp.data, "--data"); run_importance(imp); };

    BootstrapOpts boot;
    auto* sub_boot = app.add_subcommand(
        "bootstrap", "Unit-resampling bootstrap standard errors for mixture forecasts");
    add_common(sub_boot, boot.common, {0.5});
    sub_boot->add_option("--train", boot.train, "Training panel CSV (unit,time,y,...)");
    sub_boot->add_option("--queries", boot.queries,
                         "Panel CSV of query rows (default: the training rows)");
    sub_boot->add_option("--replicates", boot.replicates, "Bootstrap replicates")
        ->capture_default_str();
    add_em(sub_boot, boot.em);
    add_forest(sub_boot, boot.forest);
    runners[sub_boot] = [&] { apply_config_file_if_set(sub_boot, boot.common); require_option(boot.train, "--train"); run_bootstrap(boot); };

    try {
        app.parse(argc, argv);
        for (CLI::App* sub : app.get_subcommands()) {
            runners.at(sub)();
        }
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const InvalidInput& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const InvalidConfig& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
