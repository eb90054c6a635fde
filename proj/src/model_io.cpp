#include "qrfx/model_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "qrfx/errors.hpp"

namespace qrfx {

namespace {

using nlohmann::json;

// ---- strict accessors -------------------------------------------------

const json& require(const json& j, const char* key, const std::string& path) {
    auto it = j.find(key);
    if (it == j.end()) {
        throw DataError(path + ": missing key '" + std::string(key) + "'");
    }
    return *it;
}

double as_double(const json& j, const char* key, const std::string& path) {
    const json& v = require(j, key, path);
    if (!v.is_number()) {
        throw DataError(path + ": key '" + std::string(key) + "' must be a number");
    }
    return v.get<double>();
}

std::int64_t as_int(const json& j, const char* key, const std::string& path) {
    const json& v = require(j, key, path);
    if (!v.is_number_integer()) {
        throw DataError(path + ": key '" + std::string(key) + "' must be an integer");
    }
    return v.get<std::int64_t>();
}

bool as_bool(const json& j, const char* key, const std::string& path) {
    const json& v = require(j, key, path);
    if (!v.is_boolean()) {
        throw DataError(path + ": key '" + std::string(key) + "' must be a boolean");
    }
    return v.get<bool>();
}

std::string as_string(const json& j, const char* key, const std::string& path) {
    const json& v = require(j, key, path);
    if (!v.is_string()) {
        throw DataError(path + ": key '" + std::string(key) + "' must be a string");
    }
    return v.get<std::string>();
}

template <typename T>
std::vector<T> as_vector(const json& j, const char* key, const std::string& path) {
    const json& v = require(j, key, path);
    if (!v.is_array()) {
        throw DataError(path + ": key '" + std::string(key) + "' must be an array");
    }
    std::vector<T> out;
    out.reserve(v.size());
    for (const auto& e : v) {
        if constexpr (std::is_same_v<T, std::string>) {
            if (!e.is_string()) {
                throw DataError(path + ": array '" + std::string(key) +
                                "' must hold strings");
            }
        } else {
            if (!e.is_number()) {
                throw DataError(path + ": array '" + std::string(key) +
                                "' must hold numbers");
            }
        }
        out.push_back(e.get<T>());
    }
    return out;
}

// Log-likelihood traces can legitimately touch +-infinity on degenerate
// inputs; JSON has no literal for that, so non-finite entries travel as
// strings.
json encode_extended(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

double decode_extended(const json& v, const char* key, const std::string& path) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    throw DataError(path + ": array '" + std::string(key) + "' holds an invalid entry");
}

// ---- matrices ----------------------------------------------------------

json encode_matrix(const Matrix& m) {
    json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    j["data"] = m.data();
    return j;
}

Matrix decode_matrix(const json& j, const char* key, const std::string& path) {
    const json& v = require(j, key, path);
    const auto rows = as_int(v, "rows", path);
    const auto cols = as_int(v, "cols", path);
    if (rows < 0 || cols < 0) {
        throw DataError(path + ": matrix '" + std::string(key) + "' has negative shape");
    }
    auto data = as_vector<double>(v, "data", path);
    if (data.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
        throw DataError(path + ": matrix '" + std::string(key) + "' shape/data mismatch");
    }
    Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    m.data() = std::move(data);
    return m;
}

// ---- forests -----------------------------------------------------------

json encode_config(const TrainConfig& c) {
    json j;
    j["n_trees"] = c.n_trees;
    j["mtry"] = c.mtry;
    j["min_node_size"] = c.min_node_size;
    j["max_depth"] = c.max_depth;
    j["bootstrap_fraction"] = c.bootstrap_fraction;
    j["bootstrap"] = c.bootstrap;
    j["seed"] = c.seed;
    j["n_threads"] = c.n_threads;
    return j;
}

TrainConfig decode_config(const json& j, const std::string& path) {
    TrainConfig c;
    c.n_trees = static_cast<int>(as_int(j, "n_trees", path));
    c.mtry = static_cast<int>(as_int(j, "mtry", path));
    c.min_node_size = static_cast<int>(as_int(j, "min_node_size", path));
    c.max_depth = static_cast<int>(as_int(j, "max_depth", path));
    c.bootstrap_fraction = as_double(j, "bootstrap_fraction", path);
    c.bootstrap = as_bool(j, "bootstrap", path);
    c.seed = static_cast<std::uint64_t>(as_int(j, "seed", path));
    c.n_threads = static_cast<int>(as_int(j, "n_threads", path));
    return c;
}

json encode_forest(const QuantileForest& f) {
    json j;
    j["config"] = encode_config(f.config);
    j["feature_names"] = f.feature_names;
    j["train_outcomes"] = f.train_outcomes;
    j["train_weights"] = f.train_weights;
    json oob = json::array();
    for (const auto& mask : f.oob) {
        json row = json::array();
        for (auto b : mask) row.push_back(static_cast<int>(b));
        oob.push_back(std::move(row));
    }
    j["oob"] = std::move(oob);
    json trees = json::array();
    for (const auto& t : f.trees) {
        json tree;
        json feature = json::array(), threshold = json::array(), left = json::array(),
             right = json::array(), leaf_begin = json::array(), leaf_end = json::array();
        for (const auto& node : t.nodes) {
            feature.push_back(node.feature);
            threshold.push_back(node.threshold);
            left.push_back(node.left);
            right.push_back(node.right);
            leaf_begin.push_back(node.leaf_begin);
            leaf_end.push_back(node.leaf_end);
        }
        tree["feature"] = std::move(feature);
        tree["threshold"] = std::move(threshold);
        tree["left"] = std::move(left);
        tree["right"] = std::move(right);
        tree["leaf_begin"] = std::move(leaf_begin);
        tree["leaf_end"] = std::move(leaf_end);
        tree["leaf_items"] = t.leaf_items;
        tree["leaf_weights"] = t.leaf_weights;
        trees.push_back(std::move(tree));
    }
    j["trees"] = std::move(trees);
    return j;
}

QuantileForest decode_forest(const json& j, const std::string& path) {
    QuantileForest f;
    f.config = decode_config(require(j, "config", path), path);
    f.feature_names = as_vector<std::string>(j, "feature_names", path);
    f.train_outcomes = as_vector<double>(j, "train_outcomes", path);
    f.train_weights = as_vector<double>(j, "train_weights", path);
    const json& oob = require(j, "oob", path);
    if (!oob.is_array()) throw DataError(path + ": key 'oob' must be an array");
    for (const auto& row : oob) {
        if (!row.is_array()) throw DataError(path + ": 'oob' rows must be arrays");
        std::vector<std::uint8_t> mask;
        mask.reserve(row.size());
        for (const auto& e : row) {
            if (!e.is_number_integer()) {
                throw DataError(path + ": 'oob' entries must be integers");
            }
            mask.push_back(e.get<int>() ? 1 : 0);
        }
        f.oob.push_back(std::move(mask));
    }
    const json& trees = require(j, "trees", path);
    if (!trees.is_array()) throw DataError(path + ": key 'trees' must be an array");
    for (const auto& tj : trees) {
        RegressionTree t;
        auto feature = as_vector<int>(tj, "feature", path);
        auto threshold = as_vector<double>(tj, "threshold", path);
        auto left = as_vector<int>(tj, "left", path);
        auto right = as_vector<int>(tj, "right", path);
        auto leaf_begin = as_vector<std::int64_t>(tj, "leaf_begin", path);
        auto leaf_end = as_vector<std::int64_t>(tj, "leaf_end", path);
        const std::size_t n = feature.size();
        if (threshold.size() != n || left.size() != n || right.size() != n ||
            leaf_begin.size() != n || leaf_end.size() != n) {
            throw DataError(path + ": tree node arrays have mismatched lengths");
        }
        t.nodes.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            t.nodes[i].feature = feature[i];
            t.nodes[i].threshold = threshold[i];
            t.nodes[i].left = left[i];
            t.nodes[i].right = right[i];
            t.nodes[i].leaf_begin = leaf_begin[i];
            t.nodes[i].leaf_end = leaf_end[i];
        }
        t.leaf_items = as_vector<int>(tj, "leaf_items", path);
        t.leaf_weights = as_vector<double>(tj, "leaf_weights", path);
        f.trees.push_back(std::move(t));
    }
    try {
        f.finalize();
    } catch (const Error& e) {
        throw DataError(path + ": inconsistent forest payload: " + e.what());
    }
    return f;
}

// ---- fmqrf / dynamic ----------------------------------------------------

json encode_fmqrf(const FmQrfModel& m) {
    json j;
    j["tau"] = m.state.tau;
    j["k"] = m.state.k;
    j["alpha"] = m.state.alpha;
    j["pi"] = m.state.pi;
    j["sigma"] = m.state.sigma;
    j["w"] = encode_matrix(m.state.W);
    j["v"] = encode_matrix(m.state.V);
    j["fixed_part"] = encode_forest(m.state.fixed_part);
    j["map_component"] = m.map_component;
    json trace = json::array();
    for (double v : m.loglik_trace) trace.push_back(encode_extended(v));
    j["loglik_trace"] = std::move(trace);
    j["n_iterations"] = m.n_iterations;
    j["converged"] = m.converged;
    j["starvation_events"] = m.starvation_events;
    j["feature_names"] = m.feature_names;
    j["unit_labels"] = m.unit_labels;
    return j;
}

FmQrfModel decode_fmqrf(const json& j, const std::string& path) {
    FmQrfModel m;
    m.state.tau = as_double(j, "tau", path);
    m.state.k = static_cast<int>(as_int(j, "k", path));
    m.state.alpha = as_vector<double>(j, "alpha", path);
    m.state.pi = as_vector<double>(j, "pi", path);
    m.state.sigma = as_double(j, "sigma", path);
    m.state.W = decode_matrix(j, "w", path);
    m.state.V = decode_matrix(j, "v", path);
    m.state.fixed_part = decode_forest(require(j, "fixed_part", path), path);
    m.map_component = as_vector<int>(j, "map_component", path);
    const json& trace = require(j, "loglik_trace", path);
    if (!trace.is_array()) {
        throw DataError(path + ": key 'loglik_trace' must be an array");
    }
    for (const auto& e : trace) {
        m.loglik_trace.push_back(decode_extended(e, "loglik_trace", path));
    }
    m.n_iterations = static_cast<int>(as_int(j, "n_iterations", path));
    m.converged = as_bool(j, "converged", path);
    m.starvation_events = static_cast<int>(as_int(j, "starvation_events", path));
    m.feature_names = as_vector<std::string>(j, "feature_names", path);
    m.unit_labels = as_vector<std::string>(j, "unit_labels", path);
    if (m.state.alpha.size() != static_cast<std::size_t>(m.state.k) ||
        m.state.pi.size() != m.state.alpha.size()) {
        throw DataError(path + ": mixture arrays disagree with k");
    }
    return m;
}

json encode_dynamic(const DynamicFitResult& r) {
    json j;
    j["predictions"] = r.predictions;
    j["lag_quant"] = r.lag_quant;
    json caviar;
    caviar["beta0"] = r.caviar.params.beta0;
    caviar["beta1"] = r.caviar.params.beta1;
    caviar["beta2"] = r.caviar.params.beta2;
    caviar["tau"] = r.caviar.params.tau;
    caviar["q0"] = r.caviar.params.q0;
    caviar["forecasts"] = r.caviar.forecasts;
    caviar["avg_check_loss"] = r.caviar.avg_check_loss;
    j["caviar"] = std::move(caviar);
    j["refit_rows"] = r.refit_rows;
    j["final_forest"] = encode_forest(r.final_forest);
    j["feature_names"] = r.feature_names;
    j["warmup"] = r.warmup;
    return j;
}

DynamicFitResult decode_dynamic(const json& j, const std::string& path) {
    DynamicFitResult r;
    r.predictions = as_vector<double>(j, "predictions", path);
    r.lag_quant = as_vector<double>(j, "lag_quant", path);
    const json& caviar = require(j, "caviar", path);
    r.caviar.params.beta0 = as_double(caviar, "beta0", path);
    r.caviar.params.beta1 = as_double(caviar, "beta1", path);
    r.caviar.params.beta2 = as_double(caviar, "beta2", path);
    r.caviar.params.tau = as_double(caviar, "tau", path);
    r.caviar.params.q0 = as_double(caviar, "q0", path);
    r.caviar.forecasts = as_vector<double>(caviar, "forecasts", path);
    r.caviar.avg_check_loss = as_double(caviar, "avg_check_loss", path);
    r.refit_rows = as_vector<int>(j, "refit_rows", path);
    r.final_forest = decode_forest(require(j, "final_forest", path), path);
    r.feature_names = as_vector<std::string>(j, "feature_names", path);
    r.warmup = static_cast<int>(as_int(j, "warmup", path));
    return r;
}

// ---- envelope ------------------------------------------------------------

void write_model(const std::string& path, const char* type, json payload) {
    json envelope;
    envelope["magic"] = model_format_magic;
    envelope["version"] = model_format_version;
    envelope["type"] = type;
    envelope["payload"] = std::move(payload);
    std::ofstream file(path, std::ios::binary);
    if (!file) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    file << envelope.dump() << '\n';
    file.flush();
    if (!file) {
        throw IoError("failed writing '" + path + "'");
    }
}

json read_model(const std::string& path, const char* expected_type) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw IoError("cannot open '" + path + "' for reading");
    }
    json envelope;
    try {
        envelope = json::parse(file);
    } catch (const json::exception& e) {
        throw DataError(path + ": not valid JSON: " + e.what());
    }
    if (!envelope.is_object() ||
        as_string(envelope, "magic", path) != model_format_magic) {
        throw DataError(path + ": not a model file (bad magic)");
    }
    const std::string version = as_string(envelope, "version", path);
    const auto dot = version.find('.');
    if (dot == std::string::npos || version.substr(0, dot) != "1") {
        throw DataError(path + ": unsupported model format version '" + version + "'");
    }
    const std::string type = as_string(envelope, "type", path);
    if (expected_type != nullptr && type != expected_type) {
        throw DataError(path + ": model file holds type '" + type + "', expected '" +
                        expected_type + "'");
    }
    json payload = require(envelope, "payload", path);
    if (!payload.is_object()) {
        throw DataError(path + ": key 'payload' must be an object");
    }
    if (expected_type == nullptr) {
        payload = json{{"type", type}};
    }
    return payload;
}

} // namespace

std::string model_type(const std::string& path) {
    return read_model(path, nullptr).at("type").get<std::string>();
}

void save_forest_model(const std::string& path, const QuantileForest& forest) {
    write_model(path, "qrf", encode_forest(forest));
}

void save_fmqrf_model(const std::string& path, const FmQrfModel& model) {
    write_model(path, "fmqrf", encode_fmqrf(model));
}

void save_dynamic_model(const std::string& path, const DynamicFitResult& result) {
    write_model(path, "dynamic", encode_dynamic(result));
}

QuantileForest load_forest_model(const std::string& path) {
    return decode_forest(read_model(path, "qrf"), path);
}

FmQrfModel load_fmqrf_model(const std::string& path) {
    return decode_fmqrf(read_model(path, "fmqrf"), path);
}

DynamicFitResult load_dynamic_model(const std::string& path) {
    return decode_dynamic(read_model(path, "dynamic"), path);
}

} // namespace qrfx
