#include "qrfx/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "qrfx/errors.hpp"

namespace qrfx {

namespace {

std::string where(const std::string& path, std::size_t line_1based) {
    return path + ":" + std::to_string(line_1based);
}

// Splits one physical line into cells. Quoted cells may contain commas and
// doubled quotes; embedded newlines are not supported.
std::vector<std::string> split_line(const std::string& line, const std::string& path,
                                    std::size_t lineno) {
    std::vector<std::string> cells;
    std::string cell;
    std::size_t i = 0;
    const std::size_t n = line.size();
    while (true) {
        cell.clear();
        if (i < n && line[i] == '"') {
            ++i;
            bool closed = false;
            while (i < n) {
                if (line[i] == '"') {
                    if (i + 1 < n && line[i + 1] == '"') {
                        cell.push_back('"');
                        i += 2;
                    } else {
                        ++i;
                        closed = true;
                        break;
                    }
                } else {
                    cell.push_back(line[i]);
                    ++i;
                }
            }
            if (!closed) {
                throw DataError(where(path, lineno) + ": unterminated quoted field");
            }
            if (i < n && line[i] != ',') {
                throw DataError(where(path, lineno) +
                                ": malformed quoting (text after closing quote)");
            }
        } else {
            while (i < n && line[i] != ',') {
                cell.push_back(line[i]);
                ++i;
            }
        }
        cells.push_back(cell);
        if (i >= n) break;
        ++i; // skip the comma; a trailing comma yields a final empty cell
    }
    return cells;
}

bool needs_quoting(const std::string& cell) {
    return cell.find_first_of(",\"\n\r") != std::string::npos;
}

void write_cell(std::ostream& out, const std::string& cell) {
    if (!needs_quoting(cell)) {
        out << cell;
        return;
    }
    out << '"';
    for (char c : cell) {
        if (c == '"') out << "\"\"";
        else out << c;
    }
    out << '"';
}

// 1-based data line number of a row index (header is line 1).
std::size_t row_line(std::size_t row) { return row + 2; }

std::string cell_context(const CsvTable& t, std::size_t row, std::size_t col) {
    return where(t.path, row_line(row)) + ": column '" + t.header[col] + "'";
}

} // namespace

std::size_t CsvTable::column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
        throw DataError(path + ": missing required column '" + name + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
}

std::string format_double(double value) {
    char buf[64];
    // 17 significant digits guarantee an exact round-trip for finite doubles;
    // afterwards trim to the shortest representation that still parses back
    // to the identical value.
    for (int precision : {15, 16, 17}) {
        std::snprintf(buf, sizeof(buf), "%.*g", precision, value);
        double back = 0.0;
        auto [ptr, ec] = std::from_chars(buf, buf + std::char_traits<char>::length(buf), back);
        if (ec == std::errc() && *ptr == '\0' && back == value) {
            return buf;
        }
    }
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

CsvTable read_csv(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw IoError("cannot open '" + path + "' for reading");
    }
    CsvTable table;
    table.path = path;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(file, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() && file.peek() == std::char_traits<char>::eof()) {
            break; // trailing newline at end of file
        }
        auto cells = split_line(line, path, lineno);
        if (lineno == 1) {
            table.header = std::move(cells);
            continue;
        }
        if (cells.size() != table.header.size()) {
            throw DataError(where(path, lineno) + ": expected " +
                            std::to_string(table.header.size()) + " columns, found " +
                            std::to_string(cells.size()));
        }
        table.rows.push_back(std::move(cells));
    }
    if (table.header.empty()) {
        throw DataError(path + ": empty file (a header row is required)");
    }
    std::unordered_set<std::string> seen;
    for (const auto& name : table.header) {
        if (name.empty()) {
            throw DataError(path + ":1: empty column name in header");
        }
        if (!seen.insert(name).second) {
            throw DataError(path + ":1: duplicate column name '" + name + "'");
        }
    }
    return table;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream file(path, std::ios::binary);
    if (!file) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c) file << ',';
        write_cell(file, header[c]);
    }
    file << '\n';
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) file << ',';
            write_cell(file, row[c]);
        }
        file << '\n';
    }
    file.flush();
    if (!file) {
        throw IoError("failed writing '" + path + "'");
    }
}

double parse_cell(const CsvTable& table, std::size_t row, std::size_t col) {
    const std::string& cell = table.rows[row][col];
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw DataError(cell_context(table, row, col) + ": cannot parse '" + cell +
                        "' as a number");
    }
    if (!std::isfinite(value)) {
        throw DataError(cell_context(table, row, col) + ": non-finite value '" + cell + "'");
    }
    return value;
}

std::int64_t parse_cell_int(const CsvTable& table, std::size_t row, std::size_t col) {
    const std::string& cell = table.rows[row][col];
    std::int64_t value = 0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw DataError(cell_context(table, row, col) + ": cannot parse '" + cell +
                        "' as an integer");
    }
    return value;
}

PanelDataset read_panel_csv(const std::string& path) {
    CsvTable table = read_csv(path);
    const std::size_t unit_col = table.column("unit");
    const std::size_t time_col = table.column("time");
    const std::size_t y_col = table.column("y");

    std::vector<std::size_t> feature_cols;
    std::vector<std::string> feature_names;
    for (std::size_t c = 0; c < table.n_cols(); ++c) {
        if (c == unit_col || c == time_col || c == y_col) continue;
        feature_cols.push_back(c);
        feature_names.push_back(table.header[c]);
    }
    if (feature_cols.empty()) {
        throw DataError(path + ": panel file needs at least one feature column "
                                "besides unit/time/y");
    }
    if (table.n_rows() == 0) {
        throw DataError(path + ": no data rows");
    }

    // Bucket rows per unit label in first-appearance order, then order each
    // bucket by the time column (stable for ties).
    std::vector<std::string> bucket_labels;
    std::unordered_map<std::string, std::size_t> bucket_of;
    std::vector<std::vector<std::size_t>> buckets;
    std::vector<std::int64_t> times(table.n_rows());
    for (std::size_t r = 0; r < table.n_rows(); ++r) {
        times[r] = parse_cell_int(table, r, time_col);
        const std::string& label = table.rows[r][unit_col];
        if (label.empty()) {
            throw DataError(where(path, row_line(r)) + ": empty unit label");
        }
        auto [it, inserted] = bucket_of.try_emplace(label, buckets.size());
        if (inserted) {
            buckets.emplace_back();
            bucket_labels.push_back(label);
        }
        buckets[it->second].push_back(r);
    }
    for (auto& bucket : buckets) {
        std::stable_sort(bucket.begin(), bucket.end(),
                         [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
    }

    Matrix X(table.n_rows(), feature_cols.size());
    std::vector<double> y(table.n_rows());
    std::vector<std::string> labels(table.n_rows());
    std::size_t out = 0;
    for (std::size_t b = 0; b < buckets.size(); ++b) {
        for (std::size_t r : buckets[b]) {
            for (std::size_t j = 0; j < feature_cols.size(); ++j) {
                X(out, j) = parse_cell(table, r, feature_cols[j]);
            }
            y[out] = parse_cell(table, r, y_col);
            labels[out] = bucket_labels[b];
            ++out;
        }
    }
    return PanelDataset::from_rows(X, y, labels, feature_names);
}

void write_panel_csv(const std::string& path, const PanelDataset& panel) {
    std::vector<std::string> header = {"unit", "time", "y"};
    header.insert(header.end(), panel.feature_names.begin(), panel.feature_names.end());
    std::vector<std::vector<std::string>> rows;
    rows.reserve(panel.n_obs());
    for (std::size_t i = 0; i < panel.n_units(); ++i) {
        std::int64_t t = 0;
        for (std::size_t r = panel.unit_start[i]; r < panel.unit_start[i + 1]; ++r) {
            std::vector<std::string> row;
            row.reserve(header.size());
            row.push_back(panel.unit_labels[i]);
            row.push_back(std::to_string(++t));
            row.push_back(format_double(panel.y[r]));
            for (std::size_t j = 0; j < panel.X.cols(); ++j) {
                row.push_back(format_double(panel.X(r, j)));
            }
            rows.push_back(std::move(row));
        }
    }
    write_csv(path, header, rows);
}

HighFreqCsv read_high_freq_csv(const std::string& path) {
    CsvTable table = read_csv(path);
    const std::size_t date_col = table.column("date");
    const std::size_t period_col = table.column("period");
    const std::size_t y_col = table.column("y");

    std::vector<std::size_t> cov_cols;
    std::vector<std::string> cov_names;
    for (std::size_t c = 0; c < table.n_cols(); ++c) {
        if (c == date_col || c == period_col || c == y_col) continue;
        cov_cols.push_back(c);
        cov_names.push_back(table.header[c]);
    }
    if (table.n_rows() == 0) {
        throw DataError(path + ": no data rows");
    }

    HighFreqCsv out;
    out.series.period.resize(table.n_rows());
    out.series.within.resize(table.n_rows());
    out.series.y.resize(table.n_rows());
    out.series.X = Matrix(table.n_rows(), cov_cols.size());
    out.series.x_names = cov_names;
    out.dates.resize(table.n_rows());

    std::int64_t within = 0;
    for (std::size_t r = 0; r < table.n_rows(); ++r) {
        const std::int64_t period = parse_cell_int(table, r, period_col);
        if (r > 0) {
            if (period < out.series.period[r - 1]) {
                throw DataError(where(path, row_line(r)) +
                                ": column 'period': periods must be nondecreasing");
            }
            within = (period == out.series.period[r - 1]) ? within + 1 : 0;
        }
        out.series.period[r] = period;
        out.series.within[r] = within;
        out.series.y[r] = parse_cell(table, r, y_col);
        for (std::size_t j = 0; j < cov_cols.size(); ++j) {
            out.series.X(r, j) = parse_cell(table, r, cov_cols[j]);
        }
        out.dates[r] = table.rows[r][date_col];
    }
    return out;
}

LowFreqSeries read_low_freq_csv(const std::string& path) {
    CsvTable table = read_csv(path);
    const std::size_t period_col = table.column("period");

    std::vector<std::size_t> z_cols;
    std::vector<std::string> z_names;
    for (std::size_t c = 0; c < table.n_cols(); ++c) {
        if (c == period_col) continue;
        z_cols.push_back(c);
        z_names.push_back(table.header[c]);
    }
    if (z_cols.empty()) {
        throw DataError(path + ": low-frequency file needs at least one value column "
                                "besides period");
    }
    if (table.n_rows() == 0) {
        throw DataError(path + ": no data rows");
    }

    LowFreqSeries low;
    low.periods.resize(table.n_rows());
    low.values = Matrix(table.n_rows(), z_cols.size());
    low.names = z_names;
    for (std::size_t r = 0; r < table.n_rows(); ++r) {
        low.periods[r] = parse_cell_int(table, r, period_col);
        if (r > 0 && low.periods[r] <= low.periods[r - 1]) {
            throw DataError(where(path, row_line(r)) +
                            ": column 'period': periods must be strictly increasing");
        }
        for (std::size_t j = 0; j < z_cols.size(); ++j) {
            low.values(r, j) = parse_cell(table, r, z_cols[j]);
        }
    }
    return low;
}

void write_predictions_csv(const std::string& path, const std::vector<std::int64_t>& row_ids,
                           const std::vector<double>& taus,
                           const std::vector<double>& predictions) {
    if (row_ids.size() != taus.size() || row_ids.size() != predictions.size()) {
        throw InvalidInput("write_predictions_csv: column length mismatch");
    }
    std::vector<std::vector<std::string>> rows;
    rows.reserve(row_ids.size());
    for (std::size_t i = 0; i < row_ids.size(); ++i) {
        rows.push_back({std::to_string(row_ids[i]), format_double(taus[i]),
                        format_double(predictions[i])});
    }
    write_csv(path, {"row_id", "tau", "prediction"}, rows);
}

} // namespace qrfx
