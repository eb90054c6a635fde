#pragma once

// CSV ingestion and emission. One generic line-oriented reader/writer
// (headers mandatory, UTF-8, '.' decimal separator, optional RFC-style
// quoting) plus typed loaders for the three schemas used by the tool:
//   panel:          unit, time, y, <x columns...>
//   high-frequency: date, period, y, <covariates...>
//   low-frequency:  period, <Z columns...>
// Numbers are written with 17 significant digits so finite values round-trip
// exactly.

#include <cstdint>
#include <string>
#include <vector>

#include "qrfx/fmqrf.hpp"
#include "qrfx/midas.hpp"

namespace qrfx {

struct CsvTable {
    std::string path; // provenance for error messages
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t n_cols() const { return header.size(); }
    std::size_t n_rows() const { return rows.size(); }

    // Index of the named column; DataError when absent.
    std::size_t column(const std::string& name) const;
};

// Shortest textual form that still parses back to the identical double.
std::string format_double(double value);

// Reads the whole file. IoError when the file cannot be opened; DataError
// (naming the 1-based line and, where known, the column) for an empty file,
// duplicate header names, ragged rows, or an unterminated quote.
CsvTable read_csv(const std::string& path);

// Writes header + rows, quoting any cell containing a comma, quote or
// newline. IoError when the file cannot be written.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// Finite-number cell parse; DataError names the file, line and column.
double parse_cell(const CsvTable& table, std::size_t row, std::size_t col);

// Integer cell parse with the same error context.
std::int64_t parse_cell_int(const CsvTable& table, std::size_t row, std::size_t col);

// Panel schema. Rows are bucketed by unit label in first-appearance order and
// ordered within a unit by the time column (stable for ties). Every column
// other than unit/time/y becomes a feature, in header order.
PanelDataset read_panel_csv(const std::string& path);

// Inverse of read_panel_csv: the time column is the 1-based within-unit row
// index.
void write_panel_csv(const std::string& path, const PanelDataset& panel);

struct HighFreqCsv {
    HighFreqSeries series;          // within = running index per period
    std::vector<std::string> dates; // one per row, kept verbatim
};

// High-frequency schema. Periods must be nondecreasing in file order; every
// column other than date/period/y becomes a daily covariate.
HighFreqCsv read_high_freq_csv(const std::string& path);

// Low-frequency schema. Periods must be strictly increasing; every other
// column becomes a low-frequency covariate.
LowFreqSeries read_low_freq_csv(const std::string& path);

// Predictions artifact: columns row_id, tau, prediction.
void write_predictions_csv(const std::string& path, const std::vector<std::int64_t>& row_ids,
                           const std::vector<double>& taus,
                           const std::vector<double>& predictions);

} // namespace qrfx
