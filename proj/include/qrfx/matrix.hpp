#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qrfx/errors.hpp"

namespace qrfx {

// Dense row-major matrix of doubles. Deliberately minimal: the library only
// needs element access, row views and column extraction; all linear algebra
// lives in numerics.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) return {};
        Matrix m(rows.size(), rows.front().size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != m.cols_)
                throw InvalidInput("Matrix::from_rows: ragged input at row " + std::to_string(r));
            for (std::size_t c = 0; c < m.cols_; ++c) m(r, c) = rows[r][c];
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return rows_ == 0 || cols_ == 0; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<const double> row(std::size_t r) const {
        return {data_.data() + r * cols_, cols_};
    }
    std::span<double> row(std::size_t r) {
        return {data_.data() + r * cols_, cols_};
    }

    std::vector<double> col(std::size_t c) const {
        std::vector<double> out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
        return out;
    }

    void set_col(std::size_t c, const std::vector<double>& values) {
        if (values.size() != rows_)
            throw InvalidInput("Matrix::set_col: length mismatch");
        for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
    }

    // Returns a copy with `values` appended as a new rightmost column.
    Matrix with_column(const std::vector<double>& values) const {
        if (rows_ != 0 && values.size() != rows_)
            throw InvalidInput("Matrix::with_column: length mismatch");
        Matrix out(rows_ == 0 ? values.size() : rows_, cols_ + 1);
        for (std::size_t r = 0; r < out.rows_; ++r) {
            for (std::size_t c = 0; c < cols_; ++c) out(r, c) = (*this)(r, c);
            out(r, cols_) = values[r];
        }
        return out;
    }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

} // namespace qrfx
