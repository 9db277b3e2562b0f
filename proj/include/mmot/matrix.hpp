#pragma once

#include <cstddef>
#include <vector>

namespace mmot {

/// Row-major dense matrix; only used for small exports and test fixtures.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double sum() const {
        double s = 0.0;
        for (double v : data) s += v;
        return s;
    }
    std::vector<double> row_sums() const {
        std::vector<double> out(rows, 0.0);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) out[i] += (*this)(i, j);
        return out;
    }
    std::vector<double> col_sums() const {
        std::vector<double> out(cols, 0.0);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) out[j] += (*this)(i, j);
        return out;
    }
};

}  // namespace mmot
