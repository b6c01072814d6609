#pragma once

#include <cstddef>
#include <vector>

namespace grape {

// Dense row-major double matrix, the carrier for activations, weights and
// similarity blocks. Construction from explicit values rejects non-finite
// entries so downstream code never re-checks.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // rows * cols, row-major

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);  // zero-filled
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    double & at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    static Matrix identity(std::size_t n);
};

bool same_shape(const Matrix & a, const Matrix & b);

// Standard product with fixed row-major, left-to-right accumulation, so
// results are bit-reproducible run to run.
Matrix matmul(const Matrix & a, const Matrix & b);

Matrix transpose(const Matrix & x);

// Subtracts each column's mean; shape preserved.
Matrix center_columns(const Matrix & x);

double frobenius_norm(const Matrix & x);

// Mean squared elementwise difference.
double mean_squared_error(const Matrix & a, const Matrix & b);

}  // namespace grape
