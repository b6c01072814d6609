#include "grape/matrix.hpp"

#include <cmath>
#include <string>

#include "grape/errors.hpp"

namespace grape {

namespace {

void check_finite(const std::vector<double> & values) {
    for (double x : values) {
        if (!std::isfinite(x)) {
            throw DataError("non_finite", "matrix entry is not finite");
        }
    }
}

std::string shape_str(const Matrix & m) {
    return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

}  // namespace

Matrix::Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != rows * cols) {
        throw DataError("shape_mismatch", "matrix data length " + std::to_string(data.size()) +
                                              " does not match shape " + shape_str(*this));
    }
    check_finite(data);
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m.at(i, i) = 1.0;
    }
    return m;
}

bool same_shape(const Matrix & a, const Matrix & b) {
    return a.rows == b.rows && a.cols == b.cols;
}

Matrix matmul(const Matrix & a, const Matrix & b) {
    if (a.cols != b.rows) {
        throw DataError("shape_mismatch",
                        "matmul: " + shape_str(a) + " is incompatible with " + shape_str(b));
    }
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                acc += a.at(i, k) * b.at(k, j);
            }
            out.at(i, j) = acc;
        }
    }
    check_finite(out.data);
    return out;
}

Matrix transpose(const Matrix & x) {
    Matrix out(x.cols, x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t j = 0; j < x.cols; ++j) {
            out.at(j, i) = x.at(i, j);
        }
    }
    return out;
}

Matrix center_columns(const Matrix & x) {
    if (x.rows == 0) {
        throw DataError("degenerate_input", "center_columns requires at least one row");
    }
    std::vector<double> mean(x.cols, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t j = 0; j < x.cols; ++j) {
            mean[j] += x.at(i, j);
        }
    }
    for (std::size_t j = 0; j < x.cols; ++j) {
        mean[j] /= static_cast<double>(x.rows);
    }
    Matrix out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t j = 0; j < x.cols; ++j) {
            out.at(i, j) = x.at(i, j) - mean[j];
        }
    }
    return out;
}

double frobenius_norm(const Matrix & x) {
    double acc = 0.0;
    for (double v : x.data) {
        acc += v * v;
    }
    return std::sqrt(acc);
}

double mean_squared_error(const Matrix & a, const Matrix & b) {
    if (!same_shape(a, b)) {
        throw DataError("shape_mismatch", "mean_squared_error: " + shape_str(a) + " vs " + shape_str(b));
    }
    if (a.data.empty()) {
        return 0.0;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

}  // namespace grape
