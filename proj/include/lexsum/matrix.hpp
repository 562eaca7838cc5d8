#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "lexsum/errors.hpp"

namespace lexsum {

// Dense row-major matrix of doubles. Loop order is fixed so results are
// bit-identical across runs and platforms.
class Matrix {
public:
    Matrix() : rows_(0), cols_(0) {}
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> data_;
};

namespace detail {
inline void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}
}  // namespace detail

// C = A * B
inline Matrix mul(const Matrix& a, const Matrix& b) {
    detail::require(a.cols() == b.rows(), "mul: inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) {
                c(i, j) += aik * b(k, j);
            }
        }
    }
    return c;
}

// C = A * B^T
inline Matrix mul_abt(const Matrix& a, const Matrix& b) {
    detail::require(a.cols() == b.cols(), "mul_abt: inner dimensions differ");
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
            c(i, j) = s;
        }
    }
    return c;
}

// C = A^T * B
inline Matrix mul_atb(const Matrix& a, const Matrix& b) {
    detail::require(a.rows() == b.rows(), "mul_atb: inner dimensions differ");
    Matrix c(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) {
                c(i, j) += aki * b(k, j);
            }
        }
    }
    return c;
}

// y = A * x
inline std::vector<double> matvec(const Matrix& a, const std::vector<double>& x) {
    detail::require(a.cols() == x.size(), "matvec: dimension mismatch");
    std::vector<double> y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

// y = A^T * x
inline std::vector<double> matvec_t(const Matrix& a, const std::vector<double>& x) {
    detail::require(a.rows() == x.size(), "matvec_t: dimension mismatch");
    std::vector<double> y(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        for (std::size_t j = 0; j < a.cols(); ++j) y[j] += a(i, j) * xi;
    }
    return y;
}

// A += alpha * B
inline void add_scaled(Matrix& a, const Matrix& b, double alpha) {
    detail::require(a.same_shape(b), "add_scaled: shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += alpha * b.data()[i];
}

}  // namespace lexsum
