#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "inilora/error.hpp"

namespace inilora {

/// Dense row-major matrix of doubles.
///
/// Shapes are always positive. Public constructors and the free functions in
/// this header reject non-finite entries; the `kernels` namespace below skips
/// that check and is meant for hot loops that validate their own output.
class Matrix {
public:
    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
        check_shape(rows, cols);
        data_.assign(rows * cols, 0.0);
    }

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        check_shape(rows, cols);
        if (data_.size() != rows * cols) {
            std::ostringstream os;
            os << "matrix data length " << data_.size() << " does not match shape " << rows << "x"
               << cols;
            throw ShapeError(os.str());
        }
        require_finite("matrix construction");
    }

    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ == 0 ? 0 : rows.begin()->size();
        check_shape(rows_, cols_);
        data_.reserve(rows_ * cols_);
        for (const auto& row : rows) {
            if (row.size() != cols_) {
                throw ShapeError("ragged initializer list for matrix");
            }
            data_.insert(data_.end(), row.begin(), row.end());
        }
        require_finite("matrix construction");
    }

    static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }

    static Matrix filled(std::size_t rows, std::size_t cols, double value) {
        return Matrix(rows, cols, std::vector<double>(rows * cols, value));
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            m(i, i) = 1.0;
        }
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const noexcept {
        return {data_.data() + i * cols_, cols_};
    }

    bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    std::string shape_string() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    void require_finite(const char* context) const {
        if (!all_finite()) {
            throw NonFiniteError(std::string(context) + ": non-finite entry in " + shape_string() +
                                 " matrix");
        }
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    static void check_shape(std::size_t rows, std::size_t cols) {
        if (rows == 0 || cols == 0) {
            throw ShapeError("matrix dimensions must be positive, got " + std::to_string(rows) +
                             "x" + std::to_string(cols));
        }
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

namespace detail {

inline void require_same_shape(const Matrix& x, const Matrix& y, const char* op) {
    if (!x.same_shape(y)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + x.shape_string() + " vs " +
                         y.shape_string());
    }
}

inline void require_inner(std::size_t lhs_inner, std::size_t rhs_inner, const Matrix& lhs,
                          const Matrix& rhs, const char* op) {
    if (lhs_inner != rhs_inner) {
        throw ShapeError(std::string(op) + ": dimension mismatch, lhs " + lhs.shape_string() +
                         " rhs " + rhs.shape_string());
    }
}

}  // namespace detail

/// Unchecked inner loops. Callers guarantee shapes; loop orders are fixed so
/// results are bit-stable for identical inputs.
namespace kernels {

// out = lhs * rhs
inline void gemm_nn(const Matrix& lhs, const Matrix& rhs, Matrix& out) {
    const std::size_t n = lhs.rows(), inner = lhs.cols(), m = rhs.cols();
    std::fill(out.values().begin(), out.values().end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double* o = out.row(i).data();
        const double* l = lhs.row(i).data();
        for (std::size_t p = 0; p < inner; ++p) {
            const double s = l[p];
            const double* r = rhs.row(p).data();
            for (std::size_t j = 0; j < m; ++j) {
                o[j] += s * r[j];
            }
        }
    }
}

// out = lhs^T * rhs
inline void gemm_tn(const Matrix& lhs, const Matrix& rhs, Matrix& out) {
    const std::size_t inner = lhs.rows(), n = lhs.cols(), m = rhs.cols();
    std::fill(out.values().begin(), out.values().end(), 0.0);
    for (std::size_t p = 0; p < inner; ++p) {
        const double* l = lhs.row(p).data();
        const double* r = rhs.row(p).data();
        for (std::size_t i = 0; i < n; ++i) {
            const double s = l[i];
            double* o = out.row(i).data();
            for (std::size_t j = 0; j < m; ++j) {
                o[j] += s * r[j];
            }
        }
    }
}

// Four fixed partial sums, combined in a fixed order.
inline double dot(const double* x, const double* y, std::size_t n) noexcept {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        s0 += x[j] * y[j];
        s1 += x[j + 1] * y[j + 1];
        s2 += x[j + 2] * y[j + 2];
        s3 += x[j + 3] * y[j + 3];
    }
    for (; j < n; ++j) {
        s0 += x[j] * y[j];
    }
    return (s0 + s1) + (s2 + s3);
}

// out = lhs * rhs^T
inline void gemm_nt(const Matrix& lhs, const Matrix& rhs, Matrix& out) {
    const std::size_t n = lhs.rows(), inner = lhs.cols(), m = rhs.rows();
    for (std::size_t i = 0; i < n; ++i) {
        const double* l = lhs.row(i).data();
        double* o = out.row(i).data();
        for (std::size_t j = 0; j < m; ++j) {
            o[j] = dot(l, rhs.row(j).data(), inner);
        }
    }
}

}  // namespace kernels

inline Matrix matmul(const Matrix& lhs, const Matrix& rhs) {
    detail::require_inner(lhs.cols(), rhs.rows(), lhs, rhs, "matmul");
    Matrix out(lhs.rows(), rhs.cols());
    kernels::gemm_nn(lhs, rhs, out);
    out.require_finite("matmul");
    return out;
}

/// lhs^T * rhs without materializing the transpose.
inline Matrix matmul_tn(const Matrix& lhs, const Matrix& rhs) {
    detail::require_inner(lhs.rows(), rhs.rows(), lhs, rhs, "matmul_tn");
    Matrix out(lhs.cols(), rhs.cols());
    kernels::gemm_tn(lhs, rhs, out);
    out.require_finite("matmul_tn");
    return out;
}

/// lhs * rhs^T without materializing the transpose.
inline Matrix matmul_nt(const Matrix& lhs, const Matrix& rhs) {
    detail::require_inner(lhs.cols(), rhs.cols(), lhs, rhs, "matmul_nt");
    Matrix out(lhs.rows(), rhs.rows());
    kernels::gemm_nt(lhs, rhs, out);
    out.require_finite("matmul_nt");
    return out;
}

inline Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(j, i) = m(i, j);
        }
    }
    return out;
}

namespace detail {

template <typename Op>
Matrix zip(const Matrix& x, const Matrix& y, const char* name, Op op) {
    require_same_shape(x, y, name);
    Matrix out(x.rows(), x.cols());
    auto o = out.values();
    auto a = x.values();
    auto b = y.values();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = op(a[i], b[i]);
    }
    out.require_finite(name);
    return out;
}

}  // namespace detail

inline Matrix add(const Matrix& x, const Matrix& y) {
    return detail::zip(x, y, "add", [](double a, double b) { return a + b; });
}

inline Matrix subtract(const Matrix& x, const Matrix& y) {
    return detail::zip(x, y, "subtract", [](double a, double b) { return a - b; });
}

inline Matrix scaled(const Matrix& x, double factor) {
    Matrix out = x;
    for (double& v : out.values()) {
        v *= factor;
    }
    out.require_finite("scaled");
    return out;
}

inline double frobenius_sq(const Matrix& m) noexcept {
    double s = 0.0;
    for (double v : m.values()) {
        s += v * v;
    }
    return s;
}

/// Mean of squared entrywise differences.
inline double mse(const Matrix& x, const Matrix& y) {
    detail::require_same_shape(x, y, "mse");
    auto a = x.values();
    auto b = y.values();
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

inline double max_abs_diff(const Matrix& x, const Matrix& y) {
    detail::require_same_shape(x, y, "max_abs_diff");
    auto a = x.values();
    auto b = y.values();
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

inline double max_abs(const Matrix& m) noexcept {
    double worst = 0.0;
    for (double v : m.values()) {
        worst = std::max(worst, std::abs(v));
    }
    return worst;
}

/// max|x - y| / max(max|y|, tiny); zero when both are zero.
inline double relative_diff(const Matrix& x, const Matrix& y) {
    const double diff = max_abs_diff(x, y);
    const double scale = std::max(max_abs(y), max_abs(x));
    if (scale == 0.0) {
        return diff;
    }
    return diff / scale;
}

}  // namespace inilora
