#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

#include "curvforge/errors.hpp"

namespace curvforge {

// Dense row-major matrix of doubles.  Everything in this library is desk-scale
// (the largest operators are a few hundred rows), so a plain contiguous buffer
// beats any sparse or expression-template machinery for clarity and debugging.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Mat(std::size_t rows, std::size_t cols, std::initializer_list<double> vals)
        : rows_(rows), cols_(cols), data_(vals) {
        if (data_.size() != rows * cols) throw ShapeMismatch("initializer size != rows*cols");
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    double& operator[](std::size_t k) { return data_[k]; }
    double operator[](std::size_t k) const { return data_[k]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    static Mat identity(std::size_t n) {
        Mat I(n, n);
        for (std::size_t i = 0; i < n; ++i) I(i, i) = 1.0;
        return I;
    }
    static Mat ones(std::size_t r, std::size_t c) { return Mat(r, c, 1.0); }

    Mat transpose() const {
        Mat t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool is_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Mat& operator+=(const Mat& o) {
        require_same_shape(o, "+=");
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
        return *this;
    }
    Mat& operator-=(const Mat& o) {
        require_same_shape(o, "-=");
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
        return *this;
    }
    Mat& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    friend Mat operator+(Mat a, const Mat& b) { return a += b; }
    friend Mat operator-(Mat a, const Mat& b) { return a -= b; }
    friend Mat operator*(Mat a, double s) { return a *= s; }
    friend Mat operator*(double s, Mat a) { return a *= s; }

    friend Mat operator*(const Mat& a, const Mat& b) {
        if (a.cols_ != b.rows_)
            throw ShapeMismatch("matmul " + a.shape_str() + " x " + b.shape_str());
        Mat c(a.rows_, b.cols_);
        // (i,k,j) loop order keeps the inner accesses contiguous for row-major data.
        for (std::size_t i = 0; i < a.rows_; ++i) {
            const double* arow = &a.data_[i * a.cols_];
            double* crow = &c.data_[i * b.cols_];
            for (std::size_t k = 0; k < a.cols_; ++k) {
                const double aik = arow[k];
                if (aik == 0.0) continue;
                const double* brow = &b.data_[k * b.cols_];
                for (std::size_t j = 0; j < b.cols_; ++j) crow[j] += aik * brow[j];
            }
        }
        return c;
    }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    void require_same_shape(const Mat& o, const std::string& op) const {
        if (!same_shape(o)) throw ShapeMismatch(op + " on " + shape_str() + " vs " + o.shape_str());
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

// Row-wise vectorization: stacks the rows of A into one column (vec_r(A) = vec(A^T)).
inline Mat vec_r(const Mat& a) {
    Mat v(a.rows() * a.cols(), 1);
    v.data() = a.data();
    return v;
}

inline Mat unvec_r(const Mat& v, std::size_t rows, std::size_t cols) {
    if (v.size() != rows * cols)
        throw ShapeMismatch("unvec_r of " + std::to_string(v.size()) + " into " + std::to_string(rows) + "x" + std::to_string(cols));
    Mat a(rows, cols);
    a.data() = v.data();
    return a;
}

inline Mat kron(const Mat& a, const Mat& b) {
    Mat k(a.rows() * b.rows(), a.cols() * b.cols());
    for (std::size_t ia = 0; ia < a.rows(); ++ia)
        for (std::size_t ja = 0; ja < a.cols(); ++ja) {
            const double av = a(ia, ja);
            if (av == 0.0) continue;
            for (std::size_t ib = 0; ib < b.rows(); ++ib)
                for (std::size_t jb = 0; jb < b.cols(); ++jb)
                    k(ia * b.rows() + ib, ja * b.cols() + jb) = av * b(ib, jb);
        }
    return k;
}

// Entrywise (Hadamard) product.
inline Mat hadamard(const Mat& a, const Mat& b) {
    a.require_same_shape(b, "hadamard");
    Mat c = a;
    for (std::size_t k = 0; k < c.size(); ++k) c[k] *= b[k];
    return c;
}

inline double dot(const Mat& a, const Mat& b) {
    a.require_same_shape(b, "dot");
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

// Gauss-Jordan inverse with partial pivoting; fine at these sizes.
inline Mat inverse(const Mat& a, double eps_sing = 1e-10) {
    if (a.rows() != a.cols()) throw ShapeMismatch("inverse of " + a.shape_str());
    const std::size_t n = a.rows();
    Mat w = a, inv = Mat::identity(n);
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(w(r, col)) > std::abs(w(piv, col))) piv = r;
        if (std::abs(w(piv, col)) < eps_sing) throw SingularMatrix("pivot " + std::to_string(col));
        if (piv != col)
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(w(piv, j), w(col, j));
                std::swap(inv(piv, j), inv(col, j));
            }
        const double d = w(col, col);
        for (std::size_t j = 0; j < n; ++j) {
            w(col, j) /= d;
            inv(col, j) /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = w(r, col);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                w(r, j) -= f * w(col, j);
                inv(r, j) -= f * inv(col, j);
            }
        }
    }
    return inv;
}

// Deterministic Gaussian sampling.  std::normal_distribution is implementation
// defined, so we roll Box-Muller on top of mt19937_64 to keep streams identical
// across standard libraries (report byte-determinism depends on it).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double uniform() {
        // 53-bit mantissa uniform in [0,1)
        return (eng_() >> 11) * 0x1.0p-53;
    }

    double gauss() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0, u2 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    Mat gauss_mat(std::size_t r, std::size_t c, double scale = 1.0) {
        Mat m(r, c);
        for (std::size_t k = 0; k < m.size(); ++k) m[k] = scale * gauss();
        return m;
    }

    std::uint64_t next_u64() { return eng_(); }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace curvforge
