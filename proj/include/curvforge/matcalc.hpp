#pragma once

#include <cmath>
#include <cstddef>

#include "curvforge/mat.hpp"

// Matrix-calculus building blocks under row-wise vectorization.  Every
// derivative in this library is a plain matrix: the Jacobian of F(X) with
// F in R^{p x q} and X in R^{m x n} is the (pq) x (mn) matrix
//   J[(i*q+j), (a*n+b)] = dF_ij / dX_ab,
// i.e. d vec_r(F) / d vec_r(X)^T.  Second derivatives re-apply the same
// convention to vec_r(J), giving a (pq*mn) x (mn) stack.

namespace curvforge {

// Permutation K_{m,n} with K_{m,n} vec(A) = vec(A^T) for A in R^{m x n};
// equivalently vec_r(A) = K_{m,n} vec(A) and d vec_r(A^T) = K_{n,m} d vec_r(A).
inline Mat commutation(std::size_t m, std::size_t n) {
    Mat k(m * n, m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) k(i * n + j, j * m + i) = 1.0;
    return k;
}

// Entrywise power A^{o alpha}.  Non-integer exponents require positive entries.
inline Mat hadamard_pow(const Mat& a, double alpha) {
    const bool integral = alpha == std::floor(alpha);
    Mat r = a;
    for (std::size_t k = 0; k < r.size(); ++k) {
        if (!integral && r[k] <= 0.0)
            throw NonPositiveEntry("hadamard_pow alpha=" + std::to_string(alpha));
        r[k] = std::pow(r[k], alpha);
    }
    return r;
}

inline Mat diag_from_vec(const Mat& v) {
    if (v.cols() != 1) throw ShapeMismatch("diag_from_vec wants a column, got " + v.shape_str());
    Mat d(v.rows(), v.rows());
    for (std::size_t i = 0; i < v.rows(); ++i) d(i, i) = v[i];
    return d;
}

inline Mat diag_inv_from_vec(const Mat& v, double eps_sing = 1e-10) {
    if (v.cols() != 1) throw ShapeMismatch("diag_inv_from_vec wants a column, got " + v.shape_str());
    Mat d(v.rows(), v.rows());
    for (std::size_t i = 0; i < v.rows(); ++i) {
        if (std::abs(v[i]) < eps_sing) throw SingularMatrix("diag entry " + std::to_string(i));
        d(i, i) = 1.0 / v[i];
    }
    return d;
}

// d vec_r(diag(v)) / d v: the L^2 x L selection (e_1 kron e_1, ..., e_L kron e_L).
inline Mat diag_map_jacobian(std::size_t L) {
    Mat e(L * L, L);
    for (std::size_t i = 0; i < L; ++i) e(i * L + i, i) = 1.0;
    return e;
}

// d vec_r(D^{-1}) / d vec_r(D) = -(D^{-1} kron D^{-T}).
inline Mat inverse_jacobian(const Mat& d, double eps_sing = 1e-10) {
    Mat di = inverse(d, eps_sing);
    return -1.0 * kron(di, di.transpose());
}

// Product rule: for A in R^{p x r}, B in R^{r x q} depending on a common X,
//   d vec_r(AB) = (A kron I_q) dB + (I_p kron B^T) dA.
// Pass nullptr for a factor that does not depend on X.
inline Mat product_rule(const Mat& a, const Mat* da, const Mat& b, const Mat* db) {
    if (a.cols() != b.rows()) throw ShapeMismatch("product_rule " + a.shape_str() + " x " + b.shape_str());
    const std::size_t p = a.rows(), q = b.cols();
    const std::size_t nx = da ? da->cols() : (db ? db->cols() : 0);
    Mat out(p * q, nx);
    if (db) out += kron(a, Mat::identity(q)) * (*db);
    if (da) out += kron(Mat::identity(p), b.transpose()) * (*da);
    return out;
}

// Kronecker rule: for A in R^{n x q}, B in R^{p x r},
//   d vec_r(A kron B) = (I_n kron K_{p,q} kron I_r) [ (vec_r A kron I_{pr}) dB
//                                                   + (I_{nq} kron vec_r B) dA ].
inline Mat kron_rule(const Mat& a, const Mat* da, const Mat& b, const Mat* db) {
    const std::size_t n = a.rows(), q = a.cols(), p = b.rows(), r = b.cols();
    const std::size_t nx = da ? da->cols() : (db ? db->cols() : 0);
    Mat inner(n * q * p * r, nx);
    if (db) inner += kron(vec_r(a), Mat::identity(p * r)) * (*db);
    if (da) inner += kron(Mat::identity(n * q), vec_r(b)) * (*da);
    return kron(Mat::identity(n), kron(commutation(p, q), Mat::identity(r))) * inner;
}

} // namespace curvforge
