#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "curvforge/mat.hpp"

namespace curvforge {

enum class NormKind { spectral, frobenius, one, inf, max };

inline double frobenius_norm(const Mat& a) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * a[k];
    return std::sqrt(s);
}

inline double max_abs(const Mat& a) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k]));
    return m;
}

inline double one_norm(const Mat& a) {  // max column sum
    double best = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) s += std::abs(a(i, j));
        best = std::max(best, s);
    }
    return best;
}

inline double inf_norm(const Mat& a) {  // max row sum
    double best = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += std::abs(a(i, j));
        best = std::max(best, s);
    }
    return best;
}

namespace detail {

// Cyclic Jacobi eigenvalues of a symmetric matrix.  The grams we feed it are
// at most a few hundred on a side, where Jacobi is simple, robust, and plenty
// fast; returns eigenvalues in unspecified order.
inline std::vector<double> symmetric_eigenvalues(Mat s) {
    const std::size_t n = s.rows();
    if (n == 0) return {};
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += s(i, j) * s(i, j);
        double diag = 0.0;
        for (std::size_t i = 0; i < n; ++i) diag += s(i, i) * s(i, i);
        if (off <= 1e-30 * std::max(diag, 1e-300)) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = s(p, q);
                if (apq == 0.0) continue;
                const double theta = (s(q, q) - s(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), sn = t * c;
                // closed-form pivot update: the rotated pair lands exactly on
                // the diagonal instead of accumulating two rotation roundoffs
                s(p, p) -= t * apq;
                s(q, q) += t * apq;
                s(p, q) = s(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double skp = s(k, p), skq = s(k, q);
                    s(k, p) = s(p, k) = c * skp - sn * skq;
                    s(k, q) = s(q, k) = sn * skp + c * skq;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = s(i, i);
    return ev;
}

} // namespace detail

// Largest singular value via the eigenvalues of the smaller-side gram matrix.
inline double spectral_norm(const Mat& a) {
    if (a.size() == 0) return 0.0;
    const double scale = max_abs(a);
    if (scale == 0.0) return 0.0;
    Mat b = a * (1.0 / scale);  // guard the squared gram against overflow
    Mat gram = (b.rows() <= b.cols()) ? b * b.transpose() : b.transpose() * b;
    double lmax = 0.0;
    for (double ev : detail::symmetric_eigenvalues(gram)) lmax = std::max(lmax, ev);
    return scale * std::sqrt(std::max(0.0, lmax));
}

inline double norm(const Mat& a, NormKind kind) {
    switch (kind) {
        case NormKind::spectral: return spectral_norm(a);
        case NormKind::frobenius: return frobenius_norm(a);
        case NormKind::one: return one_norm(a);
        case NormKind::inf: return inf_norm(a);
        case NormKind::max: return max_abs(a);
    }
    return 0.0;
}

// Power iteration on A^T A with a deterministic start vector.  Kept as an
// independent second opinion on spectral_norm (the two are cross-checked in
// the test suite); converges at a relative Rayleigh tolerance of 1e-12.
inline double power_iteration_norm(const Mat& a, std::size_t max_iters = 10000, double rel_tol = 1e-12) {
    if (a.size() == 0) return 0.0;
    const std::size_t n = a.cols();
    Mat v(n, 1);
    for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i % 7);  // fixed, mildly asymmetric start
    double nv = frobenius_norm(v);
    v *= 1.0 / nv;
    const Mat at = a.transpose();
    double prev = 0.0;
    for (std::size_t it = 0; it < max_iters; ++it) {
        Mat w = at * (a * v);
        const double lambda = dot(v, w);
        const double wn = frobenius_norm(w);
        if (wn == 0.0) return 0.0;
        v = w * (1.0 / wn);
        if (it > 0 && std::abs(lambda - prev) <= rel_tol * std::max(std::abs(lambda), 1e-300))
            return std::sqrt(std::max(0.0, lambda));
        prev = lambda;
    }
    throw ConvergenceFailure("power iteration on " + a.shape_str());
}

// Numerical rank: singular values above tol * sigma_max.
// Singular values of the gram route carry O(sqrt(eps)) relative noise, so the
// default cutoff sits two decades above that floor.
inline std::size_t numerical_rank(const Mat& a, double rel_tol = 1e-6) {
    if (a.size() == 0) return 0;
    const double scale = max_abs(a);
    if (scale == 0.0) return 0;
    Mat b = a * (1.0 / scale);
    Mat gram = (b.rows() <= b.cols()) ? b * b.transpose() : b.transpose() * b;
    auto ev = detail::symmetric_eigenvalues(gram);
    double lmax = 0.0;
    for (double e : ev) lmax = std::max(lmax, e);
    if (lmax <= 0.0) return 0;
    std::size_t r = 0;
    const double cut = rel_tol * rel_tol * lmax;
    for (double e : ev)
        if (e > cut) ++r;
    return r;
}

struct NormInequality {
    std::string name;
    double lhs = 0.0;   // smaller norm
    double rhs = 0.0;   // constant * larger norm
    bool holds = false;
};

// The full cross-norm comparison table: each entry asserts
// ||A||_X <= c(m,n,rank) * ||A||_Y for one ordered pair of norm kinds.
inline std::vector<NormInequality> check_inequality_table(const Mat& a) {
    const double m = static_cast<double>(a.rows());
    const double n = static_cast<double>(a.cols());
    const double d = static_cast<double>(numerical_rank(a));
    const double nmax = max_abs(a), n1 = one_norm(a), ninf = inf_norm(a);
    const double n2 = spectral_norm(a), nf = frobenius_norm(a);
    std::vector<NormInequality> out;
    auto add = [&out](std::string name, double lhs, double rhs) {
        out.push_back({std::move(name), lhs, rhs, lhs <= rhs * (1.0 + 1e-12) + 1e-300});
    };
    add("max<=one", nmax, n1);
    add("max<=inf", nmax, ninf);
    add("max<=spec", nmax, n2);
    add("max<=fro", nmax, nf);
    add("one<=m*max", n1, m * nmax);
    add("one<=m*inf", n1, m * ninf);
    add("one<=sqrt(m)*spec", n1, std::sqrt(m) * n2);
    add("one<=sqrt(m)*fro", n1, std::sqrt(m) * nf);
    add("inf<=n*max", ninf, n * nmax);
    add("inf<=n*one", ninf, n * n1);
    add("inf<=sqrt(n)*spec", ninf, std::sqrt(n) * n2);
    add("inf<=sqrt(n)*fro", ninf, std::sqrt(n) * nf);
    add("spec<=sqrt(mn)*max", n2, std::sqrt(m * n) * nmax);
    add("spec<=sqrt(n)*one", n2, std::sqrt(n) * n1);
    add("spec<=sqrt(m)*inf", n2, std::sqrt(m) * ninf);
    add("spec<=fro", n2, nf);
    add("fro<=sqrt(mn)*max", nf, std::sqrt(m * n) * nmax);
    add("fro<=sqrt(n)*one", nf, std::sqrt(n) * n1);
    add("fro<=sqrt(m)*inf", nf, std::sqrt(m) * ninf);
    add("fro<=sqrt(rank)*spec", nf, std::sqrt(std::max(d, 1.0)) * n2);
    return out;
}

// Spectral norm bound for a grid of blocks: sqrt(mb*nb) * max block norm.
// For a block-diagonal grid the bound tightens to equality with the max.
inline double block_norm_bound(const std::vector<std::vector<Mat>>& blocks) {
    const std::size_t mb = blocks.size();
    if (mb == 0) return 0.0;
    const std::size_t nb = blocks[0].size();
    double mx = 0.0;
    bool diag = (mb == nb);
    for (std::size_t i = 0; i < mb; ++i) {
        if (blocks[i].size() != nb) throw ShapeMismatch("ragged block grid");
        for (std::size_t j = 0; j < nb; ++j) {
            const double bn = spectral_norm(blocks[i][j]);
            mx = std::max(mx, bn);
            if (i != j && bn != 0.0) diag = false;
        }
    }
    return diag ? mx : std::sqrt(static_cast<double>(mb * nb)) * mx;
}

} // namespace curvforge
