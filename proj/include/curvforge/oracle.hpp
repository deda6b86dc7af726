#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>

#include "curvforge/mat.hpp"
#include "curvforge/norms.hpp"

// Finite-difference ground truth.  Every analytic derivative in this library
// is tested against these routines; they deliberately share no code with the
// closed-form implementations.

namespace curvforge {

enum class FdScheme { central, richardson };

struct FdConfig {
    double step = 1e-5;             // base h; per entry h_k = step * (1 + |x_k|)
    FdScheme scheme = FdScheme::central;
    double rel_tol = 1e-6;          // Jacobian default; Hessian checks pass 1e-4
    double abs_tol = 1e-12;
};

using MatFn = std::function<Mat(const Mat&)>;
using ScalarFn = std::function<double(const Mat&)>;

// Central differences column by column: column k approximates d vec_r(f) / dx_k.
inline Mat fd_jacobian(const MatFn& f, const Mat& x0, const FdConfig& cfg = {}) {
    const Mat y0 = f(x0);
    if (!y0.is_finite()) throw NonFiniteOutput("fd_jacobian base point");
    Mat jac(y0.size(), x0.size());
    auto central = [&](std::size_t k, double h) {
        Mat xp = x0, xm = x0;
        xp[k] += h;
        xm[k] -= h;
        const Mat yp = f(xp), ym = f(xm);
        if (!yp.is_finite() || !ym.is_finite()) throw NonFiniteOutput("fd_jacobian probe " + std::to_string(k));
        Mat col = yp;
        col -= ym;
        col *= 1.0 / (2.0 * h);
        return col;
    };
    for (std::size_t k = 0; k < x0.size(); ++k) {
        const double h = cfg.step * (1.0 + std::abs(x0[k]));
        Mat col = central(k, h);
        if (cfg.scheme == FdScheme::richardson) {
            // (4 D(h/2) - D(h)) / 3 removes the O(h^2) term of the central stencil.
            Mat fine = central(k, h / 2.0);
            col = fine * (4.0 / 3.0) - col * (1.0 / 3.0);
        }
        for (std::size_t r = 0; r < col.size(); ++r) jac(r, k) = col[r];
    }
    return jac;
}

// Symmetric four-point mixed partials of a scalar function of a flat parameter
// vector (passed as an n x 1 Mat); output is explicitly symmetrized.
inline Mat fd_hessian_of_scalar(const ScalarFn& g, const Mat& w0, const FdConfig& cfg = {}) {
    const std::size_t n = w0.size();
    Mat h(n, n);
    auto at = [&](std::size_t i, double hi, std::size_t j, double hj) {
        Mat w = w0;
        w[i] += hi;
        w[j] += hj;
        const double v = g(w);
        if (!std::isfinite(v)) throw NonFiniteOutput("fd_hessian probe");
        return v;
    };
    for (std::size_t i = 0; i < n; ++i) {
        const double hi = cfg.step * (1.0 + std::abs(w0[i]));
        for (std::size_t j = i; j < n; ++j) {
            const double hj = cfg.step * (1.0 + std::abs(w0[j]));
            const double v = (at(i, hi, j, hj) - at(i, hi, j, -hj) - at(i, -hi, j, hj) + at(i, -hi, j, -hj)) / (4.0 * hi * hj);
            h(i, j) = v;
            h(j, i) = v;
        }
    }
    return h;
}

struct ComparisonReport {
    double max_abs_err = 0.0;
    double rel_fro_err = 0.0;
    bool pass = false;
    std::uint64_t seed = 0;   // recorded by callers for replay
    std::string label;
};

inline ComparisonReport compare(const Mat& analytic, const Mat& numeric, const FdConfig& cfg = {}) {
    analytic.require_same_shape(numeric, "compare");
    ComparisonReport rep;
    Mat diff = analytic;
    diff -= numeric;
    rep.max_abs_err = max_abs(diff);
    rep.rel_fro_err = frobenius_norm(diff) / std::max(frobenius_norm(numeric), cfg.abs_tol);
    rep.pass = rep.rel_fro_err <= cfg.rel_tol;
    return rep;
}

} // namespace curvforge
