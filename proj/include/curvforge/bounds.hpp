#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "curvforge/block.hpp"
#include "curvforge/norms.hpp"

// A-priori spectral-norm bounds on the curvature of self-attention and of the
// full block, phrased purely in terms of input/weight/target norms and the
// model dimensions, plus the measured quantities they dominate.
//
// The chains that route through the softmax first derivative use the estimate
// ||dA/dT|| <= 1/L, which holds near uniform attention (it is attained exactly
// there) but not for arbitrary logits.  attention_regular() tests that premise
// so callers can restrict bound evaluation to the regime where every link in
// the chain is an actual inequality.

namespace curvforge {

struct BoundReport {
    std::string name;
    double lhs = 0.0;   // measured quantity
    double rhs = 0.0;   // closed-form bound
    double slack = 0.0; // rhs - lhs
    bool pass = false;  // lhs <= rhs (with tiny relative cushion for roundoff)
    std::uint64_t seed = 0;
};

inline BoundReport make_bound(std::string name, double lhs, double rhs, std::uint64_t seed = 0) {
    BoundReport r;
    r.name = std::move(name);
    r.lhs = lhs;
    r.rhs = rhs;
    r.slack = rhs - lhs;
    r.pass = lhs <= rhs * (1.0 + 1e-12) + 1e-300;
    r.seed = seed;
    return r;
}

// Smallest per-row standard deviation of the centered input: the conditioning
// parameter of the layer-norm bounds.
inline double input_sigma_min(const Mat& x) {
    return ln_sigma_min(ln_forward(x));
}

struct LnBounds {
    double jacobian = 0.0;
    double hessian = 0.0;
};

// Layer-norm curvature bounds for an m x n input with ||X|| <= x and per-row
// std >= s:
//   ||J|| <= 1/s + x^2/(sqrt(n) s^3)
//   ||H|| <= (x/s^3)(1 + sqrt(m/n)) + x^2/(sqrt(n) s^3) + 3 x^3/(n s^5)
inline LnBounds ln_norm_bounds(const Mat& x) {
    const double m = static_cast<double>(x.rows());
    const double n = static_cast<double>(x.cols());
    const double s = input_sigma_min(x);
    const double xn = spectral_norm(x);
    LnBounds b;
    b.jacobian = 1.0 / s + xn * xn / (std::sqrt(n) * s * s * s);
    b.hessian = (xn / (s * s * s)) * (1.0 + std::sqrt(m / n)) +
                xn * xn / (std::sqrt(n) * s * s * s) +
                3.0 * xn * xn * xn / (n * s * s * s * s * s);
    return b;
}

enum class BoundVariant { appendix, maintext };

enum class RankMode { dimension_min, numerical };

// Curvature constant M for the self-attention mean squared error: the loss
// Hessian over (W_K, W_Q, W_V) satisfies ||H|| <= M.
inline double sa_hessian_bound(const Mat& x, const Mat& target, const AttnParams& p,
                               BoundVariant variant = BoundVariant::appendix,
                               RankMode rank_mode = RankMode::dimension_min) {
    const double L = static_cast<double>(x.rows());
    const double dV = static_cast<double>(x.cols());
    const double dK = static_cast<double>(p.W_Q.cols());
    const double xn = spectral_norm(x);
    const double wq = spectral_norm(p.W_Q);
    const double wk = spectral_norm(p.W_K);
    const double wv = spectral_norm(p.W_V);
    const double tg = spectral_norm(target);
    double r;
    if (rank_mode == RankMode::dimension_min) {
        r = std::min(L, dV);
    } else {
        const AttnState st = attn_forward(x, p);
        r = static_cast<double>(numerical_rank(st.F - target));
        r = std::max(r, 1.0);
    }
    const double sr = std::sqrt(r);
    const double res = L * xn * wv + tg;  // Frobenius residual over sqrt(rank)
    double t1, t2, t3, t4;
    const double x3 = xn * xn * xn, x4 = x3 * xn, x5 = x4 * xn, x6 = x5 * xn;
    if (variant == BoundVariant::appendix) {
        t1 = 2.0 * L / dV * xn * xn;
        t2 = 2.0 / (L * L * L * dV * dK) * wk * wk * wv * wv * x6 +
             12.0 / (dV * dK) * sr * res * wv * wk * wk * x5;
        t3 = 2.0 / (L * dV * std::sqrt(dK)) * wv * wk * x4 +
             2.0 * sr / (L * L * std::sqrt(dV * dK)) * res * wk * x3;
        t4 = 2.0 / (L * L * L * dV * dK) * wk * wq * wv * wv * x6 +
             2.0 * sr * res / (L * dV * std::sqrt(dV * dK)) * wv * (3.0 * L * wk * wq * x5 + dV / L * x3);
    } else {
        t1 = 2.0 * L / dV * xn * xn;
        t2 = 8.0 / (L * L * L * dV * dK) * wk * wk * wv * wv * x6 +
             12.0 / (dV * dK) * sr * res * wv * wk * wk * x5;
        t3 = 4.0 / (L * dV * std::sqrt(dK)) * wv * wk * x4 +
             4.0 * sr / (L * L * std::sqrt(dK)) * res * wk * x3;
        t4 = 8.0 / (L * L * L * dV * dK) * wk * wq * wv * wv * x6 +
             4.0 * sr * res / (L * dV * std::sqrt(dK)) * wv * (3.0 * L * wk * wq * x5 + dV / L * x3);
    }
    return 3.0 * std::max({t1, t2, t3, t4});
}

// Dense loss Hessian of the self-attention-only model over (W_K, W_Q, W_V):
// the measured counterpart of sa_hessian_bound.
inline Mat sa_loss_hessian(const Mat& x, const Mat& target, const AttnParams& p) {
    const AttnState st = attn_forward(x, p);
    const std::size_t L = st.L, dV = st.d_V;
    const double c = 2.0 / static_cast<double>(L * dV);
    const Mat res_t = vec_r(st.F - target).transpose();
    const std::array<WeightTag, 3> order = {WeightTag::K, WeightTag::Q, WeightTag::V};
    std::size_t n = 0;
    for (WeightTag w : order) n += attn_nparam(st, w);
    Mat h(n, n);
    std::size_t ro = 0;
    for (WeightTag wi : order) {
        const std::size_t ni = attn_nparam(st, wi);
        const Mat gi = attn_g(st, wi);
        std::size_t co = 0;
        for (WeightTag wj : order) {
            const std::size_t nj = attn_nparam(st, wj);
            Mat blk = gi.transpose() * attn_g(st, wj);
            blk += kron(res_t, Mat::identity(ni)) * phi(st, wi, wj);
            for (std::size_t i = 0; i < ni; ++i)
                for (std::size_t j = 0; j < nj; ++j)
                    h(ro + i, co + j) = c * blk(i, j);
            co += nj;
        }
        ro += ni;
    }
    return h;
}

// Bound on the bare second derivative ||Phi_{ij}|| of attention output wrt
// weights, valid when attention_regular() holds.
inline double phi_norm_bound(const AttnState& st, WeightTag wi, WeightTag wj) {
    const double L = static_cast<double>(st.L);
    const double dV = static_cast<double>(st.d_V);
    const double dK = static_cast<double>(st.d_K);
    const double xn = spectral_norm(st.X);
    const double wq = spectral_norm(st.p.W_Q);
    const double wk = spectral_norm(st.p.W_K);
    const double wv = spectral_norm(st.p.W_V);
    const double z1b = xn * xn * xn / L;
    const double z2b = 6.0 * xn * xn * xn * xn * xn;
    if (wi == WeightTag::V && wj == WeightTag::V) return 0.0;
    if (wi == WeightTag::V) {
        const double w = (wj == WeightTag::Q) ? wk : wq;
        return std::sqrt(dV) * z1b * w / std::sqrt(dK);
    }
    if (wj == WeightTag::V) {
        const double w = (wi == WeightTag::Q) ? wk : wq;
        return std::sqrt(L) * xn * (1.0 / L) * xn * xn * w / std::sqrt(dK);
    }
    if (wi == wj) {
        const double w = (wi == WeightTag::Q) ? wk : wq;
        return (1.0 / dK) * wv * w * w * z2b;
    }
    return (1.0 / dK) * wv * wk * wq * z2b + std::sqrt(dV) * wv * z1b / std::sqrt(dK);
}

// True when the softmax first derivative at this input satisfies the 1/L
// estimate used in the mixed curvature chains.
inline bool attention_regular(const AttnState& st, double cushion = 1.0) {
    return spectral_norm(softmax_jacobian(st.A)) <= cushion / static_cast<double>(st.L);
}

// Per-block and aggregate curvature bounds for the full transformer block.
class TransformerHessianBound {
public:
    TransformerHessianBound(const BlockState& st, const Mat& target) : st_(st) {
        const double L = static_cast<double>(st.L);
        const double dV = static_cast<double>(st.d_V);
        const double dK = static_cast<double>(st.d_K);
        const double dff = static_cast<double>(st.d_ff);
        x_ = spectral_norm(st.X);
        w1_ = spectral_norm(st.p.ffn.W1);
        w2_ = spectral_norm(st.p.ffn.W2);
        const double wq = spectral_norm(st.p.attn.W_Q);
        const double wk = spectral_norm(st.p.attn.W_K);
        const double wv = spectral_norm(st.p.attn.W_V);
        lnY_ = ln_norm_bounds(st.S0);
        lnZ_ = ln_norm_bounds(st.ff.S);
        yb_ = std::sqrt(L * dV);  // LN output rows are unit-norm times sqrt(n)
        sb_ = std::sqrt(L * dV) * (1.0 + std::sqrt(std::min(L, dff)) * w1_ * w2_);
        jsyb_ = w1_ * w2_ + 1.0;
        gb_[WeightTag::V] = L * x_;
        gb_[WeightTag::Q] = wv * wk * x_ * x_ * x_ / (L * std::sqrt(dK));
        gb_[WeightTag::K] = wv * wq * x_ * x_ * x_ / (L * std::sqrt(dK));
        bb_[WeightTag::W1] = w2_ * yb_;
        bb_[WeightTag::W2] = spectral_norm(relu(st.ff.U));
        for (WeightTag w : {WeightTag::K, WeightTag::Q, WeightTag::V})
            bb_[w] = jsyb_ * lnY_.jacobian * gb_[w];
        rb_ = std::sqrt(L * dV) + frobenius_norm(target);  // ||Z - target||_F <= both pieces
    }

    double g_bound(WeightTag w) const { return gb_.at(w); }
    double b_bound(WeightTag w) const { return bb_.at(w); }
    const LnBounds& ln_y() const { return lnY_; }
    const LnBounds& ln_z() const { return lnZ_; }
    double jsy_bound() const { return jsyb_; }
    double y_bound() const { return yb_; }
    double s_bound() const { return sb_; }

    double xi_bound(WeightTag wi, WeightTag wj) const {
        const double L = static_cast<double>(st_.L);
        const double dV = static_cast<double>(st_.d_V);
        const double dff = static_cast<double>(st_.d_ff);
        if (is_ffn_weight(wi) && is_ffn_weight(wj)) {
            if (wi == wj) return 0.0;
            return (wi == WeightTag::W1 ? std::sqrt(L) : std::sqrt(dV)) * yb_;
        }
        if (is_ffn_weight(wi)) {
            const double g = lnY_.jacobian * gb_.at(wj);
            return (wi == WeightTag::W1 ? std::sqrt(dff) * w2_ : std::sqrt(dV) * w1_) * g;
        }
        if (is_ffn_weight(wj)) {
            const double g = lnY_.jacobian * gb_.at(wi);
            return std::sqrt(L) * (wj == WeightTag::W1 ? w2_ : w1_) * g;
        }
        return jsyb_ * (gb_.at(wi) * lnY_.hessian * gb_.at(wj) +
                        lnY_.jacobian * phi_norm_bound(st_.at, wi, wj));
    }

    // ||H^{(i,j)}|| <= ||J_Z|| ||xi_ij|| + ||B_i|| ||H_Z|| ||B_j||
    double block_bound(WeightTag wi, WeightTag wj) const {
        return lnZ_.jacobian * xi_bound(wi, wj) + bb_.at(wi) * lnZ_.hessian * bb_.at(wj);
    }

    // Loss Hessian bound: 5 weight groups, worst entry times the grid size.
    double m_tr() const {
        const double L = static_cast<double>(st_.L);
        const double dV = static_cast<double>(st_.d_V);
        double best = 0.0;
        for (WeightTag wi : kWeightOrder)
            for (WeightTag wj : kWeightOrder) {
                const double v = 2.0 / (L * dV) * (lnZ_.jacobian * bb_.at(wi)) * (lnZ_.jacobian * bb_.at(wj)) +
                                 rb_ * block_bound(wi, wj);
                best = std::max(best, v);
            }
        return 5.0 * best;
    }

private:
    const BlockState& st_;
    double x_ = 0.0, w1_ = 0.0, w2_ = 0.0, yb_ = 0.0, sb_ = 0.0, jsyb_ = 0.0, rb_ = 0.0;
    LnBounds lnY_, lnZ_;
    std::map<WeightTag, double> gb_, bb_;
};

} // namespace curvforge
