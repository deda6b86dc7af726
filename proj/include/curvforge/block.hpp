#pragma once

#include <array>
#include <cstddef>
#include <map>

#include "curvforge/attention.hpp"
#include "curvforge/ffn.hpp"
#include "curvforge/layernorm.hpp"

// Post-norm transformer block
//   Y = LN(X + Attn(X)),  Z = LN(relu(Y W1) W2 + Y)
// with exact parameter Jacobians, exact per-output second derivatives, and the
// dense Hessian of the mean squared error loss over all five weight matrices.
//
// Parameter order throughout: (W1, W2, W_K, W_Q, W_V).

namespace curvforge {

inline constexpr std::array<WeightTag, 5> kWeightOrder = {
    WeightTag::W1, WeightTag::W2, WeightTag::K, WeightTag::Q, WeightTag::V};

struct BlockParams {
    AttnParams attn;
    FfnParams ffn;
};

struct BlockState {
    Mat X;
    AttnState at;
    Mat S0;    // X + Attn(X)
    LnState lnY;
    FfnState ff;
    LnState lnZ;
    Mat Y, Z;
    Mat JY, JZ;  // layer-norm Jacobians at S0 and S
    Mat HY, HZ;  // layer-norm second derivatives
    Mat JSY;     // dS/dY through the feed-forward residual
    BlockParams p;
    std::size_t L = 0, d_V = 0, d_K = 0, d_ff = 0;
};

// with_second = false skips the layer-norm second derivatives (HY, HZ) for
// callers that only need values, Jacobians and the loss gradient.
inline BlockState block_forward(const Mat& x, const BlockParams& p, double min_kink_margin = 0.0,
                                bool with_second = true) {
    BlockState st;
    st.X = x;
    st.p = p;
    st.L = x.rows();
    st.d_V = x.cols();
    st.d_K = p.attn.W_Q.cols();
    st.d_ff = p.ffn.W1.cols();
    st.at = attn_forward(x, p.attn);
    st.S0 = x + st.at.F;
    st.lnY = ln_forward(st.S0);
    st.Y = st.lnY.Y;
    st.ff = ffn_forward(st.Y, p.ffn, min_kink_margin);
    st.lnZ = ln_forward(st.ff.S);
    st.Z = st.lnZ.Y;
    st.JY = ln_jacobian(st.lnY);
    st.JZ = ln_jacobian(st.lnZ);
    if (with_second) {
        st.HY = ln_hessian(st.lnY);
        st.HZ = ln_hessian(st.lnZ);
    }
    st.JSY = ffn_jsy(st.ff);
    return st;
}

inline std::size_t block_nparam(const BlockState& st, WeightTag w) {
    switch (w) {
        case WeightTag::W1: return st.d_V * st.d_ff;
        case WeightTag::W2: return st.d_ff * st.d_V;
        case WeightTag::Q:
        case WeightTag::K: return st.d_V * st.d_K;
        case WeightTag::V: return st.d_V * st.d_V;
    }
    return 0;
}

inline std::size_t block_nparam_total(const BlockState& st) {
    std::size_t n = 0;
    for (WeightTag w : kWeightOrder) n += block_nparam(st, w);
    return n;
}

inline bool is_ffn_weight(WeightTag w) { return w == WeightTag::W1 || w == WeightTag::W2; }

// dS/dW: B_1 and B_2 come from the feed-forward sublayer directly; for the
// attention weights the path runs S <- Y <- S0 <- Attn.
inline Mat block_b(const BlockState& st, WeightTag w) {
    switch (w) {
        case WeightTag::W1: return ffn_b1(st.ff);
        case WeightTag::W2: return ffn_b2(st.ff);
        default: return st.JSY * (st.JY * attn_g(st.at, w));
    }
}

// dZ/dW = J_Z * dS/dW
inline Mat block_jacobian(const BlockState& st, WeightTag w) {
    return st.JZ * block_b(st, w);
}

// xi_{ij} = d vec_r(B_i) / d vec_r(W_j), shape (L d_V n_i) x n_j.
inline Mat block_xi(const BlockState& st, WeightTag wi, WeightTag wj) {
    const std::size_t L = st.L, d_v = st.d_V, d_ff = st.d_ff;
    const std::size_t ni = block_nparam(st, wi), nj = block_nparam(st, wj);
    const Mat& W1 = st.p.ffn.W1;
    const Mat& W2 = st.p.ffn.W2;
    const Mat& Y = st.Y;
    const Mat& Dsig = st.ff.Dsig;
    const Mat eye_l = Mat::identity(L);

    if (is_ffn_weight(wi) && is_ffn_weight(wj)) {
        if (wi == wj) return Mat(L * d_v * ni, nj);
        if (wi == WeightTag::W1) {
            // dB1/dW2 through the W2^T factor of B1
            const Mat k_vf = commutation(d_v, d_ff);
            Mat da = kron_rule(eye_l, nullptr, W2.transpose(), &k_vf);
            return kron(Mat::identity(L * d_v), (Dsig * kron(Y, Mat::identity(d_ff))).transpose()) * da;
        }
        // dB2/dW1 through relu(Y W1)
        const Mat dr = Dsig * kron(Y, Mat::identity(d_ff));
        return kron_rule(relu(st.ff.U), &dr, Mat::identity(d_v), nullptr);
    }

    if (is_ffn_weight(wi)) {
        // B1/B2 depend on the attention weights only through Y.
        const Mat g = attn_g(st.at, wj);
        if (wi == WeightTag::W1) {
            const Mat dy = st.JY * g;
            const Mat dyi = kron_rule(Y, &dy, Mat::identity(d_ff), nullptr);
            return kron(kron(eye_l, W2.transpose()) * Dsig, Mat::identity(d_v * d_ff)) * dyi;
        }
        const Mat dr = Dsig * kron(eye_l, W1.transpose()) * (st.JY * g);
        return kron_rule(relu(st.ff.U), &dr, Mat::identity(d_v), nullptr);
    }

    if (is_ffn_weight(wj)) {
        // B_i = JSY JY G_i; only the JSY factor moves with W1/W2.
        const Mat jyg = st.JY * attn_g(st.at, wi);
        Mat djsy;
        if (wj == WeightTag::W1) {
            const Mat k_fv = commutation(d_ff, d_v);
            Mat d_iw1t = kron_rule(eye_l, nullptr, W1.transpose(), &k_fv);
            djsy = kron(kron(eye_l, W2.transpose()) * Dsig, Mat::identity(L * d_v)) * d_iw1t;
        } else {
            const Mat k_vf = commutation(d_v, d_ff);
            Mat d_iw2t = kron_rule(eye_l, nullptr, W2.transpose(), &k_vf);
            djsy = kron(Mat::identity(L * d_v), (Dsig * kron(eye_l, W1.transpose())).transpose()) * d_iw2t;
        }
        return kron(Mat::identity(L * d_v), jyg.transpose()) * djsy;
    }

    // attention-attention: differentiate JY G_i while JSY stays fixed
    // (ReLU masks are locally constant away from kinks).
    const Mat g_i = attn_g(st.at, wi);
    const Mat g_j = attn_g(st.at, wj);
    Mat inner = kron(Mat::identity(L * d_v), g_i.transpose()) * (st.HY * g_j);
    inner += kron(st.JY, Mat::identity(ni)) * phi(st.at, wi, wj);
    return kron(st.JSY, Mat::identity(ni)) * inner;
}

// d vec_r(dZ/dW_i) / d vec_r(W_j)
inline Mat block_hessian(const BlockState& st, WeightTag wi, WeightTag wj) {
    const std::size_t ni = block_nparam(st, wi);
    Mat h = kron(st.JZ, Mat::identity(ni)) * block_xi(st, wi, wj);
    h += kron(Mat::identity(st.L * st.d_V), block_b(st, wi).transpose()) * st.HZ * block_b(st, wj);
    return h;
}

inline double block_loss(const BlockState& st, const Mat& target) {
    double s = 0.0;
    for (std::size_t i = 0; i < st.Z.size(); ++i) {
        const double d = st.Z[i] - target[i];
        s += d * d;
    }
    return s / static_cast<double>(st.L * st.d_V);
}

inline Mat block_loss_grad(const BlockState& st, const Mat& target, WeightTag w) {
    const double c = 2.0 / static_cast<double>(st.L * st.d_V);
    return (vec_r(st.Z - target).transpose() * block_jacobian(st, w)) * c;  // 1 x n_w
}

// Loss Hessian block: (2/(L d_V)) (J_i^T J_j + (vec_r(Z - target)^T kron I) H^{(i,j)})
inline Mat block_loss_hessian(const BlockState& st, const Mat& target, WeightTag wi, WeightTag wj) {
    const double c = 2.0 / static_cast<double>(st.L * st.d_V);
    const Mat ji = block_jacobian(st, wi);
    const Mat jj = block_jacobian(st, wj);
    const std::size_t ni = block_nparam(st, wi);
    const Mat r = kron(vec_r(st.Z - target).transpose(), Mat::identity(ni));
    Mat h = ji.transpose() * jj;
    h += r * block_hessian(st, wi, wj);
    return h * c;
}

// Full loss Hessian over (W1, W2, W_K, W_Q, W_V), flattened row-major per weight.
inline Mat block_loss_hessian_full(const BlockState& st, const Mat& target) {
    const std::size_t n = block_nparam_total(st);
    Mat h(n, n);
    std::size_t ro = 0;
    for (WeightTag wi : kWeightOrder) {
        const std::size_t ni = block_nparam(st, wi);
        std::size_t co = 0;
        for (WeightTag wj : kWeightOrder) {
            const std::size_t nj = block_nparam(st, wj);
            const Mat blk = block_loss_hessian(st, target, wi, wj);
            for (std::size_t i = 0; i < ni; ++i)
                for (std::size_t j = 0; j < nj; ++j)
                    h(ro + i, co + j) = blk(i, j);
            co += nj;
        }
        ro += ni;
    }
    return h;
}

} // namespace curvforge
