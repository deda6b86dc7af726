#pragma once

#include <cmath>
#include <cstddef>

#include "curvforge/mat.hpp"
#include "curvforge/matcalc.hpp"
#include "curvforge/norms.hpp"

// Single-head self-attention F(X) = softmax(X W_Q W_K^T X^T / sqrt(d_K)) X W_V
// with exact first and second derivatives with respect to each weight matrix.

namespace curvforge {

struct Dims {
    std::size_t L = 3;     // sequence length
    std::size_t d_V = 4;   // model / value width
    std::size_t d_K = 2;   // key/query width
    std::size_t d_ff = 4;  // feed-forward width
};

enum class WeightTag { V, Q, K, W1, W2 };

struct AttnParams {
    Mat W_Q;  // d_V x d_K
    Mat W_K;  // d_V x d_K
    Mat W_V;  // d_V x d_V
};

struct AttnState {
    Mat X;  // L x d_V
    Mat T;  // L x L logits
    Mat A;  // row-wise softmax of T
    Mat F;  // A X W_V
    AttnParams p;
    std::size_t L = 0, d_V = 0, d_K = 0;
};

inline Mat row_softmax(const Mat& t) {
    Mat a(t.rows(), t.cols());
    for (std::size_t i = 0; i < t.rows(); ++i) {
        double mx = t(i, 0);
        for (std::size_t j = 1; j < t.cols(); ++j) mx = std::max(mx, t(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < t.cols(); ++j) z += std::exp(t(i, j) - mx);
        for (std::size_t j = 0; j < t.cols(); ++j) a(i, j) = std::exp(t(i, j) - mx) / z;
    }
    return a;
}

inline AttnState attn_forward(const Mat& x, const AttnParams& p) {
    AttnState st;
    st.X = x;
    st.p = p;
    st.L = x.rows();
    st.d_V = x.cols();
    st.d_K = p.W_Q.cols();
    if (p.W_Q.rows() != st.d_V || p.W_K.rows() != st.d_V || p.W_K.cols() != st.d_K)
        throw ShapeMismatch("attention W_Q/W_K vs X " + x.shape_str());
    if (p.W_V.rows() != st.d_V || p.W_V.cols() != st.d_V)
        throw ShapeMismatch("attention W_V " + p.W_V.shape_str());
    st.T = (x * p.W_Q) * (p.W_K.transpose() * x.transpose()) * (1.0 / std::sqrt(static_cast<double>(st.d_K)));
    st.A = row_softmax(st.T);
    st.F = st.A * (x * p.W_V);
    if (!st.F.is_finite()) throw NonFiniteOutput("attention forward");
    return st;
}

// dA/dT: block diagonal with row blocks diag(A_i) - A_i A_i^T, L^2 x L^2.
inline Mat softmax_jacobian(const Mat& a) {
    const std::size_t L = a.rows();
    Mat j(L * L, L * L);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t r = 0; r < L; ++r)
            for (std::size_t c = 0; c < L; ++c)
                j(i * L + r, i * L + c) = a(i, r) * ((r == c ? 1.0 : 0.0) - a(i, c));
    return j;
}

// d vec_r(dA/dT) / d vec_r(T), an L^4 x L^2 stack.  Per entry (i,j) the only
// nonzero L x L block is
//   A_ij (2 A_i A_i^T + E_jj - diag(A_i) - e_j A_i^T - A_i e_j^T),
// placed against the columns of row i (everything else cross-row is zero).
inline Mat softmax_hessian(const Mat& a) {
    const std::size_t L = a.rows();
    Mat h(L * L * L * L, L * L);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) {
            const double aij = a(i, j);
            const std::size_t p = i * L + j;
            for (std::size_t k = 0; k < L; ++k)
                for (std::size_t l = 0; l < L; ++l) {
                    double v = 2.0 * a(i, k) * a(i, l);
                    if (j == k && j == l) v += 1.0;
                    if (k == l) v -= a(i, k);
                    if (j == k) v -= a(i, l);
                    if (j == l) v -= a(i, k);
                    h(p * (L * L) + i * L + k, i * L + l) = aij * v;
                }
        }
    return h;
}

// Largest spectral norm over the per-entry L x L blocks of the softmax second
// derivative.  The stacked operator's global norm never exceeds this maximum.
inline double softmax_hessian_block_norm_max(const Mat& a);

// dT/dW for the three weights (zero for W_V):
//   dT/dW_Q = (X kron X W_K)/sqrt(d_K)
//   dT/dW_K = (X W_Q kron X) K_{d_K,d_V} / sqrt(d_K)
inline Mat attn_dt(const AttnState& st, WeightTag w) {
    const double rs = 1.0 / std::sqrt(static_cast<double>(st.d_K));
    switch (w) {
        case WeightTag::Q: return kron(st.X, st.X * st.p.W_K) * rs;
        case WeightTag::K: return kron(st.X * st.p.W_Q, st.X) * commutation(st.d_K, st.d_V) * rs;
        case WeightTag::V: return Mat(st.L * st.L, st.d_V * st.d_V);
        default: throw ShapeMismatch("attn_dt expects V/Q/K");
    }
}

inline std::size_t attn_nparam(const AttnState& st, WeightTag w) {
    return (w == WeightTag::V) ? st.d_V * st.d_V : st.d_V * st.d_K;
}

// dF/dW_V = (A X) kron I_{d_V}
inline Mat g_v(const AttnState& st) {
    return kron(st.A * st.X, Mat::identity(st.d_V));
}

namespace detail {
// The constant-left factor I_L kron (X W_V)^T shared by G_Q and G_K.
inline Mat attn_c1(const AttnState& st) {
    return kron(Mat::identity(st.L), (st.X * st.p.W_V).transpose());
}
} // namespace detail

// dF/dW_Q = (I_L kron W_V^T X^T) (dA/dT) (X kron X W_K)/sqrt(d_K)
inline Mat g_q(const AttnState& st) {
    return detail::attn_c1(st) * softmax_jacobian(st.A) * attn_dt(st, WeightTag::Q);
}

// dF/dW_K: same sandwich with dT/dW_K.
inline Mat g_k(const AttnState& st) {
    return detail::attn_c1(st) * softmax_jacobian(st.A) * attn_dt(st, WeightTag::K);
}

inline Mat attn_g(const AttnState& st, WeightTag w) {
    switch (w) {
        case WeightTag::V: return g_v(st);
        case WeightTag::Q: return g_q(st);
        case WeightTag::K: return g_k(st);
        default: throw ShapeMismatch("attn_g expects V/Q/K");
    }
}

// Z1 = (I_L kron X^T)(dA/dT)(X kron X): the weight-free core of the mixed
// first-order curvature blocks.
inline Mat attn_z1(const AttnState& st) {
    return kron(Mat::identity(st.L), st.X.transpose()) * softmax_jacobian(st.A) * kron(st.X, st.X);
}

// Z2 = (I_L kron X^T kron X^T kron X^T)(d^2A/dT^2)(X kron X).
inline Mat attn_z2(const AttnState& st) {
    const Mat xt = st.X.transpose();
    return kron(Mat::identity(st.L), kron(xt, kron(xt, xt))) * softmax_hessian(st.A) * kron(st.X, st.X);
}

// Shuffle operator S = (I_{d_V} kron K_{d_V,d_V})(vec_r(I_{d_V}) kron I_{d_V}),
// d_V^2 x d_V, spectral norm sqrt(d_V).
inline Mat shuffle_matrix(std::size_t d_v) {
    return kron(Mat::identity(d_v), commutation(d_v, d_v)) * kron(vec_r(Mat::identity(d_v)), Mat::identity(d_v));
}

namespace detail {

// d vec_r(C1)/d vec_r(W_V) where C1 = I_L kron (W_V^T X^T).
inline Mat attn_dc1_dwv(const AttnState& st) {
    const Mat b = st.p.W_V.transpose() * st.X.transpose();
    const Mat db = kron(Mat::identity(st.d_V), st.X) * commutation(st.d_V, st.d_V);
    const Mat eye_l = Mat::identity(st.L);
    return kron_rule(eye_l, nullptr, b, &db);
}

// d vec_r(dT/dW_i)/d vec_r(W_j); nonzero only for the (Q,K) and (K,Q) pairs.
inline Mat attn_ddt(const AttnState& st, WeightTag wi, WeightTag wj, bool& nonzero) {
    const double rs = 1.0 / std::sqrt(static_cast<double>(st.d_K));
    nonzero = true;
    if (wi == WeightTag::Q && wj == WeightTag::K) {
        const Mat b = st.X * st.p.W_K;
        const Mat db = kron(st.X, Mat::identity(st.d_K));
        return kron_rule(st.X, nullptr, b, &db) * rs;
    }
    if (wi == WeightTag::K && wj == WeightTag::Q) {
        const Mat a = st.X * st.p.W_Q;
        const Mat da = kron(st.X, Mat::identity(st.d_K));
        Mat dn = kron_rule(a, &da, st.X, nullptr) * rs;
        return kron(Mat::identity(st.L * st.L), commutation(st.d_K, st.d_V).transpose()) * dn;
    }
    nonzero = false;
    return Mat();
}

} // namespace detail

// Second derivative Phi_{ij} = d vec_r(dF/dW_i) / d vec_r(W_j), assembled by
// composing the product and Kronecker rules on the exact Jacobian formulas.
// Shapes: (L d_V n_i) x n_j.  Phi_VV is identically zero.
inline Mat phi(const AttnState& st, WeightTag wi, WeightTag wj) {
    const std::size_t L = st.L, d_v = st.d_V;
    const std::size_t ni = attn_nparam(st, wi), nj = attn_nparam(st, wj);
    const Mat ja = softmax_jacobian(st.A);

    if (wi == WeightTag::V) {
        if (wj == WeightTag::V) return Mat(L * d_v * ni, nj);
        // G_V = (A X) kron I_{d_V}; only A moves with W_Q / W_K.
        const Mat dax = kron(Mat::identity(L), st.X.transpose()) * ja * attn_dt(st, wj);
        const Mat ax = st.A * st.X;
        const Mat eye_v = Mat::identity(d_v);
        return kron_rule(ax, &dax, eye_v, nullptr);
    }

    // G_i = C1 * (dA/dT) * R with R = dT/dW_i; differentiate all three factors.
    const Mat c1 = detail::attn_c1(st);
    const Mat r = attn_dt(st, wi);
    Mat out(L * d_v * ni, nj);

    bool dr_nonzero = false;
    const Mat dr = detail::attn_ddt(st, wi, wj, dr_nonzero);
    if (dr_nonzero) out += kron(c1 * ja, Mat::identity(ni)) * dr;

    Mat du(L * d_v * L * L, nj);
    bool du_nonzero = false;
    if (wj == WeightTag::Q || wj == WeightTag::K) {
        du += kron(c1, Mat::identity(L * L)) * (softmax_hessian(st.A) * attn_dt(st, wj));
        du_nonzero = true;
    }
    if (wj == WeightTag::V) {
        du += kron(Mat::identity(L * d_v), ja.transpose()) * detail::attn_dc1_dwv(st);
        du_nonzero = true;
    }
    if (du_nonzero) out += kron(Mat::identity(L * d_v), r.transpose()) * du;
    return out;
}

inline double softmax_hessian_block_norm_max(const Mat& a) {
    const std::size_t L = a.rows();
    double best = 0.0;
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) {
            Mat blk(L, L);
            for (std::size_t k = 0; k < L; ++k)
                for (std::size_t l = 0; l < L; ++l) {
                    double v = 2.0 * a(i, k) * a(i, l);
                    if (j == k && j == l) v += 1.0;
                    if (k == l) v -= a(i, k);
                    if (j == k) v -= a(i, l);
                    if (j == l) v -= a(i, k);
                    blk(k, l) = a(i, j) * v;
                }
            best = std::max(best, spectral_norm(blk));
        }
    return best;
}

} // namespace curvforge
