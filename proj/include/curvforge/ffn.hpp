#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

#include "curvforge/errors.hpp"
#include "curvforge/mat.hpp"
#include "curvforge/matcalc.hpp"

// Position-wise feed-forward sublayer with residual:
//   S(Y) = relu(Y W1) W2 + Y
// together with the exact Jacobians of S with respect to Y, W1 and W2.
// ReLU is piecewise linear; derivatives are exact away from the kinks, so
// callers can reject inputs whose pre-activations sit too close to zero
// (finite-difference probes would straddle the kink there).

namespace curvforge {

struct FfnParams {
    Mat W1;  // d_V x d_ff
    Mat W2;  // d_ff x d_V
};

struct FfnState {
    Mat Y;     // L x d_V input
    Mat U;     // Y W1 pre-activation
    Mat S;     // relu(U) W2 + Y
    Mat Dsig;  // diag(vec_r(U > 0)), the ReLU derivative as an operator
    FfnParams p;
};

inline Mat relu(const Mat& u) {
    Mat r(u.rows(), u.cols());
    for (std::size_t i = 0; i < u.size(); ++i) r[i] = u[i] > 0.0 ? u[i] : 0.0;
    return r;
}

// Smallest |U_ij|: the margin to the nearest ReLU kink.
inline double kink_margin(const Mat& u) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < u.size(); ++i) m = std::min(m, std::abs(u[i]));
    return m;
}

inline FfnState ffn_forward(const Mat& y, const FfnParams& p, double min_kink_margin = 0.0) {
    if (y.cols() != p.W1.rows() || p.W1.cols() != p.W2.rows() || p.W2.cols() != y.cols())
        throw ShapeMismatch("ffn shapes Y" + y.shape_str() + " W1" + p.W1.shape_str() + " W2" + p.W2.shape_str());
    FfnState st;
    st.Y = y;
    st.p = p;
    st.U = y * p.W1;
    if (min_kink_margin > 0.0 && kink_margin(st.U) < min_kink_margin)
        throw KinkProximity("relu pre-activation within " + std::to_string(min_kink_margin) + " of zero");
    st.S = relu(st.U) * p.W2 + y;
    st.Dsig = Mat(st.U.size(), st.U.size());
    const Mat uv = vec_r(st.U);
    for (std::size_t i = 0; i < st.U.size(); ++i) st.Dsig(i, i) = uv[i] > 0.0 ? 1.0 : 0.0;
    if (!st.S.is_finite()) throw NonFiniteOutput("ffn forward");
    return st;
}

// dS/dW1 = (I_L kron W2^T) Dsig (Y kron I_dff)
inline Mat ffn_b1(const FfnState& st) {
    const std::size_t L = st.Y.rows(), d_ff = st.p.W1.cols();
    return kron(Mat::identity(L), st.p.W2.transpose()) * st.Dsig * kron(st.Y, Mat::identity(d_ff));
}

// dS/dW2 = relu(U) kron I_dV
inline Mat ffn_b2(const FfnState& st) {
    return kron(relu(st.U), Mat::identity(st.Y.cols()));
}

// dS/dY = (I_L kron W2^T) Dsig (I_L kron W1^T) + I
inline Mat ffn_jsy(const FfnState& st) {
    const std::size_t L = st.Y.rows(), d_v = st.Y.cols();
    Mat j = kron(Mat::identity(L), st.p.W2.transpose()) * st.Dsig *
            kron(Mat::identity(L), st.p.W1.transpose());
    j += Mat::identity(L * d_v);
    return j;
}

} // namespace curvforge
