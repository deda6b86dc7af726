#pragma once

#include <cmath>
#include <cstddef>

#include "curvforge/mat.hpp"
#include "curvforge/matcalc.hpp"

// Row-wise LayerNorm (unit gain, zero shift) and its first two derivatives in
// closed form.  With m x n input X:
//   M = X (I_n - (1/n) 1 1^T)           per-row centering
//   sigma_i = ||M_i||_2 / sqrt(n)       per-row standard deviation
//   LN(X) = diag^{-1}(sigma) M
// Every output row has Euclidean norm sqrt(n).

namespace curvforge {

struct LnState {
    Mat X;      // input
    Mat M;      // centered rows
    Mat sigma;  // m x 1 per-row std
    Mat P;      // diag^{-1}(sigma)
    Mat D;      // diag(sigma)
    Mat Y;      // P * M, the normalized output
};

inline constexpr double kSigmaFloor = 1e-6;

inline LnState ln_forward(const Mat& x, double sigma_floor = kSigmaFloor) {
    const std::size_t m = x.rows(), n = x.cols();
    if (n < 2) throw DegenerateRow("LayerNorm needs row width >= 2, got " + x.shape_str());
    LnState st;
    st.X = x;
    Mat center = Mat::identity(n) - Mat::ones(n, n) * (1.0 / static_cast<double>(n));
    st.M = x * center;
    st.sigma = Mat(m, 1);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += st.M(i, j) * st.M(i, j);
        const double sig = std::sqrt(s / static_cast<double>(n));
        if (sig < sigma_floor) throw DegenerateRow("row " + std::to_string(i) + " sigma=" + std::to_string(sig));
        st.sigma[i] = sig;
    }
    st.D = diag_from_vec(st.sigma);
    st.P = diag_inv_from_vec(st.sigma);
    st.Y = st.P * st.M;
    return st;
}

// dM/dX = I_mn - (1/n)(I_m kron 1_{n x n}); constant in X.
inline Mat ln_m_jacobian(std::size_t m, std::size_t n) {
    return Mat::identity(m * n) - kron(Mat::identity(m), Mat::ones(n, n)) * (1.0 / static_cast<double>(n));
}

namespace detail {

// d sigma / d vec_r(X), an m x mn matrix; the shared head of both P derivatives.
//   sigma = (1/sqrt(n)) (M^{o2} 1_n)^{o1/2}
//   d sigma = (1/sqrt(n)) diag^{-1}(tau^{o1/2}) (I_m kron 1_n^T) diag(vec_r M) dM
// with tau = M^{o2} 1_n (so tau^{o1/2} = sqrt(n) * sigma).
inline Mat ln_sigma_jacobian(const LnState& st) {
    const std::size_t m = st.X.rows(), n = st.X.cols();
    const double rn = std::sqrt(static_cast<double>(n));
    Mat u = st.sigma * rn;  // tau^{o1/2}
    Mat g = ln_m_jacobian(m, n);
    return (1.0 / rn) * (diag_inv_from_vec(u) * (kron(Mat::identity(m), Mat::ones(1, n)) * (diag_from_vec(vec_r(st.M)) * g)));
}

} // namespace detail

// dP/dX = d diag^{-1}(sigma)/dX = -(D^{-1} kron D^{-T}) E d sigma, m^2 x mn.
inline Mat ln_p_jacobian(const LnState& st) {
    const std::size_t m = st.X.rows();
    return inverse_jacobian(st.D) * (diag_map_jacobian(m) * detail::ln_sigma_jacobian(st));
}

// J_LN = (P kron I_n) dM + (I_m kron M^T) dP, an mn x mn matrix.
inline Mat ln_jacobian(const LnState& st) {
    const std::size_t m = st.X.rows(), n = st.X.cols();
    return kron(st.P, Mat::identity(n)) * ln_m_jacobian(m, n) + kron(Mat::identity(m), st.M.transpose()) * ln_p_jacobian(st);
}

// d vec_r(dP/dX) / d vec_r(X), an (m^2 * mn) x mn stack.  Write dP/dX = A1 * B1
// with A1 = -(D^{-1} kron D^{-T}) and B1 = E d sigma, then apply the product
// rule; dA1 needs the Kronecker rule on D^{-1} kron D^{-T}.
inline Mat ln_p_hessian(const LnState& st) {
    const std::size_t m = st.X.rows(), n = st.X.cols();
    const std::size_t mn = m * n;
    const double rn = std::sqrt(static_cast<double>(n));
    const Mat g = ln_m_jacobian(m, n);
    const Mat e = diag_map_jacobian(m);
    const Mat sj = detail::ln_sigma_jacobian(st);   // m x mn
    const Mat a1 = inverse_jacobian(st.D);          // m^2 x m^2
    const Mat b1 = e * sj;                          // m^2 x mn (= d vec_r(D)/dX)

    // d(sj)/dX: sj = (1/sqrt(n)) A2 B2 with A2 = diag^{-1}(u), u = sqrt(n) sigma,
    // B2 = (I_m kron 1^T) diag(vec_r M) G.
    const Mat u = st.sigma * rn;
    const Mat a2 = diag_inv_from_vec(u);
    const Mat jc = kron(Mat::identity(m), Mat::ones(1, n));
    const Mat b2 = jc * (diag_from_vec(vec_r(st.M)) * g);
    const Mat da3 = diag_map_jacobian(mn) * g;                       // d diag(vec_r M)
    const Mat db2 = kron(jc, Mat::identity(mn)) * (kron(Mat::identity(mn), g.transpose()) * da3);
    const Mat w_inv = diag_inv_from_vec(u);
    const Mat du = sj * rn;                                          // du/dX
    const Mat da2 = (-1.0 * kron(w_inv, w_inv.transpose())) * (diag_map_jacobian(m) * du);
    const Mat dsj = (1.0 / rn) * (kron(a2, Mat::identity(mn)) * db2 + kron(Mat::identity(m), b2.transpose()) * da2);
    const Mat db1 = kron(e, Mat::identity(mn)) * dsj;

    // dA1: Kronecker rule on (-D^{-1}) kron D^{-T} with
    //   d vec_r(D^{-1}) = -(D^{-1} kron D^{-T}) dD  and  d vec_r(D^{-T}) = K_{m,m} d vec_r(D^{-1}).
    const Mat dinv = inverse(st.D);
    const Mat d_dinv = (-1.0 * kron(dinv, dinv.transpose())) * b1;
    const Mat d_dinv_t = commutation(m, m) * d_dinv;
    const Mat neg_dinv = -1.0 * dinv;
    const Mat neg_d_dinv = -1.0 * d_dinv;
    const Mat dinv_t = dinv.transpose();
    const Mat da1 = kron_rule(neg_dinv, &neg_d_dinv, dinv_t, &d_dinv_t);

    return kron(a1, Mat::identity(mn)) * db1 + kron(Mat::identity(m * m), b1.transpose()) * da1;
}

// Full LayerNorm Hessian: d vec_r(J_LN) / d vec_r(X), (mn*mn) x mn.  Three
// terms survive (d^2 M/dX^2 = 0): the Kronecker-rule derivative of P kron I_n
// against the constant G, the second derivative of P, and the derivative of
// I_m kron M^T against dP/dX.
inline Mat ln_hessian(const LnState& st) {
    const std::size_t m = st.X.rows(), n = st.X.cols();
    const std::size_t mn = m * n;
    const Mat g = ln_m_jacobian(m, n);
    const Mat h = ln_p_jacobian(st);

    const Mat d_pkron = kron(Mat::identity(m), kron(commutation(n, m), Mat::identity(n)))
                      * (kron(Mat::identity(m * m), vec_r(Mat::identity(n))) * h);
    const Mat d_ikronmt = kron(Mat::identity(m), kron(commutation(n, m), Mat::identity(m)))
                        * (kron(vec_r(Mat::identity(m)), Mat::identity(n * m)) * (commutation(n, m) * g));

    Mat out = kron(Mat::identity(mn), g.transpose()) * d_pkron;
    out += kron(kron(Mat::identity(m), st.M.transpose()), Mat::identity(mn)) * ln_p_hessian(st);
    out += kron(Mat::identity(mn), h.transpose()) * d_ikronmt;
    return out;
}

// Minimum per-row standard deviation; Lemma-level bounds blow up as it -> 0.
inline double ln_sigma_min(const LnState& st) {
    double s = st.sigma[0];
    for (std::size_t i = 1; i < st.sigma.size(); ++i) s = std::min(s, st.sigma[i]);
    return s;
}

} // namespace curvforge
