#include <catch2/catch_amalgamated.hpp>

#include "curvforge/attention.hpp"
#include "curvforge/norms.hpp"
#include "curvforge/oracle.hpp"

using namespace curvforge;

namespace {
const Dims kDims{};

struct Inst {
    Mat x;
    AttnParams p;
    AttnState st;
};

Inst draw(Rng& rng) {
    Inst inst;
    inst.x = rng.gauss_mat(kDims.L, kDims.d_V);
    inst.p.W_Q = rng.gauss_mat(kDims.d_V, kDims.d_K);
    inst.p.W_K = rng.gauss_mat(kDims.d_V, kDims.d_K);
    inst.p.W_V = rng.gauss_mat(kDims.d_V, kDims.d_V);
    inst.st = attn_forward(inst.x, inst.p);
    return inst;
}

Mat weight_of(const AttnParams& p, WeightTag w) {
    if (w == WeightTag::K) return vec_r(p.W_K);
    if (w == WeightTag::Q) return vec_r(p.W_Q);
    return vec_r(p.W_V);
}

AttnParams with_weight(AttnParams p, WeightTag w, const Mat& flat) {
    if (w == WeightTag::K)
        p.W_K = unvec_r(flat, kDims.d_V, kDims.d_K);
    else if (w == WeightTag::Q)
        p.W_Q = unvec_r(flat, kDims.d_V, kDims.d_K);
    else
        p.W_V = unvec_r(flat, kDims.d_V, kDims.d_V);
    return p;
}
} // namespace

TEST_CASE("softmax rows sum to one") {
    Rng rng(601);
    for (int t = 0; t < 100; ++t) {
        const Mat a = row_softmax(rng.gauss_mat(4, 4, 3.0));
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 4; ++j) s += a(i, j);
            REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
        }
    }
}

TEST_CASE("softmax is invariant to row-wise shifts") {
    Rng rng(602);
    const Mat t = rng.gauss_mat(3, 3);
    Mat shifted = t;
    for (std::size_t j = 0; j < 3; ++j) shifted(1, j) += 100.0;
    Mat diff = row_softmax(t) - row_softmax(shifted);
    REQUIRE(max_abs(diff) < 1e-12);
}

TEST_CASE("softmax_jacobian matches finite differences") {
    Rng rng(603);
    for (int t = 0; t < 30; ++t) {
        const Mat logits = rng.gauss_mat(3, 3);
        auto f = [](const Mat& v) { return vec_r(row_softmax(unvec_r(v, 3, 3))); };
        const Mat numeric = fd_jacobian(f, vec_r(logits));
        REQUIRE(compare(softmax_jacobian(row_softmax(logits)), numeric).rel_fro_err < 1e-7);
    }
}

TEST_CASE("softmax_hessian matches FD of the softmax Jacobian") {
    Rng rng(604);
    FdConfig cfg;
    cfg.rel_tol = 1e-4;
    for (int t = 0; t < 10; ++t) {
        const Mat logits = rng.gauss_mat(3, 3);
        auto f = [](const Mat& v) { return vec_r(softmax_jacobian(row_softmax(unvec_r(v, 3, 3)))); };
        const Mat numeric = fd_jacobian(f, vec_r(logits), cfg);
        REQUIRE(compare(softmax_hessian(row_softmax(logits)), numeric, cfg).rel_fro_err < 1e-4);
    }
}

TEST_CASE("attention weight Jacobians match finite differences") {
    Rng rng(605);
    for (int t = 0; t < 30; ++t) {
        const Inst inst = draw(rng);
        for (WeightTag w : {WeightTag::K, WeightTag::Q, WeightTag::V}) {
            auto f = [&](const Mat& v) { return vec_r(attn_forward(inst.x, with_weight(inst.p, w, v)).F); };
            const Mat numeric = fd_jacobian(f, weight_of(inst.p, w));
            REQUIRE(compare(attn_g(inst.st, w), numeric).rel_fro_err < 1e-6);
        }
    }
}

TEST_CASE("second derivatives match FD of the weight Jacobians for all nine pairs") {
    Rng rng(606);
    FdConfig cfg;
    cfg.rel_tol = 1e-4;
    for (int t = 0; t < 5; ++t) {
        const Inst inst = draw(rng);
        for (WeightTag wi : {WeightTag::K, WeightTag::Q, WeightTag::V})
            for (WeightTag wj : {WeightTag::K, WeightTag::Q, WeightTag::V}) {
                auto f = [&](const Mat& v) {
                    return vec_r(attn_g(attn_forward(inst.x, with_weight(inst.p, wj, v)), wi));
                };
                const Mat numeric = fd_jacobian(f, weight_of(inst.p, wj), cfg);
                REQUIRE(compare(phi(inst.st, wi, wj), numeric, cfg).rel_fro_err < 1e-4);
            }
    }
}

TEST_CASE("the value-value second derivative is identically zero") {
    Rng rng(607);
    for (int t = 0; t < 20; ++t) {
        const Inst inst = draw(rng);
        REQUIRE(max_abs(phi(inst.st, WeightTag::V, WeightTag::V)) == 0.0);
    }
}

TEST_CASE("shuffle matrix has spectral norm sqrt(d_V)") {
    for (std::size_t d : {2u, 3u, 4u, 5u}) {
        const double s = spectral_norm(shuffle_matrix(d));
        REQUIRE(s == Catch::Approx(std::sqrt(static_cast<double>(d))).margin(1e-10));
    }
}

TEST_CASE("per-entry softmax second-derivative blocks have norm at most 6") {
    Rng rng(608);
    for (int t = 0; t < 100; ++t) {
        const Mat a = row_softmax(rng.gauss_mat(3, 3, 2.0));
        REQUIRE(softmax_hessian_block_norm_max(a) <= 6.0);
    }
}

TEST_CASE("attention forward rejects mismatched shapes") {
    Rng rng(609);
    AttnParams p;
    p.W_Q = rng.gauss_mat(3, 2);  // wrong d_V
    p.W_K = rng.gauss_mat(4, 2);
    p.W_V = rng.gauss_mat(4, 4);
    REQUIRE_THROWS_AS(attn_forward(rng.gauss_mat(3, 4), p), ShapeMismatch);
}
