#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"

using namespace curvforge;
using namespace curvforge::testutil;

namespace {
const Dims kDims{};
}

TEST_CASE("block Jacobians match finite differences for all five weights") {
    Rng rng(701);
    for (int t = 0; t < 15; ++t) {
        const Instance inst = draw_instance(kDims, rng);
        for (WeightTag w : kWeightOrder) {
            auto f = [&](const Mat& v) {
                BlockParams q;
                set_weight(kDims, inst.p, w, v, &q);
                return vec_r(block_forward(inst.X, q, 0.0, false).Z);
            };
            const Mat numeric = fd_jacobian(f, get_weight(inst.p, w));
            REQUIRE(compare(block_jacobian(inst.st, w), numeric).rel_fro_err < 1e-6);
        }
    }
}

TEST_CASE("all 25 second-derivative pairs match FD of the block Jacobians") {
    Rng rng(702);
    FdConfig cfg;
    cfg.rel_tol = 1e-4;
    for (int t = 0; t < 3; ++t) {
        const Instance inst = draw_instance(kDims, rng);
        for (WeightTag wi : kWeightOrder)
            for (WeightTag wj : kWeightOrder) {
                auto f = [&](const Mat& v) {
                    BlockParams q;
                    set_weight(kDims, inst.p, wj, v, &q);
                    return vec_r(block_jacobian(block_forward(inst.X, q), wi));
                };
                const Mat numeric = fd_jacobian(f, get_weight(inst.p, wj), cfg);
                INFO("pair " << static_cast<int>(wi) << "," << static_cast<int>(wj));
                REQUIRE(compare(block_hessian(inst.st, wi, wj), numeric, cfg).rel_fro_err < 1e-4);
            }
    }
}

TEST_CASE("pure feed-forward second derivatives of matching weights vanish") {
    Rng rng(703);
    for (int t = 0; t < 20; ++t) {
        const Instance inst = draw_instance(kDims, rng);
        REQUIRE(max_abs(block_xi(inst.st, WeightTag::W1, WeightTag::W1)) == 0.0);
        REQUIRE(max_abs(block_xi(inst.st, WeightTag::W2, WeightTag::W2)) == 0.0);
    }
}

TEST_CASE("assembled loss Hessian matches the scalar FD oracle") {
    Rng rng(704);
    FdConfig cfg;
    cfg.rel_tol = 1e-3;  // scalar FD of a twice-chained map loses more digits
    const ModelSpec spec{kDims, ModelKind::block};
    for (int t = 0; t < 2; ++t) {
        const Instance inst = draw_instance(kDims, rng);
        const Mat w0 = spec.pack(inst.p);
        auto g = [&](const Mat& w) {
            return block_loss(block_forward(inst.X, spec.unpack(w), 0.0, false), inst.target);
        };
        const Mat numeric = fd_hessian_of_scalar(g, w0, cfg);
        const Mat analytic = block_loss_hessian_full(inst.st, inst.target);
        REQUIRE(compare(analytic, numeric, cfg).rel_fro_err < 1e-3);
    }
}

TEST_CASE("loss gradient matches finite differences") {
    Rng rng(705);
    const ModelSpec spec{kDims, ModelKind::block};
    for (int t = 0; t < 10; ++t) {
        const Instance inst = draw_instance(kDims, rng);
        const Mat w0 = spec.pack(inst.p);
        auto g = [&](const Mat& w) {
            Mat out(1, 1);
            out[0] = block_loss(block_forward(inst.X, spec.unpack(w), 0.0, false), inst.target);
            return out;
        };
        const Mat numeric = fd_jacobian(g, w0);
        Mat analytic(1, w0.size());
        std::size_t off = 0;
        for (WeightTag w : kWeightOrder) {
            const Mat gw = block_loss_grad(inst.st, inst.target, w);
            for (std::size_t k = 0; k < gw.size(); ++k) analytic(0, off + k) = gw[k];
            off += gw.size();
        }
        REQUIRE(compare(analytic, numeric).rel_fro_err < 1e-6);
    }
}

TEST_CASE("Gauss-Newton split: functional term vanishes at zero residual") {
    Rng rng(706);
    for (int t = 0; t < 10; ++t) {
        const Instance inst = draw_instance(kDims, rng);
        const Mat target = inst.st.Z;  // zero residual
        const double c = 2.0 / static_cast<double>(kDims.L * kDims.d_V);
        for (WeightTag wi : kWeightOrder)
            for (WeightTag wj : kWeightOrder) {
                const Mat full = block_loss_hessian(inst.st, target, wi, wj);
                Mat outer = block_jacobian(inst.st, wi).transpose() * block_jacobian(inst.st, wj);
                outer *= c;
                Mat functional = full - outer;
                REQUIRE(max_abs(functional) < 1e-10);
            }
    }
}

TEST_CASE("Gauss-Newton split reassembles the loss Hessian") {
    Rng rng(707);
    const Instance inst = draw_instance(kDims, rng);
    const double c = 2.0 / static_cast<double>(kDims.L * kDims.d_V);
    for (WeightTag wi : kWeightOrder)
        for (WeightTag wj : kWeightOrder) {
            const std::size_t ni = block_nparam(inst.st, wi);
            Mat outer = block_jacobian(inst.st, wi).transpose() * block_jacobian(inst.st, wj);
            outer *= c;
            Mat functional = kron(vec_r(inst.st.Z - inst.target).transpose(), Mat::identity(ni)) *
                             block_hessian(inst.st, wi, wj);
            functional *= c;
            Mat direct = block_loss_hessian(inst.st, inst.target, wi, wj);
            Mat diff = outer + functional - direct;
            REQUIRE(max_abs(diff) < 1e-12 * (1.0 + max_abs(direct)));
        }
}

TEST_CASE("loss Hessian grid is symmetric across weight pairs") {
    Rng rng(708);
    const Instance inst = draw_instance(kDims, rng);
    const Mat h = block_loss_hessian_full(inst.st, inst.target);
    Mat diff = h - h.transpose();
    REQUIRE(max_abs(diff) < 1e-9 * (1.0 + max_abs(h)));
}
