#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "test_util.hpp"

using namespace curvforge;

namespace {
const Dims kDims{};
const ModelSpec kAttnSpec{kDims, ModelKind::attn};
}

TEST_CASE("empirical loss matches a naive re-mean") {
    Rng rng(901);
    const auto samples = generate_synthetic(kDims, 37, 11);
    const Mat w = rng.gauss_mat(kAttnSpec.nparam_total(), 1, 0.5);
    double naive = 0.0;
    for (const Sample& s : samples) naive += sample_loss(kAttnSpec, w, s);
    naive /= 37.0;
    REQUIRE(empirical_loss(samples, kAttnSpec, w) == Catch::Approx(naive).epsilon(1e-14));
}

TEST_CASE("streaming mean telescopes exactly") {
    Rng rng(902);
    const auto samples = generate_synthetic(kDims, 64, 12);
    const Mat w = rng.gauss_mat(kAttnSpec.nparam_total(), 1, 0.5);
    double l_k = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        l_k = (static_cast<double>(i) * l_k + sample_loss(kAttnSpec, w, samples[i])) /
              static_cast<double>(i + 1);
        std::vector<Sample> head(samples.begin(), samples.begin() + i + 1);
        REQUIRE(l_k == Catch::Approx(empirical_loss(head, kAttnSpec, w)).epsilon(1e-13));
    }
}

TEST_CASE("identical samples give zero deltas under the envelope") {
    Rng rng(903);
    auto one = generate_synthetic(kDims, 1, 13);
    std::vector<Sample> samples(32, one[0]);
    const Mat w_star = rng.gauss_mat(kAttnSpec.nparam_total(), 1, 0.5);
    Mat u = rng.gauss_mat(kAttnSpec.nparam_total(), 1);
    u *= 1.0 / frobenius_norm(u);
    const ConvergenceTrace tr = convergence_run(samples, kAttnSpec, w_star + u * 0.1, w_star);
    REQUIRE(tr.violations == 0);
    for (std::size_t i = 1; i < tr.rows.size(); ++i) {
        REQUIRE(tr.rows[i].delta < 1e-14);
        REQUIRE(tr.rows[i].envelope >= 0.0);
    }
}

TEST_CASE("averaged Hessian of equal samples equals the per-sample Hessian") {
    Rng rng(904);
    auto one = generate_synthetic(kDims, 1, 14);
    std::vector<Sample> samples(2, one[0]);
    const Mat w = rng.gauss_mat(kAttnSpec.nparam_total(), 1, 0.5);
    const Mat h2 = averaged_hessian(samples, kAttnSpec, w);
    Mat h1 = sample_loss_hessian(kAttnSpec, w, one[0]);
    Mat h1t = h1.transpose();
    h1 += h1t;
    h1 *= 0.5;
    REQUIRE(compare(h1, h2).rel_fro_err < 1e-14);
}

TEST_CASE("averaged Hessian matches per-sample FD Hessians") {
    Rng rng(905);
    const auto samples = generate_synthetic(kDims, 5, 15);
    const Mat w = rng.gauss_mat(kAttnSpec.nparam_total(), 1, 0.5);
    Mat fd_mean(w.size(), w.size());
    for (const Sample& s : samples) {
        auto g = [&](const Mat& ww) { return sample_loss(kAttnSpec, ww, s); };
        fd_mean += fd_hessian_of_scalar(g, w);
    }
    fd_mean *= 1.0 / 5.0;
    FdConfig cfg;
    cfg.rel_tol = 1e-4;
    REQUIRE(compare(averaged_hessian(samples, kAttnSpec, w), fd_mean, cfg).rel_fro_err < 1e-4);
}

TEST_CASE("quadratic surrogate agrees to third order near the minimizer") {
    Rng rng(906);
    const auto samples = generate_synthetic(kDims, 32, 16);
    const Mat w0 = rng.gauss_mat(kAttnSpec.nparam_total(), 1, 0.5);
    const FitResult fit = fit_minimizer(samples, kAttnSpec, w0);
    REQUIRE(fit.converged);
    const double l_star = empirical_loss(samples, kAttnSpec, fit.w);
    const Mat h = averaged_hessian(samples, kAttnSpec, fit.w);
    Mat u = rng.gauss_mat(kAttnSpec.nparam_total(), 1);
    u *= 1.0 / frobenius_norm(u);
    // surrogate error should shrink roughly like r^3 (gradient term ~ tol * r)
    double prev_err = -1.0;
    for (double r : {0.08, 0.04, 0.02}) {
        const Mat w = fit.w + u * r;
        const double err = std::abs(empirical_loss(samples, kAttnSpec, w) -
                                    taylor_surrogate(w, fit.w, l_star, h));
        if (prev_err >= 0.0) REQUIRE(err < prev_err);
        prev_err = err;
    }
    REQUIRE(taylor_surrogate(fit.w, fit.w, l_star, h) == l_star);
}

TEST_CASE("synthetic generation is deterministic and scales linearly") {
    const auto a = generate_synthetic(kDims, 16, 1234);
    const auto b = generate_synthetic(kDims, 16, 1234);
    for (std::size_t i = 0; i < a.size(); ++i) {
        Mat dx = a[i].X - b[i].X;
        Mat dt = a[i].Target - b[i].Target;
        REQUIRE(max_abs(dx) == 0.0);
        REQUIRE(max_abs(dt) == 0.0);
    }
    // scale multiplies Frobenius norms proportionally (statistical, +-5%)
    const auto s1 = generate_synthetic(kDims, 1000, 77, 1.0);
    const auto s3 = generate_synthetic(kDims, 1000, 77, 3.0);
    double n1 = 0.0, n3 = 0.0;
    for (std::size_t i = 0; i < s1.size(); ++i) {
        n1 += frobenius_norm(s1[i].X);
        n3 += frobenius_norm(s3[i].X);
    }
    REQUIRE(n3 / n1 == Catch::Approx(3.0).epsilon(0.05));
}

TEST_CASE("sample CSV round-trips exactly") {
    const auto samples = generate_synthetic(kDims, 20, 4242);
    const std::string path = "conv_roundtrip_test.csv";
    save_csv(path, samples, kDims);
    const auto loaded = load_csv(path, kDims);
    REQUIRE(loaded.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        Mat dx = loaded[i].X - samples[i].X;
        Mat dt = loaded[i].Target - samples[i].Target;
        REQUIRE(max_abs(dx) == 0.0);
        REQUIRE(max_abs(dt) == 0.0);
    }
    std::remove(path.c_str());
}

TEST_CASE("malformed CSV rows report their line number") {
    const std::string path = "conv_badline_test.csv";
    {
        std::ofstream f(path);
        f << "# dims L=3 dV=4\n";
        f << "1,2\n";
    }
    try {
        load_csv(path, kDims);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        REQUIRE(e.line == 2);
    }
    std::remove(path.c_str());
}

TEST_CASE("envelope holds on a short synthetic stream") {
    Rng rng(907);
    const auto samples = generate_synthetic(kDims, 128, 5150);
    std::vector<Sample> head(samples.begin(), samples.begin() + 64);
    const FitResult fit = fit_minimizer(head, kAttnSpec, rng.gauss_mat(kAttnSpec.nparam_total(), 1, 0.5));
    REQUIRE(fit.converged);
    REQUIRE(fit.grad_norm <= 1e-4);
    Mat u = rng.gauss_mat(kAttnSpec.nparam_total(), 1);
    u *= 1.0 / frobenius_norm(u);
    for (double r : {0.01, 0.1}) {
        const ConvergenceTrace tr = convergence_run(samples, kAttnSpec, fit.w + u * r, fit.w);
        REQUIRE(tr.violations == 0);
        REQUIRE(tr.rows.size() == samples.size());
        for (std::size_t i = 0; i < tr.rows.size(); ++i) REQUIRE(tr.rows[i].k == i + 1);
    }
}

TEST_CASE("teacher streams admit a smooth minimizer for the block model") {
    Rng rng(908);
    const ModelSpec spec{kDims, ModelKind::block};
    const BlockParams teacher = random_params(kDims, rng);
    const auto samples = generate_teacher(kDims, 96, 6161, spec, teacher);
    Mat w0 = spec.pack(teacher) + rng.gauss_mat(spec.nparam_total(), 1, 0.05);
    std::vector<Sample> head(samples.begin(), samples.begin() + 48);
    const FitResult fit = fit_minimizer(head, spec, w0);
    REQUIRE(fit.converged);
    REQUIRE(fit.grad_norm <= 1e-4);
    Mat u = rng.gauss_mat(spec.nparam_total(), 1);
    u *= 1.0 / frobenius_norm(u);
    const ConvergenceTrace tr = convergence_run(samples, spec, fit.w + u * 0.1, fit.w);
    REQUIRE(tr.violations == 0);
}

TEST_CASE("empty datasets are rejected") {
    std::vector<Sample> none;
    const Mat w(kAttnSpec.nparam_total(), 1);
    REQUIRE_THROWS_AS(empirical_loss(none, kAttnSpec, w), EmptyDataset);
    REQUIRE_THROWS_AS(averaged_hessian(none, kAttnSpec, w), EmptyDataset);
    REQUIRE_THROWS_AS(convergence_run(none, kAttnSpec, w, w), EmptyDataset);
}
