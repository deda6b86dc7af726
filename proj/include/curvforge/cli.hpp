#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "curvforge/bounds.hpp"
#include "curvforge/convergence.hpp"
#include "curvforge/oracle.hpp"

// Command layer: verification sweeps, bound reports and convergence runs with
// machine-readable, byte-deterministic output.  Exit codes: 0 pass, 1 property
// failure, 2 usage/config error.

namespace curvforge::cli {

using ordered_json = nlohmann::ordered_json;

struct RunConfig {
    std::string command;  // verify | bounds | converge | selftest
    Dims dims;
    std::uint64_t seed = 7;
    std::size_t instances = 20;
    ModelKind model = ModelKind::attn;
    BoundVariant variant = BoundVariant::appendix;
    std::string data;  // "synthetic:<count>" or csv path (converge only)
    double radius = 0.1;
    std::string out;            // report path; empty = stdout only summary
    std::string format = "json";
};

inline constexpr int kExitPass = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

// CURVFORGE_SEED overrides the configured seed when set.
inline void apply_env_seed(RunConfig& cfg) {
    if (const char* s = std::getenv("CURVFORGE_SEED")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(s, &end, 10);
        if (end && *end == '\0') cfg.seed = v;
    }
}

inline std::string variant_name(BoundVariant v) {
    return v == BoundVariant::appendix ? "appendix" : "maintext";
}

inline std::string model_name(ModelKind m) { return m == ModelKind::attn ? "attn" : "block"; }

namespace detail {

inline bool validate(const RunConfig& cfg, std::string& err) {
    if (cfg.instances < 1) {
        err = "instances must be >= 1";
        return false;
    }
    if (cfg.dims.L < 1 || cfg.dims.d_K < 1 || cfg.dims.d_ff < 1) {
        err = "dims must be positive";
        return false;
    }
    if (cfg.dims.d_V < 2) {
        err = "dV must be >= 2: width-1 rows have zero variance under layer norm";
        return false;
    }
    if (cfg.format != "json" && cfg.format != "csv") {
        err = "format must be json or csv";
        return false;
    }
    return true;
}

struct CheckRecord {
    std::string name;
    std::uint64_t seed = 0;
    double value = 0.0;  // rel err or slack, depending on the command
    double tol = 0.0;
    bool pass = false;
};

inline ordered_json to_json(const CheckRecord& r) {
    ordered_json j;
    j["name"] = r.name;
    j["seed"] = r.seed;
    j["value"] = r.value;
    j["tol"] = r.tol;
    j["pass"] = r.pass;
    return j;
}

inline void sort_records(std::vector<CheckRecord>& recs) {
    std::sort(recs.begin(), recs.end(), [](const CheckRecord& a, const CheckRecord& b) {
        if (a.name != b.name) return a.name < b.name;
        return a.seed < b.seed;
    });
}

inline int emit_report(const RunConfig& cfg, const std::string& kind, std::vector<CheckRecord> recs,
                       ordered_json extra = ordered_json::object()) {
    sort_records(recs);
    bool all_pass = true;
    for (const auto& r : recs) all_pass = all_pass && r.pass;
    ordered_json doc;
    doc["schema"] = 1;
    doc["command"] = kind;
    doc["dims"] = {{"L", cfg.dims.L}, {"dV", cfg.dims.d_V}, {"dK", cfg.dims.d_K}, {"dff", cfg.dims.d_ff}};
    doc["seed"] = cfg.seed;
    doc["variant"] = variant_name(cfg.variant);
    doc["model"] = model_name(cfg.model);
    for (auto& [k, v] : extra.items()) doc[k] = v;
    doc["pass"] = all_pass;
    ordered_json arr = ordered_json::array();
    for (const auto& r : recs) arr.push_back(to_json(r));
    doc["records"] = std::move(arr);
    if (!cfg.out.empty()) {
        std::ofstream f(cfg.out, std::ios::binary);
        if (cfg.format == "csv") {
            f << "# command=" << kind << " L=" << cfg.dims.L << " dV=" << cfg.dims.d_V
              << " dK=" << cfg.dims.d_K << " dff=" << cfg.dims.d_ff << " seed=" << cfg.seed
              << " variant=" << variant_name(cfg.variant) << " model=" << model_name(cfg.model) << "\n";
            f << "name,seed,value,tol,pass\n";
            char buf[64];
            for (const auto& r : recs) {
                f << r.name << "," << r.seed << ",";
                std::snprintf(buf, sizeof(buf), "%.17g,%.17g", r.value, r.tol);
                f << buf << "," << (r.pass ? 1 : 0) << "\n";
            }
        } else {
            f << doc.dump(2) << "\n";
        }
    }
    std::printf("%s: %zu checks, %s\n", kind.c_str(), recs.size(), all_pass ? "all pass" : "FAILURES");
    return all_pass ? kExitPass : kExitFailure;
}

// A random block instance whose layer norms are comfortably conditioned and
// whose ReLU pre-activations sit away from the kinks (FD needs smoothness).
struct Instance {
    Mat X;
    Mat target;
    BlockParams p;
    BlockState st;
};

inline Instance draw_instance(const Dims& dims, Rng& rng, double kink_gate = 1e-3,
                              double sigma_gate = 0.1, bool require_regular = false) {
    for (int tries = 0; tries < 10000; ++tries) {
        Instance inst;
        inst.X = rng.gauss_mat(dims.L, dims.d_V);
        inst.target = rng.gauss_mat(dims.L, dims.d_V);
        inst.p = random_params(dims, rng, 1.0);
        try {
            inst.st = block_forward(inst.X, inst.p, kink_gate);
        } catch (const KinkProximity&) {
            continue;
        } catch (const DegenerateRow&) {
            continue;
        }
        if (input_sigma_min(inst.X) < sigma_gate) continue;
        if (input_sigma_min(inst.st.ff.S) < sigma_gate) continue;
        if (input_sigma_min(inst.st.S0) < sigma_gate) continue;
        if (require_regular && !attention_regular(inst.st.at)) continue;
        return inst;
    }
    throw ConvergenceFailure("could not draw a well-conditioned instance");
}

} // namespace detail

inline int cmd_verify(const RunConfig& cfg) {
    std::string err;
    if (!detail::validate(cfg, err)) {
        std::fprintf(stderr, "config error: %s\n", err.c_str());
        return kExitConfig;
    }
    const Dims dims = cfg.dims;
    std::vector<detail::CheckRecord> recs;
    const FdConfig jac_cfg{};                          // rel_tol 1e-6
    FdConfig hess_cfg{};
    hess_cfg.rel_tol = 1e-4;

    auto push = [&](const std::string& name, std::uint64_t seed, const ComparisonReport& rep, double tol) {
        recs.push_back({name, seed, rep.rel_fro_err, tol, rep.rel_fro_err <= tol});
    };

    for (std::size_t i = 0; i < cfg.instances; ++i) {
        const std::uint64_t seed = cfg.seed * 1000003ULL + i;
        Rng rng(seed);
        detail::Instance inst = detail::draw_instance(dims, rng);
        const BlockState& st = inst.st;
        const ModelSpec spec{dims, ModelKind::block};
        const Mat w0 = spec.pack(inst.p);

        // layer-norm derivatives at the inner input
        {
            auto f = [&](const Mat& v) { return vec_r(ln_forward(unvec_r(v, dims.L, dims.d_V)).Y); };
            push("ln_jacobian", seed, compare(ln_jacobian(st.lnY), fd_jacobian(f, vec_r(st.S0), jac_cfg)), 1e-6);
            auto fj = [&](const Mat& v) { return vec_r(ln_jacobian(ln_forward(unvec_r(v, dims.L, dims.d_V)))); };
            push("ln_hessian", seed, compare(ln_hessian(st.lnY), fd_jacobian(fj, vec_r(st.S0), hess_cfg), hess_cfg), 1e-4);
        }
        // feed-forward Jacobians
        {
            auto f1 = [&](const Mat& v) {
                FfnParams q = inst.p.ffn;
                q.W1 = unvec_r(v, dims.d_V, dims.d_ff);
                return vec_r(ffn_forward(st.Y, q).S);
            };
            push("ffn_b1", seed, compare(ffn_b1(st.ff), fd_jacobian(f1, vec_r(inst.p.ffn.W1), jac_cfg)), 1e-6);
            auto f2 = [&](const Mat& v) {
                FfnParams q = inst.p.ffn;
                q.W2 = unvec_r(v, dims.d_ff, dims.d_V);
                return vec_r(ffn_forward(st.Y, q).S);
            };
            push("ffn_b2", seed, compare(ffn_b2(st.ff), fd_jacobian(f2, vec_r(inst.p.ffn.W2), jac_cfg)), 1e-6);
            auto fy = [&](const Mat& v) { return vec_r(ffn_forward(unvec_r(v, dims.L, dims.d_V), inst.p.ffn).S); };
            push("ffn_jsy", seed, compare(ffn_jsy(st.ff), fd_jacobian(fy, vec_r(st.Y), jac_cfg)), 1e-6);
        }
        // attention Jacobians + softmax second derivative
        {
            static const char* gnames[3] = {"attn_g_k", "attn_g_q", "attn_g_v"};
            const WeightTag gtags[3] = {WeightTag::K, WeightTag::Q, WeightTag::V};
            for (int t = 0; t < 3; ++t) {
                const WeightTag w = gtags[t];
                auto f = [&](const Mat& v) {
                    AttnParams q = inst.p.attn;
                    if (w == WeightTag::K) q.W_K = unvec_r(v, dims.d_V, dims.d_K);
                    if (w == WeightTag::Q) q.W_Q = unvec_r(v, dims.d_V, dims.d_K);
                    if (w == WeightTag::V) q.W_V = unvec_r(v, dims.d_V, dims.d_V);
                    return vec_r(attn_forward(inst.X, q).F);
                };
                Mat w0v = (w == WeightTag::K)   ? vec_r(inst.p.attn.W_K)
                          : (w == WeightTag::Q) ? vec_r(inst.p.attn.W_Q)
                                                : vec_r(inst.p.attn.W_V);
                push(gnames[t], seed, compare(attn_g(st.at, w), fd_jacobian(f, w0v, jac_cfg)), 1e-6);
            }
            auto fs = [&](const Mat& v) { return vec_r(softmax_jacobian(row_softmax(unvec_r(v, dims.L, dims.L)))); };
            push("softmax_hessian", seed,
                 compare(softmax_hessian(st.at.A), fd_jacobian(fs, vec_r(st.at.T), hess_cfg), hess_cfg), 1e-4);
        }
        // block Jacobians for all five weights
        {
            static const char* bnames[5] = {"block_jac_w1", "block_jac_w2", "block_jac_wk", "block_jac_wq", "block_jac_wv"};
            for (int t = 0; t < 5; ++t) {
                const WeightTag w = kWeightOrder[t];
                const std::size_t off = [&] {
                    std::size_t o = 0;
                    for (int u = 0; u < t; ++u) o += block_nparam(st, kWeightOrder[u]);
                    return o;
                }();
                const std::size_t nw = block_nparam(st, w);
                auto f = [&](const Mat& v) {
                    Mat wall = w0;
                    for (std::size_t k = 0; k < nw; ++k) wall[off + k] = v[k];
                    return vec_r(block_forward(inst.X, spec.unpack(wall), 0.0, false).Z);
                };
                Mat w0v(nw, 1);
                for (std::size_t k = 0; k < nw; ++k) w0v[k] = w0[off + k];
                push(bnames[t], seed, compare(block_jacobian(st, w), fd_jacobian(f, w0v, jac_cfg)), 1e-6);
            }
        }
        // one representative second-derivative pair per instance (rotating)
        {
            const WeightTag wi = kWeightOrder[i % 5];
            const WeightTag wj = kWeightOrder[(i / 5 + i) % 5];
            std::size_t off = 0;
            for (WeightTag u : kWeightOrder) {
                if (u == wj) break;
                off += block_nparam(st, u);
            }
            const std::size_t nw = block_nparam(st, wj);
            auto f = [&](const Mat& v) {
                Mat wall = w0;
                for (std::size_t k = 0; k < nw; ++k) wall[off + k] = v[k];
                return vec_r(block_jacobian(block_forward(inst.X, spec.unpack(wall)), wi));
            };
            Mat w0v(nw, 1);
            for (std::size_t k = 0; k < nw; ++k) w0v[k] = w0[off + k];
            push("block_hessian_pair", seed,
                 compare(block_hessian(st, wi, wj), fd_jacobian(f, w0v, hess_cfg), hess_cfg), 1e-4);
        }
    }
    return detail::emit_report(cfg, "verify", std::move(recs));
}

inline int cmd_bounds(const RunConfig& cfg) {
    std::string err;
    if (!detail::validate(cfg, err)) {
        std::fprintf(stderr, "config error: %s\n", err.c_str());
        return kExitConfig;
    }
    const Dims dims = cfg.dims;
    std::vector<detail::CheckRecord> recs;
    auto push = [&](const BoundReport& b) {
        const bool ok = b.slack >= -1e-9 * b.rhs;
        recs.push_back({b.name, b.seed, b.slack, -1e-9 * b.rhs, ok});
    };
    static const char* wname[5] = {"w1", "w2", "wk", "wq", "wv"};
    auto tag_name = [&](WeightTag w) {
        switch (w) {
            case WeightTag::W1: return wname[0];
            case WeightTag::W2: return wname[1];
            case WeightTag::K: return wname[2];
            case WeightTag::Q: return wname[3];
            case WeightTag::V: return wname[4];
        }
        return "?";
    };

    for (std::size_t i = 0; i < cfg.instances; ++i) {
        const std::uint64_t seed = cfg.seed * 1000003ULL + i;
        Rng rng(seed);
        // The mixed chains use the near-uniform softmax-derivative estimate, so
        // bound instances are drawn from the regime where it holds.
        detail::Instance inst = detail::draw_instance(dims, rng, 1e-3, 0.1, /*require_regular=*/true);
        const BlockState& st = inst.st;

        // layer-norm bounds at the inner norm site
        {
            const LnBounds lb = ln_norm_bounds(st.S0);
            push(make_bound("ln_jacobian_norm", spectral_norm(st.JY), lb.jacobian, seed));
            push(make_bound("ln_hessian_norm", spectral_norm(st.HY), lb.hessian, seed));
        }
        // Y and S norms
        push(make_bound("y_norm", spectral_norm(st.Y), std::sqrt(static_cast<double>(dims.L * dims.d_V)), seed));
        {
            TransformerHessianBound tb(st, inst.target);
            push(make_bound("s_norm", spectral_norm(st.ff.S), tb.s_bound(), seed));
            if (cfg.model == ModelKind::block) {
                for (WeightTag wi : kWeightOrder)
                    for (WeightTag wj : kWeightOrder)
                        push(make_bound(std::string("block_pair_") + tag_name(wi) + "_" + tag_name(wj),
                                        spectral_norm(block_hessian(st, wi, wj)), tb.block_bound(wi, wj), seed));
                push(make_bound("m_tr", spectral_norm(block_loss_hessian_full(st, inst.target)), tb.m_tr(), seed));
            }
        }
        // intermediate constants
        {
            const double xn = spectral_norm(st.X);
            push(make_bound("softmax_jacobian_norm", spectral_norm(softmax_jacobian(st.at.A)),
                            1.0 / static_cast<double>(dims.L), seed));
            push(make_bound("attention_norm", spectral_norm(st.at.A), static_cast<double>(dims.L), seed));
            push(make_bound("softmax_hessian_block", softmax_hessian_block_norm_max(st.at.A), 6.0, seed));
            push(make_bound("z1_norm", spectral_norm(attn_z1(st.at)), xn * xn * xn / static_cast<double>(dims.L), seed));
            push(make_bound("z2_norm", spectral_norm(attn_z2(st.at)), 6.0 * std::pow(xn, 5), seed));
            push(make_bound("shuffle_norm", spectral_norm(shuffle_matrix(dims.d_V)),
                            std::sqrt(static_cast<double>(dims.d_V)), seed));
        }
        // attention loss-curvature bound
        if (cfg.model == ModelKind::attn) {
            const Mat h = sa_loss_hessian(inst.X, inst.target, inst.p.attn);
            const double m = sa_hessian_bound(inst.X, inst.target, inst.p.attn, cfg.variant);
            push(make_bound("sa_m", spectral_norm(h), m, seed));
            for (WeightTag wi : {WeightTag::K, WeightTag::Q, WeightTag::V})
                for (WeightTag wj : {WeightTag::K, WeightTag::Q, WeightTag::V})
                    push(make_bound(std::string("phi_") + tag_name(wi) + "_" + tag_name(wj),
                                    spectral_norm(phi(st.at, wi, wj)), phi_norm_bound(st.at, wi, wj), seed));
        }
    }
    ordered_json extra;
    extra["bound_variant"] = variant_name(cfg.variant);
    return detail::emit_report(cfg, "bounds", std::move(recs), extra);
}

inline int cmd_converge(const RunConfig& cfg) {
    std::string err;
    if (!detail::validate(cfg, err)) {
        std::fprintf(stderr, "config error: %s\n", err.c_str());
        return kExitConfig;
    }
    const ModelSpec spec{cfg.dims, cfg.model};
    std::vector<Sample> samples;
    std::optional<BlockParams> teacher;
    Rng rng(cfg.seed);
    try {
        if (cfg.data.rfind("synthetic:", 0) == 0) {
            const std::size_t count = std::strtoull(cfg.data.c_str() + 10, nullptr, 10);
            if (count < 2) {
                std::fprintf(stderr, "config error: synthetic count must be >= 2\n");
                return kExitConfig;
            }
            if (cfg.model == ModelKind::attn) {
                samples = generate_synthetic(cfg.dims, count, cfg.seed);
            } else {
                // random targets put the block-model minimum on a ReLU kink;
                // teacher targets keep a smooth zero-gradient minimizer in reach
                teacher = random_params(cfg.dims, rng);
                samples = generate_teacher(cfg.dims, count, cfg.seed, spec, *teacher);
            }
        } else if (!cfg.data.empty()) {
            samples = load_csv(cfg.data, cfg.dims);
        } else {
            std::fprintf(stderr, "config error: --data required (path or synthetic:<count>)\n");
            return kExitConfig;
        }
    } catch (const ParseError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const EmptyDataset& e) {
        std::fprintf(stderr, "config error: empty dataset %s\n", e.what());
        return kExitConfig;
    }
    if (samples.size() < 2) {
        std::fprintf(stderr, "config error: need at least 2 samples\n");
        return kExitConfig;
    }

    Mat w0 = teacher ? spec.pack(*teacher) + rng.gauss_mat(spec.nparam_total(), 1, 0.05)
                     : rng.gauss_mat(spec.nparam_total(), 1, 0.5);
    std::vector<Sample> head(samples.begin(), samples.begin() + samples.size() / 2 + 1);
    FitResult fit = fit_minimizer(head, spec, w0);
    for (int restart = 0; restart < 4 && (!fit.converged || fit.grad_norm > 1e-4); ++restart) {
        const Mat w0r = teacher ? spec.pack(*teacher) + rng.gauss_mat(spec.nparam_total(), 1, 0.05)
                                : rng.gauss_mat(spec.nparam_total(), 1, 0.5);
        fit = fit_minimizer(head, spec, w0r);
    }
    Mat u = rng.gauss_mat(spec.nparam_total(), 1);
    u *= 1.0 / frobenius_norm(u);
    const Mat w = fit.w + u * cfg.radius;
    const ConvergenceTrace tr = convergence_run(samples, spec, w, fit.w, cfg.variant, cfg.radius);
    if (!cfg.out.empty()) save_trace_csv(cfg.out, tr);
    const bool slope_ok = tr.slope_valid && tr.ema_slope >= -1.3 && tr.ema_slope <= -0.7;
    const bool pass = tr.violations == 0 && fit.converged && slope_ok;
    std::printf("converge: %zu samples, grad_norm %.3e, violations %zu, slope %.3f -> %s\n",
                samples.size(), fit.grad_norm, tr.violations, tr.ema_slope, pass ? "pass" : "FAIL");
    return pass ? kExitPass : kExitFailure;
}

inline int cmd_selftest(const RunConfig& cfg) {
    std::string err;
    if (!detail::validate(cfg, err)) {
        std::fprintf(stderr, "config error: %s\n", err.c_str());
        return kExitConfig;
    }
    bool ok = true;
    // commutation round trip
    {
        const Mat k1 = commutation(3, 4);
        const Mat k2 = commutation(4, 3);
        Mat p = k2 * k1;
        p -= Mat::identity(12);
        ok = ok && max_abs(p) == 0.0;
    }
    // FD oracle on a linear map is exact up to roundoff
    {
        Rng rng(cfg.seed);
        const Mat a = rng.gauss_mat(3, 3), b = rng.gauss_mat(4, 4);
        auto f = [&](const Mat& v) { return vec_r(a * unvec_r(v, 3, 4) * b); };
        const Mat j = fd_jacobian(f, rng.gauss_mat(12, 1));
        ok = ok && compare(kron(a, b.transpose()), j).rel_fro_err < 1e-9;
    }
    // spectral norm agrees with power iteration
    {
        Rng rng(cfg.seed + 1);
        const Mat a = rng.gauss_mat(8, 5);
        ok = ok && std::abs(spectral_norm(a) - power_iteration_norm(a)) < 1e-8 * spectral_norm(a);
    }
    std::printf("selftest: %s\n", ok ? "pass" : "FAIL");
    return ok ? kExitPass : kExitFailure;
}

inline int run_command(const RunConfig& cfg) {
    if (cfg.command == "verify") return cmd_verify(cfg);
    if (cfg.command == "bounds") return cmd_bounds(cfg);
    if (cfg.command == "converge") return cmd_converge(cfg);
    if (cfg.command == "selftest") return cmd_selftest(cfg);
    std::fprintf(stderr, "config error: unknown command '%s'\n", cfg.command.c_str());
    return kExitConfig;
}

} // namespace curvforge::cli
