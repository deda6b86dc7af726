#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "curvforge/bounds.hpp"

// Dataset-size convergence of the empirical loss: streaming means L_k, the
// averaged loss Hessian, the quadratic surrogate around a minimizer, and the
// envelope |L_{k+1} - L_k| <= 2 Lbar/(k+1) + M ||w - w*||^2/(k+1), where Lbar
// is the running max per-sample loss at w* and M the running max per-sample
// curvature bound.  Includes Gaussian sample generation, CSV ingestion, and a
// damped Gauss-Newton + Newton minimizer that produces w*.

namespace curvforge {

struct Sample {
    Mat X;
    Mat Target;
};

enum class ModelKind { attn, block };

// Flat parameter packing.  attn: (W_K, W_Q, W_V); block: (W1, W2, W_K, W_Q, W_V),
// each vectorized row-wise.
struct ModelSpec {
    Dims dims;
    ModelKind kind = ModelKind::attn;

    std::size_t nparam(WeightTag w) const {
        switch (w) {
            case WeightTag::W1: return dims.d_V * dims.d_ff;
            case WeightTag::W2: return dims.d_ff * dims.d_V;
            case WeightTag::Q:
            case WeightTag::K: return dims.d_V * dims.d_K;
            case WeightTag::V: return dims.d_V * dims.d_V;
        }
        return 0;
    }

    std::vector<WeightTag> order() const {
        if (kind == ModelKind::attn) return {WeightTag::K, WeightTag::Q, WeightTag::V};
        return {kWeightOrder.begin(), kWeightOrder.end()};
    }

    std::size_t nparam_total() const {
        std::size_t n = 0;
        for (WeightTag w : order()) n += nparam(w);
        return n;
    }

    BlockParams unpack(const Mat& w) const {
        if (w.size() != nparam_total()) throw ShapeMismatch("unpack of " + w.shape_str());
        BlockParams p;
        std::size_t off = 0;
        auto take = [&](std::size_t r, std::size_t c) {
            Mat v(r * c, 1);
            for (std::size_t k = 0; k < v.size(); ++k) v[k] = w[off + k];
            off += v.size();
            return unvec_r(v, r, c);
        };
        for (WeightTag t : order()) switch (t) {
            case WeightTag::W1: p.ffn.W1 = take(dims.d_V, dims.d_ff); break;
            case WeightTag::W2: p.ffn.W2 = take(dims.d_ff, dims.d_V); break;
            case WeightTag::K: p.attn.W_K = take(dims.d_V, dims.d_K); break;
            case WeightTag::Q: p.attn.W_Q = take(dims.d_V, dims.d_K); break;
            case WeightTag::V: p.attn.W_V = take(dims.d_V, dims.d_V); break;
        }
        return p;
    }

    Mat pack(const BlockParams& p) const {
        Mat w(nparam_total(), 1);
        std::size_t off = 0;
        auto put = [&](const Mat& m) {
            for (std::size_t k = 0; k < m.size(); ++k) w[off + k] = m[k];
            off += m.size();
        };
        for (WeightTag t : order()) switch (t) {
            case WeightTag::W1: put(p.ffn.W1); break;
            case WeightTag::W2: put(p.ffn.W2); break;
            case WeightTag::K: put(p.attn.W_K); break;
            case WeightTag::Q: put(p.attn.W_Q); break;
            case WeightTag::V: put(p.attn.W_V); break;
        }
        return w;
    }
};

namespace detail {

struct ResidualJac {
    Mat r;  // L d_V x 1 residual vec_r(output - target)
    Mat J;  // L d_V x n stacked output Jacobian
};

inline ResidualJac model_residual_jac(const ModelSpec& spec, const Mat& w, const Sample& s,
                                      bool with_jac = true) {
    const BlockParams p = spec.unpack(w);
    ResidualJac out;
    const std::size_t n = spec.nparam_total();
    if (spec.kind == ModelKind::attn) {
        const AttnState st = attn_forward(s.X, p.attn);
        out.r = vec_r(st.F - s.Target);
        if (!with_jac) return out;
        out.J = Mat(out.r.size(), n);
        std::size_t off = 0;
        for (WeightTag t : spec.order()) {
            const Mat g = attn_g(st, t);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) out.J(i, off + j) = g(i, j);
            off += g.cols();
        }
        return out;
    }
    const BlockState st = block_forward(s.X, p, 0.0, /*with_second=*/false);
    out.r = vec_r(st.Z - s.Target);
    if (!with_jac) return out;
    out.J = Mat(out.r.size(), n);
    std::size_t off = 0;
    for (WeightTag t : spec.order()) {
        const Mat g = block_jacobian(st, t);
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) out.J(i, off + j) = g(i, j);
        off += g.cols();
    }
    return out;
}

} // namespace detail

inline double sample_loss(const ModelSpec& spec, const Mat& w, const Sample& s) {
    const Mat r = detail::model_residual_jac(spec, w, s, false).r;
    return dot(r, r) / static_cast<double>(spec.dims.L * spec.dims.d_V);
}

inline Mat sample_loss_grad(const ModelSpec& spec, const Mat& w, const Sample& s) {
    const auto rj = detail::model_residual_jac(spec, w, s);
    return rj.J.transpose() * rj.r * (2.0 / static_cast<double>(spec.dims.L * spec.dims.d_V));
}

inline Mat sample_loss_hessian(const ModelSpec& spec, const Mat& w, const Sample& s) {
    const BlockParams p = spec.unpack(w);
    if (spec.kind == ModelKind::attn) return sa_loss_hessian(s.X, s.Target, p.attn);
    return block_loss_hessian_full(block_forward(s.X, p), s.Target);
}

// Per-sample curvature constant M_i feeding the envelope.
inline double sample_curvature_bound(const ModelSpec& spec, const Mat& w, const Sample& s,
                                     BoundVariant variant = BoundVariant::appendix) {
    const BlockParams p = spec.unpack(w);
    if (spec.kind == ModelKind::attn)
        return sa_hessian_bound(s.X, s.Target, p.attn, variant);
    const BlockState st = block_forward(s.X, p, 0.0, /*with_second=*/false);
    return TransformerHessianBound(st, s.Target).m_tr();
}

inline double empirical_loss(const std::vector<Sample>& samples, const ModelSpec& spec, const Mat& w) {
    if (samples.empty()) throw EmptyDataset("empirical_loss");
    double acc = 0.0;
    for (const Sample& s : samples) acc += sample_loss(spec, w, s);
    return acc / static_cast<double>(samples.size());
}

inline Mat averaged_hessian(const std::vector<Sample>& samples, const ModelSpec& spec, const Mat& w) {
    if (samples.empty()) throw EmptyDataset("averaged_hessian");
    const std::size_t n = spec.nparam_total();
    Mat h(n, n);
    for (const Sample& s : samples) h += sample_loss_hessian(spec, w, s);
    h *= 1.0 / static_cast<double>(samples.size());
    // exact symmetrization: individual blocks agree only to assembly roundoff
    Mat ht = h.transpose();
    h += ht;
    h *= 0.5;
    return h;
}

// Quadratic model around w*: L(w*) + (1/2)(w - w*)^T H (w - w*).
inline double taylor_surrogate(const Mat& w, const Mat& w_star, double loss_at_star, const Mat& h) {
    Mat d = w - w_star;
    return loss_at_star + 0.5 * dot(d, h * d);
}

struct FitResult {
    Mat w;
    double grad_norm = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

// Minimizes the empirical loss: damped Gauss-Newton (Levenberg-Marquardt on
// the stacked residual Jacobians), then exact Newton steps with the averaged
// analytic Hessian to push the gradient below grad_tol.
inline FitResult fit_minimizer(const std::vector<Sample>& samples, const ModelSpec& spec, const Mat& w0,
                               double grad_tol = 1e-4, std::size_t max_iters = 300) {
    if (samples.empty()) throw EmptyDataset("fit_minimizer");
    const std::size_t n = spec.nparam_total();
    const double k = static_cast<double>(samples.size());
    const double c = 2.0 / static_cast<double>(spec.dims.L * spec.dims.d_V);
    FitResult res;
    res.w = w0;
    double lambda = 1e-3;

    // trial points that degenerate a layer-norm row are simply rejected
    auto mean_loss = [&](const Mat& w) {
        try {
            return empirical_loss(samples, spec, w);
        } catch (const DegenerateRow&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    double loss = mean_loss(res.w);
    for (res.iterations = 0; res.iterations < max_iters; ++res.iterations) {
        Mat jtj(n, n), jtr(n, 1);
        for (const Sample& s : samples) {
            const auto rj = detail::model_residual_jac(spec, res.w, s);
            jtj += rj.J.transpose() * rj.J;
            jtr += rj.J.transpose() * rj.r;
        }
        Mat grad = jtr * (c / k);
        res.grad_norm = frobenius_norm(grad);
        if (res.grad_norm <= grad_tol) {
            res.converged = true;
            return res;
        }
        bool stepped = false;
        while (lambda <= 1e12) {
            Mat damped = jtj;
            for (std::size_t i = 0; i < n; ++i) damped(i, i) += lambda * jtj(i, i) + 1e-12;
            Mat step;
            try {
                step = inverse(damped) * jtr;
            } catch (const SingularMatrix&) {
                lambda *= 10.0;
                continue;
            }
            const Mat w2 = res.w - step;
            const double l2 = mean_loss(w2);
            if (l2 <= loss) {
                res.w = w2;
                loss = l2;
                lambda = std::max(lambda * 0.3, 1e-10);
                stepped = true;
                break;
            }
            lambda *= 10.0;
        }
        if (!stepped) break;  // Gauss-Newton direction exhausted; hand over to Newton
    }

    // Newton polish: Gauss-Newton drops the functional curvature term and can
    // stall just above tight tolerances; the full Hessian closes the gap.
    double trust = 1e-8;
    for (std::size_t it = 0; it < 50; ++it) {
        Mat grad(n, 1);
        for (const Sample& s : samples) grad += sample_loss_grad(spec, res.w, s);
        grad *= 1.0 / k;
        res.grad_norm = frobenius_norm(grad);
        if (res.grad_norm <= grad_tol) {
            res.converged = true;
            return res;
        }
        Mat h = averaged_hessian(samples, spec, res.w);
        bool stepped = false;
        while (trust <= 1e12) {
            Mat damped = h;
            for (std::size_t i = 0; i < n; ++i) damped(i, i) += trust;
            Mat step;
            try {
                step = inverse(damped) * grad;
            } catch (const SingularMatrix&) {
                trust = std::max(trust * 10.0, 1e-6);
                continue;
            }
            const Mat w2 = res.w - step;
            const double l2 = mean_loss(w2);
            if (l2 <= loss + 1e-15) {
                res.w = w2;
                loss = l2;
                trust = std::max(trust * 0.25, 1e-10);
                stepped = true;
                break;
            }
            trust = std::max(trust * 10.0, 1e-6);
        }
        if (!stepped) break;
    }
    return res;
}

struct TraceRow {
    std::size_t k = 0;      // samples seen after this step
    double loss = 0.0;      // L_k(w)
    double delta = 0.0;     // |L_k - L_{k-1}| (0 for the first row)
    double envelope = 0.0;  // 2 Lbar/k + M r^2/k (0 for the first row)
    double grad_norm = 0.0; // ||grad L_k(w*)||
    double m_used = 0.0;    // running max per-sample curvature bound
    double l_bar = 0.0;     // running max per-sample loss at w*
};

struct ConvergenceTrace {
    std::vector<TraceRow> rows;
    double probe_radius = 0.0;
    std::size_t violations = 0;  // delta > envelope count
    // least-squares slope of log(EMA delta) vs log k over k in [32, 512]
    double ema_slope = 0.0;
    bool slope_valid = false;
};

inline ConvergenceTrace convergence_run(const std::vector<Sample>& samples, const ModelSpec& spec,
                                        const Mat& w, const Mat& w_star,
                                        BoundVariant variant = BoundVariant::appendix,
                                        double probe_radius = 0.0) {
    if (samples.size() < 2) throw EmptyDataset("convergence_run needs at least 2 samples");
    ConvergenceTrace tr;
    tr.probe_radius = probe_radius > 0.0 ? probe_radius : frobenius_norm(w - w_star);
    const double r2 = [&] {
        const double d = frobenius_norm(w - w_star);
        return d * d;
    }();
    double l_k = 0.0, l_bar = 0.0, m_max = 0.0;
    Mat grad_sum(w.size(), 1);
    std::vector<std::pair<double, double>> log_pts;
    double ema = -1.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        const std::size_t k = i + 1;
        const double li_w = sample_loss(spec, w, s);
        l_bar = std::max(l_bar, sample_loss(spec, w_star, s));
        m_max = std::max(m_max, sample_curvature_bound(spec, w_star, s, variant));
        grad_sum += sample_loss_grad(spec, w_star, s);
        const double l_next = (static_cast<double>(i) * l_k + li_w) / static_cast<double>(k);
        TraceRow row;
        row.k = k;
        row.loss = l_next;
        row.m_used = m_max;
        row.l_bar = l_bar;
        row.grad_norm = frobenius_norm(grad_sum) / static_cast<double>(k);
        if (i >= 1) {
            row.delta = std::abs(l_next - l_k);
            row.envelope = 2.0 * l_bar / static_cast<double>(k) + m_max * r2 / static_cast<double>(k);
            if (row.delta > row.envelope) ++tr.violations;
            ema = (ema < 0.0) ? row.delta : 0.1 * row.delta + 0.9 * ema;
            if (k >= 32 && k <= 512 && ema > 0.0)
                log_pts.emplace_back(std::log(static_cast<double>(k)), std::log(ema));
        }
        l_k = l_next;
        tr.rows.push_back(row);
    }
    if (log_pts.size() >= 2) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (auto [x, y] : log_pts) {
            sx += x; sy += y; sxx += x * x; sxy += x * y;
        }
        const double np = static_cast<double>(log_pts.size());
        tr.ema_slope = (np * sxy - sx * sy) / (np * sxx - sx * sx);
        tr.slope_valid = true;
    }
    return tr;
}

inline std::vector<Sample> generate_synthetic(const Dims& dims, std::size_t count, std::uint64_t seed,
                                              double scale = 1.0) {
    if (count < 1) throw EmptyDataset("generate_synthetic count=0");
    Rng rng(seed);
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Sample s;
        s.X = rng.gauss_mat(dims.L, dims.d_V, scale);
        s.Target = rng.gauss_mat(dims.L, dims.d_V, scale);
        out.push_back(std::move(s));
    }
    return out;
}

// Samples whose targets come from a reference parameter set (plus optional
// Gaussian noise).  Unlike fully random targets, these give the empirical loss
// a smooth near-zero minimum: with random targets the minimizer generically
// lands exactly on a ReLU kink, where the gradient cannot be driven to zero.
inline std::vector<Sample> generate_teacher(const Dims& dims, std::size_t count, std::uint64_t seed,
                                            const ModelSpec& spec, const BlockParams& teacher,
                                            double x_scale = 1.0, double noise = 0.05,
                                            double kink_gate = 0.05) {
    if (count < 1) throw EmptyDataset("generate_teacher count=0");
    Rng rng(seed);
    std::vector<Sample> out;
    out.reserve(count);
    int budget = 200 * static_cast<int>(count);
    while (out.size() < count && budget-- > 0) {
        Sample s;
        s.X = rng.gauss_mat(dims.L, dims.d_V, x_scale);
        if (spec.kind == ModelKind::attn) {
            s.Target = attn_forward(s.X, teacher.attn).F;
        } else {
            // an input that drives the teacher near a ReLU kink drags the
            // empirical minimum onto the kink, where the gradient cannot vanish
            try {
                s.Target = block_forward(s.X, teacher, kink_gate, false).Z;
            } catch (const KinkProximity&) {
                continue;
            } catch (const DegenerateRow&) {
                continue;
            }
        }
        if (noise > 0.0) s.Target += rng.gauss_mat(dims.L, dims.d_V, noise);
        out.push_back(std::move(s));
    }
    if (out.size() < count) throw ConvergenceFailure("generate_teacher: sample budget exhausted");
    return out;
}

inline BlockParams random_params(const Dims& dims, Rng& rng, double scale = 0.5) {
    BlockParams p;
    p.ffn.W1 = rng.gauss_mat(dims.d_V, dims.d_ff, scale);
    p.ffn.W2 = rng.gauss_mat(dims.d_ff, dims.d_V, scale);
    p.attn.W_K = rng.gauss_mat(dims.d_V, dims.d_K, scale);
    p.attn.W_Q = rng.gauss_mat(dims.d_V, dims.d_K, scale);
    p.attn.W_V = rng.gauss_mat(dims.d_V, dims.d_V, scale);
    return p;
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void save_csv(const std::string& path, const std::vector<Sample>& samples, const Dims& dims) {
    std::ofstream f(path);
    if (!f) throw ParseError("cannot open " + path + " for writing", 0);
    f << "# dims L=" << dims.L << " dV=" << dims.d_V << "\n";
    for (const Sample& s : samples) {
        bool first = true;
        auto emit = [&](const Mat& m) {
            for (std::size_t k = 0; k < m.size(); ++k) {
                if (!first) f << ",";
                f << format_double(m[k]);
                first = false;
            }
        };
        emit(s.X);
        emit(s.Target);
        f << "\n";
    }
}

inline std::vector<Sample> load_csv(const std::string& path, const Dims& dims) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open " + path, 0);
    std::vector<Sample> out;
    std::string line;
    std::size_t lineno = 0;
    const std::size_t per_mat = dims.L * dims.d_V;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> vals;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            try {
                std::size_t used = 0;
                const double v = std::stod(tok, &used);
                while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used]))) ++used;
                if (used != tok.size()) throw std::invalid_argument(tok);
                vals.push_back(v);
            } catch (const std::exception&) {
                throw ParseError("bad number '" + tok + "'", lineno);
            }
        }
        if (vals.size() != 2 * per_mat)
            throw ParseError("expected " + std::to_string(2 * per_mat) + " values, got " +
                                 std::to_string(vals.size()),
                             lineno);
        Sample s;
        s.X = Mat(dims.L, dims.d_V);
        s.Target = Mat(dims.L, dims.d_V);
        for (std::size_t k = 0; k < per_mat; ++k) s.X[k] = vals[k];
        for (std::size_t k = 0; k < per_mat; ++k) s.Target[k] = vals[per_mat + k];
        if (!s.X.is_finite() || !s.Target.is_finite()) throw ParseError("non-finite sample", lineno);
        out.push_back(std::move(s));
    }
    if (out.empty()) throw EmptyDataset(path);
    return out;
}

inline void save_trace_csv(const std::string& path, const ConvergenceTrace& tr) {
    std::ofstream f(path);
    if (!f) throw ParseError("cannot open " + path + " for writing", 0);
    f << "# probe_radius=" << format_double(tr.probe_radius) << "\n";
    f << "k,loss,delta,envelope,grad_norm,M,L_bar\n";
    for (const TraceRow& r : tr.rows)
        f << r.k << "," << format_double(r.loss) << "," << format_double(r.delta) << ","
          << format_double(r.envelope) << "," << format_double(r.grad_norm) << ","
          << format_double(r.m_used) << "," << format_double(r.l_bar) << "\n";
}

} // namespace curvforge
