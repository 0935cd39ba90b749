#ifndef LPROBE_HEAD_HPP
#define LPROBE_HEAD_HPP

// Per-layer MLM decoding head:
//   logits = LN(gelu(h·Wdᵀ + bd); gamma, beta)·Wpᵀ + bp
// with closed-form reverse-mode gradients under mean cross-entropy, and Adam.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lprobe/checkpoint.hpp"
#include "lprobe/errors.hpp"
#include "lprobe/rng.hpp"
#include "lprobe/tensor.hpp"

namespace lprobe {

/// The six head parameter tensors. Reused for gradients and Adam moments.
struct HeadTensors {
    Tensor dense_w;   // [hidden, hidden]
    Tensor dense_b;   // [hidden]
    Tensor ln_gamma;  // [hidden]
    Tensor ln_beta;   // [hidden]
    Tensor proj_w;    // [vocab, hidden]
    Tensor proj_b;    // [vocab]

    /// Visits (checkpoint name, tensor) in a fixed order.
    template <class F>
    void visit(F&& f) {
        f(names::head_dense_weight, dense_w);
        f(names::head_dense_bias, dense_b);
        f(names::head_ln_gamma, ln_gamma);
        f(names::head_ln_beta, ln_beta);
        f(names::head_proj_weight, proj_w);
        f(names::head_proj_bias, proj_b);
    }
    template <class F>
    void visit(F&& f) const {
        f(names::head_dense_weight, dense_w);
        f(names::head_dense_bias, dense_b);
        f(names::head_ln_gamma, ln_gamma);
        f(names::head_ln_beta, ln_beta);
        f(names::head_proj_weight, proj_w);
        f(names::head_proj_bias, proj_b);
    }

    static HeadTensors zeros(std::size_t hidden, std::size_t vocab) {
        return {Tensor({hidden, hidden}), Tensor({hidden}), Tensor({hidden}),
                Tensor({hidden}),         Tensor({vocab, hidden}), Tensor({vocab})};
    }

    friend bool operator==(const HeadTensors&, const HeadTensors&) = default;
};

struct DecodingHead {
    HeadTensors params;
    int layer = 0;
    double ln_eps = kDefaultLayerNormEps;
    GeluVariant gelu = GeluVariant::tanh;

    std::size_t hidden() const { return params.dense_w.dim(0); }
    std::size_t vocab() const { return params.proj_w.dim(0); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        params.visit([&](const std::string&, const Tensor& t) { n += t.numel(); });
        return n;
    }

    friend bool operator==(const DecodingHead&, const DecodingHead&) = default;
};

/// hidden² + hidden + 2·hidden + vocab·hidden + vocab.
inline constexpr std::size_t head_parameter_count(std::size_t hidden, std::size_t vocab) {
    return hidden * hidden + hidden + 2 * hidden + vocab * hidden + vocab;
}

enum class HeadInit { pretrained, random };

inline constexpr double kHeadInitStddev = 0.02;

/// Pretrained copies the checkpoint's head tensors; random draws
/// truncated-normal(0.02) weights with zero biases and unit LN gain.
inline DecodingHead init_head(const Checkpoint& ckpt, int layer, HeadInit mode, std::uint64_t seed = 0) {
    const auto hidden = std::size_t(ckpt.config.hidden_dim), vocab = std::size_t(ckpt.config.vocab_size);
    DecodingHead head;
    head.layer = layer;
    head.ln_eps = ckpt.config.ln_eps;
    head.gelu = ckpt.config.gelu;
    if (mode == HeadInit::pretrained) {
        std::vector<std::string> absent;
        for (const auto& n : names::head_names())
            if (!ckpt.contains(n)) absent.push_back(n);
        if (!absent.empty()) {
            std::string msg = "pretrained head init requested but checkpoint lacks:";
            for (const auto& n : absent) msg += " " + n;
            throw InitError(msg);
        }
        head.params.visit([&](const std::string& name, Tensor& t) { t = ckpt.at(name); });
        return head;
    }
    head.params = HeadTensors::zeros(hidden, vocab);
    Rng rng(derive_seed(seed, {0x4845414455ULL, std::uint64_t(layer)}));
    for (auto& v : head.params.dense_w.storage()) v = float(rng.truncated_normal(kHeadInitStddev));
    for (auto& v : head.params.proj_w.storage()) v = float(rng.truncated_normal(kHeadInitStddev));
    for (auto& v : head.params.ln_gamma.storage()) v = 1.0f;
    return head;
}

inline Tensor head_forward(const DecodingHead& head, const Tensor& h) {
    if (h.rank() != 2 || h.dim(1) != head.hidden()) {
        throw DimensionError("head_forward: input " + shape_str(h.shape()) + " but head hidden size is " +
                             std::to_string(head.hidden()));
    }
    const auto& p = head.params;
    const Tensor z = gelu(linear(h, p.dense_w, &p.dense_b), head.gelu);
    const Tensor n = layer_norm(z, p.ln_gamma, p.ln_beta, head.ln_eps);
    return linear(n, p.proj_w, &p.proj_b);
}

struct HeadGradients {
    double loss = 0;
    HeadTensors params;
    Tensor input;  // d loss / d h, [m, hidden]
};

/// Mean cross-entropy over rows and its exact gradients. All intermediate
/// arithmetic is double precision.
inline HeadGradients head_backward(const DecodingHead& head, const Tensor& h, std::span<const int> gold) {
    if (h.rank() != 2 || h.dim(1) != head.hidden()) {
        throw DimensionError("head_backward: input " + shape_str(h.shape()) + " but head hidden size is " +
                             std::to_string(head.hidden()));
    }
    const std::size_t m = h.dim(0), H = head.hidden(), V = head.vocab();
    if (gold.size() != m) throw DimensionError("head_backward: gold ids do not match rows");
    for (int g : gold)
        if (g < 0 || std::size_t(g) >= V) throw IndexError("head_backward: gold id " + std::to_string(g) + " out of range");
    const auto& p = head.params;

    std::vector<double> xhat(m * H), inv(m), gelu_d(m * H), normed(m * H), dlogits(m * V);
    double loss = 0;
    std::vector<double> z(H), a(H), logits(V);
    for (std::size_t i = 0; i < m; ++i) {
        const float* hi = h.row(i).data();
        for (std::size_t r = 0; r < H; ++r) {
            z[r] = detail::dot(p.dense_w.row(r).data(), hi, H) + double(p.dense_b[r]);
            a[r] = gelu_scalar(z[r], head.gelu);
            gelu_d[i * H + r] = gelu_grad_scalar(z[r], head.gelu);
        }
        double mean = 0;
        for (double v : a) mean += v;
        mean /= double(H);
        double var = 0;
        for (double v : a) var += (v - mean) * (v - mean);
        var /= double(H);
        inv[i] = 1.0 / std::sqrt(var + head.ln_eps);
        for (std::size_t r = 0; r < H; ++r) {
            xhat[i * H + r] = (a[r] - mean) * inv[i];
            normed[i * H + r] = xhat[i * H + r] * double(p.ln_gamma[r]) + double(p.ln_beta[r]);
        }
        double mx = -INFINITY;
        for (std::size_t j = 0; j < V; ++j) {
            const float* pj = p.proj_w.row(j).data();
            double s = double(p.proj_b[j]);
            for (std::size_t r = 0; r < H; ++r) s += double(pj[r]) * normed[i * H + r];
            logits[j] = s;
            mx = std::max(mx, s);
        }
        double zsum = 0;
        for (std::size_t j = 0; j < V; ++j) zsum += std::exp(logits[j] - mx);
        const double lse = mx + std::log(zsum);
        loss += lse - logits[std::size_t(gold[i])];
        for (std::size_t j = 0; j < V; ++j) dlogits[i * V + j] = std::exp(logits[j] - lse) / double(m);
        dlogits[i * V + std::size_t(gold[i])] -= 1.0 / double(m);
    }
    if (!std::isfinite(loss)) throw NumericError("head_backward: non-finite loss");

    HeadGradients g;
    g.loss = loss / double(m);
    g.params = HeadTensors::zeros(H, V);
    g.input = Tensor({m, H});

    // Projection.
    std::vector<double> acc(H);
    for (std::size_t j = 0; j < V; ++j) {
        std::fill(acc.begin(), acc.end(), 0.0);
        double bsum = 0;
        for (std::size_t i = 0; i < m; ++i) {
            const double dl = dlogits[i * V + j];
            bsum += dl;
            for (std::size_t r = 0; r < H; ++r) acc[r] += dl * normed[i * H + r];
        }
        g.params.proj_b[j] = float(bsum);
        for (std::size_t r = 0; r < H; ++r) g.params.proj_w(j, r) = float(acc[r]);
    }

    std::vector<double> d_gamma(H), d_beta(H), d_dense_b(H), d_dense_w(H * H);
    std::vector<double> dn(H), dz(H);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(dn.begin(), dn.end(), 0.0);
        for (std::size_t j = 0; j < V; ++j) {
            const double dl = dlogits[i * V + j];
            const float* pj = p.proj_w.row(j).data();
            for (std::size_t r = 0; r < H; ++r) dn[r] += dl * double(pj[r]);
        }
        // LayerNorm.
        double mean_dx = 0, mean_dx_xhat = 0;
        for (std::size_t r = 0; r < H; ++r) {
            const double xh = xhat[i * H + r];
            d_gamma[r] += dn[r] * xh;
            d_beta[r] += dn[r];
            const double dxh = dn[r] * double(p.ln_gamma[r]);
            mean_dx += dxh;
            mean_dx_xhat += dxh * xh;
        }
        mean_dx /= double(H);
        mean_dx_xhat /= double(H);
        for (std::size_t r = 0; r < H; ++r) {
            const double dxh = dn[r] * double(p.ln_gamma[r]);
            const double da = inv[i] * (dxh - mean_dx - xhat[i * H + r] * mean_dx_xhat);
            dz[r] = da * gelu_d[i * H + r];
            d_dense_b[r] += dz[r];
        }
        // Dense.
        const float* hi = h.row(i).data();
        for (std::size_t r = 0; r < H; ++r)
            for (std::size_t c = 0; c < H; ++c) d_dense_w[r * H + c] += dz[r] * double(hi[c]);
        for (std::size_t c = 0; c < H; ++c) {
            double s = 0;
            for (std::size_t r = 0; r < H; ++r) s += dz[r] * double(p.dense_w(r, c));
            g.input(i, c) = float(s);
        }
    }
    for (std::size_t r = 0; r < H; ++r) {
        g.params.ln_gamma[r] = float(d_gamma[r]);
        g.params.ln_beta[r] = float(d_beta[r]);
        g.params.dense_b[r] = float(d_dense_b[r]);
    }
    for (std::size_t k = 0; k < H * H; ++k) g.params.dense_w[k] = float(d_dense_w[k]);
    return g;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update of a flat parameter block. `step` is the
/// 1-based update count.
inline void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                        std::uint64_t step, const AdamHyper& hyper) {
    const double c1 = 1.0 - std::pow(hyper.beta1, double(step));
    const double c2 = 1.0 - std::pow(hyper.beta2, double(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        const double mi = hyper.beta1 * double(m[i]) + (1.0 - hyper.beta1) * g;
        const double vi = hyper.beta2 * double(v[i]) + (1.0 - hyper.beta2) * g * g;
        m[i] = float(mi);
        v[i] = float(vi);
        param[i] = float(double(param[i]) - hyper.lr * (mi / c1) / (std::sqrt(vi / c2) + hyper.eps));
    }
}

struct AdamState {
    HeadTensors m;
    HeadTensors v;
    std::uint64_t step = 0;

    static AdamState for_head(const DecodingHead& head) {
        return {HeadTensors::zeros(head.hidden(), head.vocab()), HeadTensors::zeros(head.hidden(), head.vocab()), 0};
    }
};

inline void adam_step(DecodingHead& head, const HeadTensors& grads, AdamState& state, const AdamHyper& hyper) {
    grads.visit([&](const std::string& name, const Tensor& g) {
        if (!g.all_finite()) throw TrainingError("non-finite gradient in " + name);
    });
    if (state.m.dense_w.shape() != head.params.dense_w.shape() || state.m.proj_w.shape() != head.params.proj_w.shape()) {
        throw DimensionError("adam_step: optimizer state shaped differently from head");
    }
    ++state.step;
    std::vector<Tensor*> ps, ms, vs;
    std::vector<const Tensor*> gs;
    head.params.visit([&](const std::string&, Tensor& t) { ps.push_back(&t); });
    state.m.visit([&](const std::string&, Tensor& t) { ms.push_back(&t); });
    state.v.visit([&](const std::string&, Tensor& t) { vs.push_back(&t); });
    grads.visit([&](const std::string&, const Tensor& t) { gs.push_back(&t); });
    for (std::size_t k = 0; k < ps.size(); ++k) {
        if (gs[k]->shape() != ps[k]->shape()) throw DimensionError("adam_step: gradient shape mismatch");
        adam_update(ps[k]->data(), gs[k]->data(), ms[k]->data(), vs[k]->data(), state.step, hyper);
    }
}

// ---------------------------------------------------------------------------
// Persistence: one LPKT file per head.

inline Checkpoint head_to_checkpoint(const DecodingHead& head, const EncoderConfig& config, const json& provenance) {
    Checkpoint c;
    c.config = config;
    c.provenance = provenance.is_object() ? provenance : json::object();
    c.provenance["kind"] = "decoding_head";
    c.provenance["layer"] = head.layer;
    head.params.visit([&](const std::string& name, const Tensor& t) { c.tensors.emplace(name, t); });
    return c;
}

inline DecodingHead head_from_checkpoint(const Checkpoint& c) {
    const auto report = validate_against(head_schema(std::size_t(c.config.hidden_dim), std::size_t(c.config.vocab_size)),
                                        shapes_of(c.tensors));
    if (!report.ok() || !report.has_pretrained_head) throw SchemaError("head file fails head schema: " + report.summary());
    DecodingHead head = init_head(c, c.provenance.value("layer", 0), HeadInit::pretrained);
    return head;
}

inline void save_head(const DecodingHead& head, const EncoderConfig& config, const json& provenance,
                      const std::filesystem::path& path) {
    write_lpkt(head_to_checkpoint(head, config, provenance), path);
}

inline DecodingHead load_head(const std::filesystem::path& path, json* provenance = nullptr) {
    Checkpoint c = read_lpkt(path);
    if (provenance) *provenance = c.provenance;
    return head_from_checkpoint(c);
}

}  // namespace lprobe

#endif
