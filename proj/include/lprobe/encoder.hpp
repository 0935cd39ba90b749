#ifndef LPROBE_ENCODER_HPP
#define LPROBE_ENCODER_HPP

// Frozen post-LN transformer encoder exposing the output of every layer.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lprobe/checkpoint.hpp"
#include "lprobe/errors.hpp"
#include "lprobe/tensor.hpp"

namespace lprobe {

inline constexpr double kAttentionMaskBias = -1e4;

struct LayerStates {
    /// states[l-1] is the output of encoder layer l, shape [seq_len, hidden].
    std::vector<Tensor> states;
    /// Embedding output, kept only when requested (layer 0 is not a probed layer by default).
    std::optional<Tensor> embeddings;

    std::size_t num_layers() const noexcept { return states.size(); }
};

/// Token + position + segment embeddings followed by the embedding LayerNorm.
inline Tensor embed(std::span<const int> ids, std::span<const int> segment_ids, const EncoderConfig& config,
                    const Checkpoint& ckpt) {
    const std::size_t n = ids.size();
    if (n == 0) throw DimensionError("embed: empty token sequence");
    if (n > std::size_t(config.max_positions)) {
        throw DimensionError("embed: sequence length " + std::to_string(n) + " exceeds max_positions " +
                             std::to_string(config.max_positions));
    }
    if (!segment_ids.empty() && segment_ids.size() != n) {
        throw DimensionError("embed: segment ids length differs from token ids");
    }
    const Tensor& tok = ckpt.at(names::token_embeddings);
    const Tensor& pos = ckpt.at(names::position_embeddings);
    const Tensor& seg = ckpt.at(names::segment_embeddings);
    const std::size_t d = std::size_t(config.hidden_dim);
    Tensor sum({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const int id = ids[i];
        if (id < 0 || id >= config.vocab_size) {
            throw IndexError("embed: token id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(config.vocab_size));
        }
        const int s = segment_ids.empty() ? 0 : segment_ids[i];
        if (s < 0 || s >= config.type_vocab) throw IndexError("embed: segment id " + std::to_string(s) + " out of range");
        auto t = tok.row(std::size_t(id));
        auto p = pos.row(i);
        auto g = seg.row(std::size_t(s));
        auto out = sum.row(i);
        for (std::size_t j = 0; j < d; ++j) out[j] = float(double(t[j]) + double(p[j]) + double(g[j]));
    }
    return layer_norm(sum, ckpt.at(names::embedding_ln_gamma), ckpt.at(names::embedding_ln_beta), config.ln_eps);
}

namespace detail {

inline Tensor self_attention(const Tensor& h, std::span<const std::uint8_t> attn_mask, const EncoderConfig& config,
                             const Checkpoint& ckpt, int l) {
    auto w = [&](const char* s) -> const Tensor& { return ckpt.at(names::layer(l, s)); };
    const Tensor q = linear(h, w("attn.query.weight"), &w("attn.query.bias"));
    const Tensor k = linear(h, w("attn.key.weight"), &w("attn.key.bias"));
    const Tensor v = linear(h, w("attn.value.weight"), &w("attn.value.bias"));
    const std::size_t n = h.dim(0), dh = std::size_t(config.head_dim());
    const double scale = 1.0 / std::sqrt(double(dh));
    Tensor ctx({n, std::size_t(config.hidden_dim)});
    std::vector<double> p(n), acc(dh);
    for (int head = 0; head < config.num_heads; ++head) {
        const std::size_t off = std::size_t(head) * dh;
        for (std::size_t i = 0; i < n; ++i) {
            double mx = -INFINITY;
            for (std::size_t j = 0; j < n; ++j) {
                double s = dot(q.row(i).data() + off, k.row(j).data() + off, dh) * scale;
                if (!attn_mask[j]) s += kAttentionMaskBias;
                p[j] = s;
                mx = std::max(mx, s);
            }
            double z = 0;
            for (std::size_t j = 0; j < n; ++j) z += (p[j] = std::exp(p[j] - mx));
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                const double pj = p[j] / z;
                const float* vj = v.row(j).data() + off;
                for (std::size_t t = 0; t < dh; ++t) acc[t] += pj * double(vj[t]);
            }
            for (std::size_t t = 0; t < dh; ++t) ctx(i, off + t) = float(acc[t]);
        }
    }
    return linear(ctx, w("attn.output.weight"), &w("attn.output.bias"));
}

inline Tensor encoder_block(const Tensor& h, std::span<const std::uint8_t> attn_mask, const EncoderConfig& config,
                            const Checkpoint& ckpt, int l) {
    auto w = [&](const char* s) -> const Tensor& { return ckpt.at(names::layer(l, s)); };
    const Tensor attn = self_attention(h, attn_mask, config, ckpt, l);
    const Tensor h1 = layer_norm(add(h, attn), w("attn_ln.gamma"), w("attn_ln.beta"), config.ln_eps);
    const Tensor inner = gelu(linear(h1, w("ffn.in.weight"), &w("ffn.in.bias")), config.gelu);
    const Tensor ffn = linear(inner, w("ffn.out.weight"), &w("ffn.out.bias"));
    return layer_norm(add(h1, ffn), w("ffn_ln.gamma"), w("ffn_ln.beta"), config.ln_eps);
}

}  // namespace detail

struct EncodeOptions {
    /// Stop after this layer (0 = run all layers). Later layers cannot affect earlier ones.
    int up_to_layer = 0;
    bool keep_embeddings = false;
};

/// Runs the encoder blocks over h0 [seq_len, hidden]. attn_mask[j] == 0 marks
/// padding keys, which receive an additive -1e4 attention bias.
inline LayerStates encode_all_layers(const Tensor& h0, std::span<const std::uint8_t> attn_mask,
                                     const EncoderConfig& config, const Checkpoint& ckpt,
                                     EncodeOptions options = {}) {
    if (h0.rank() != 2 || h0.dim(1) != std::size_t(config.hidden_dim)) {
        throw DimensionError("encode_all_layers: input " + shape_str(h0.shape()) + " but hidden_dim is " +
                             std::to_string(config.hidden_dim));
    }
    if (attn_mask.size() != h0.dim(0)) throw DimensionError("encode_all_layers: attention mask length mismatch");
    if (config.num_layers > 0 && config.hidden_dim % config.num_heads != 0) {
        throw DimensionError("encode_all_layers: hidden_dim not divisible by num_heads");
    }
    const int last = options.up_to_layer > 0 ? std::min(options.up_to_layer, config.num_layers) : config.num_layers;
    LayerStates out;
    if (options.keep_embeddings) out.embeddings = h0;
    out.states.reserve(std::size_t(last));
    const Tensor* prev = &h0;
    for (int l = 1; l <= last; ++l) {
        out.states.push_back(detail::encoder_block(*prev, attn_mask, config, ckpt, l));
        prev = &out.states.back();
    }
    return out;
}

/// Embeds and encodes one unpadded sequence (segment 0 throughout).
inline LayerStates run_encoder(std::span<const int> ids, const Checkpoint& ckpt, EncodeOptions options = {}) {
    const Tensor h0 = embed(ids, {}, ckpt.config, ckpt);
    const std::vector<std::uint8_t> mask(ids.size(), 1);
    return encode_all_layers(h0, mask, ckpt.config, ckpt, options);
}

/// Mask-position row of layer `layer` (1-based). Layer 0 is available only
/// when the embeddings were kept.
inline Tensor hidden_at_mask(const LayerStates& states, int layer, std::size_t mask_index) {
    const Tensor* t = nullptr;
    if (layer == 0 && states.embeddings) {
        t = &*states.embeddings;
    } else if (layer >= 1 && std::size_t(layer) <= states.num_layers()) {
        t = &states.states[std::size_t(layer) - 1];
    } else {
        throw IndexError("layer " + std::to_string(layer) + " outside 1.." + std::to_string(states.num_layers()));
    }
    if (mask_index >= t->dim(0)) {
        throw IndexError("mask index " + std::to_string(mask_index) + " outside sequence of " +
                         std::to_string(t->dim(0)));
    }
    auto row = t->row(mask_index);
    return Tensor::vector(std::vector<float>(row.begin(), row.end()));
}

}  // namespace lprobe

#endif
