#ifndef LPROBE_SYNTHETIC_HPP
#define LPROBE_SYNTHETIC_HPP

// Planted-knowledge toy encoder over sentences "[CLS] subject relation answer
// [SEP]". Layer 1 copies the subject's identity onto the answer slot
// (position 3), layer 2 replaces it by the identity of the subject's answer
// (the "fact"), and an optional layer 3 erases the answer again.
//
// Every logical feature f occupies the dimension pair (2f, 2f+1) holding
// (+x, -x), so rows are always zero-mean and the post-LN layer norms only
// rescale them. FFN blocks realize exact linear maps through
// gelu(z) - gelu(-z) = z.

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "lprobe/checkpoint.hpp"
#include "lprobe/probes.hpp"
#include "lprobe/tensor.hpp"
#include "lprobe/tokenizer.hpp"

namespace lprobe {

struct PlantedSpec {
    int num_subjects = 48;
    int num_answers = 8;
    int num_relations = 3;
    /// Subjects [0, train_subjects) appear in the corpus; the rest are probed.
    int train_subjects = 24;
    /// Adds layer 3, which projects the answer signal away.
    bool forget_layer = true;
    int corpus_repeats = 40;
    /// Include an identity-readout pretrained head in the checkpoint.
    bool pretrained_head = true;
};

struct PlantedTask {
    PlantedSpec spec;
    Checkpoint checkpoint;
    std::vector<std::string> vocab_tokens;
    Vocab vocab;
    std::vector<std::string> corpus_lines;
    std::vector<ProbeInstance> probes;
    int planted_layer = 2;
};

inline constexpr std::size_t kPlantedAnswerSlot = 3;

namespace planted {

inline std::string subject(int i) { return "sub" + std::to_string(i); }
inline std::string answer(int a) { return "ans" + std::to_string(a); }
inline std::string relation(int r) { return "rel" + std::to_string(r); }
inline int answer_of(int subject, const PlantedSpec& s) { return subject % s.num_answers; }
inline int relation_of(int subject, const PlantedSpec& s) { return subject % s.num_relations; }

inline std::string fact(int i, const PlantedSpec& s) {
    return subject(i) + " " + relation(relation_of(i, s)) + " " + answer(answer_of(i, s));
}

inline std::string cloze(int i, const PlantedSpec& s) {
    return subject(i) + " " + relation(relation_of(i, s)) + " [MASK]";
}

}  // namespace planted

inline PlantedTask build_planted_task(const PlantedSpec& spec = {}) {
    if (spec.num_subjects < 2 || spec.num_answers < 1 || spec.num_relations < 1 || spec.train_subjects < 1 ||
        spec.train_subjects >= spec.num_subjects || spec.corpus_repeats < 1) {
        throw ConfigError("invalid planted task specification");
    }
    const int S = spec.num_subjects, A = spec.num_answers, R = spec.num_relations;

    // Logical features: specials, subject ids, answer ids, relation ids,
    // subject flag, answer-slot position.
    const int f_special = 0, f_subject = 5, f_answer = f_subject + S, f_relation = f_answer + A;
    const int f_flag = f_relation + R, f_slot = f_flag + 1, n_features = f_slot + 1;
    const std::size_t H = std::size_t(2 * n_features);
    const int half = std::max(S, A);

    PlantedTask task;
    task.spec = spec;
    task.planted_layer = 2;
    auto& tokens = task.vocab_tokens;
    tokens = {std::string(kPadToken), std::string(kUnkToken), std::string(kClsToken), std::string(kSepToken),
              std::string(kMaskToken)};
    for (int i = 0; i < S; ++i) tokens.push_back(planted::subject(i));
    for (int a = 0; a < A; ++a) tokens.push_back(planted::answer(a));
    for (int r = 0; r < R; ++r) tokens.push_back(planted::relation(r));
    task.vocab = Vocab::from_tokens(tokens, Casing::uncased);
    const std::size_t V = tokens.size();

    EncoderConfig cfg;
    cfg.num_layers = spec.forget_layer ? 3 : 2;
    cfg.hidden_dim = int(H);
    cfg.num_heads = 1;
    cfg.ffn_dim = 2 * half;
    cfg.vocab_size = int(V);
    cfg.max_positions = 16;
    cfg.type_vocab = 2;
    Checkpoint& ck = task.checkpoint;
    ck.config = cfg;
    ck.provenance = json{{"source", "planted"},
                         {"planted_layer", 2},
                         {"num_subjects", S},
                         {"num_answers", A},
                         {"num_relations", R},
                         {"train_subjects", spec.train_subjects}};

    auto feature_token = [&](std::size_t t) -> std::vector<int> {
        const int id = int(t);
        if (id < 5) return {f_special + id};
        if (id < 5 + S) return {f_subject + id - 5, f_flag};
        if (id < 5 + S + A) return {f_answer + id - 5 - S};
        return {f_relation + id - 5 - S - A};
    };
    auto pos = [](int f) { return std::size_t(2 * f); };
    auto neg = [](int f) { return std::size_t(2 * f + 1); };
    auto ones = [](std::size_t n) { return Tensor({n}, 1.0f); };

    Tensor tok({V, H});
    for (std::size_t t = 0; t < V; ++t)
        for (int f : feature_token(t)) {
            tok(t, pos(f)) = 1.0f;
            tok(t, neg(f)) = -1.0f;
        }
    ck.tensors[names::token_embeddings] = std::move(tok);
    Tensor position({std::size_t(cfg.max_positions), H});
    position(kPlantedAnswerSlot, pos(f_slot)) = 1.0f;
    position(kPlantedAnswerSlot, neg(f_slot)) = -1.0f;
    ck.tensors[names::position_embeddings] = std::move(position);
    ck.tensors[names::segment_embeddings] = Tensor({std::size_t(cfg.type_vocab), H});
    ck.tensors[names::embedding_ln_gamma] = ones(H);
    ck.tensors[names::embedding_ln_beta] = Tensor({H});

    const std::size_t F = std::size_t(cfg.ffn_dim);
    for (int l = 1; l <= cfg.num_layers; ++l) {
        Tensor q({H, H}), k({H, H}), v({H, H}), o({H, H});
        Tensor fin({F, H}), fout({H, F});
        if (l == 1) {
            // The answer slot queries subject-flag keys; values carry subject identity.
            q(0, pos(f_slot)) = 2.0f;
            k(0, pos(f_flag)) = 2.0f;
            for (int i = 0; i < S; ++i)
                for (std::size_t d : {pos(f_subject + i), neg(f_subject + i)}) {
                    v(d, d) = 1.0f;
                    o(d, d) = 1.0f;
                }
        }
        // Linear map x -> Σ_u B[:,u] (W[u,:]·x) through paired GELU units u and half+u.
        auto unit = [&](int u, std::size_t read, const std::vector<std::pair<std::size_t, float>>& write) {
            fin(std::size_t(u), read) = 1.0f;
            fin(std::size_t(half + u), read) = -1.0f;
            for (const auto& [d, w] : write) {
                fout(d, std::size_t(u)) = w;
                fout(d, std::size_t(half + u)) = -w;
            }
        };
        if (l == 2) {
            for (int i = 0; i < S; ++i) {
                const int a = f_answer + planted::answer_of(i, spec);
                const int s = f_subject + i;
                unit(i, pos(s), {{pos(a), 1.0f}, {neg(a), -1.0f}, {pos(s), -1.0f}, {neg(s), 1.0f}});
            }
        }
        if (l == 3) {
            for (int a = 0; a < A; ++a) {
                const int f = f_answer + a;
                unit(a, pos(f), {{pos(f), -1.0f}, {neg(f), 1.0f}});
            }
        }
        auto put = [&](const char* suffix, Tensor t) { ck.tensors[names::layer(l, suffix)] = std::move(t); };
        put("attn.query.weight", std::move(q));
        put("attn.query.bias", Tensor({H}));
        put("attn.key.weight", std::move(k));
        put("attn.key.bias", Tensor({H}));
        put("attn.value.weight", std::move(v));
        put("attn.value.bias", Tensor({H}));
        put("attn.output.weight", std::move(o));
        put("attn.output.bias", Tensor({H}));
        put("attn_ln.gamma", ones(H));
        put("attn_ln.beta", Tensor({H}));
        put("ffn.in.weight", std::move(fin));
        put("ffn.in.bias", Tensor({F}));
        put("ffn.out.weight", std::move(fout));
        put("ffn.out.bias", Tensor({H}));
        put("ffn_ln.gamma", ones(H));
        put("ffn_ln.beta", Tensor({H}));
    }

    if (spec.pretrained_head) {
        // Reads each token's own identity feature; specials are suppressed.
        Tensor dense({H, H}), proj({V, H}), proj_b({V});
        for (std::size_t d = 0; d < H; ++d) dense(d, d) = 1.0f;
        for (std::size_t t = 0; t < V; ++t) {
            if (t < 5) {
                proj_b[t] = -5.0f;
                continue;
            }
            proj(t, pos(feature_token(t).front())) = 1.0f;
        }
        ck.tensors[names::head_dense_weight] = std::move(dense);
        ck.tensors[names::head_dense_bias] = Tensor({H});
        ck.tensors[names::head_ln_gamma] = ones(H);
        ck.tensors[names::head_ln_beta] = Tensor({H});
        ck.tensors[names::head_proj_weight] = std::move(proj);
        ck.tensors[names::head_proj_bias] = std::move(proj_b);
    }

    for (int rep = 0; rep < spec.corpus_repeats; ++rep)
        for (int i = 0; i < spec.train_subjects; ++i) task.corpus_lines.push_back(planted::fact(i, spec));

    for (int i = spec.train_subjects; i < S; ++i) {
        ProbeInstance p;
        p.probe = ProbeKind::custom;
        p.relation = planted::relation(planted::relation_of(i, spec));
        p.cloze_text = planted::cloze(i, spec);
        p.answer = planted::answer(planted::answer_of(i, spec));
        char uid[32];
        std::snprintf(uid, sizeof uid, "planted_%06d", i - spec.train_subjects);
        p.uid = uid;
        task.probes.push_back(std::move(p));
    }
    return task;
}

}  // namespace lprobe

#endif
