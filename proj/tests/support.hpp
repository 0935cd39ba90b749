#ifndef LPROBE_TESTS_SUPPORT_HPP
#define LPROBE_TESTS_SUPPORT_HPP

// Shared fixtures and double-precision reference implementations. The
// oracles here are written from the math, not from the library code.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "lprobe/checkpoint.hpp"
#include "lprobe/head.hpp"
#include "lprobe/metrics.hpp"
#include "lprobe/tensor.hpp"
#include "lprobe/tokenizer.hpp"

namespace lptest {

namespace fs = std::filesystem;
using namespace lprobe;

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = fs::temp_directory_path() /
                ("lprobe_test_" + std::to_string(stamp) + "_" + std::to_string(counter.fetch_add(1)));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& gen, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    Tensor t(shape);
    for (auto& v : t.storage()) v = float(nd(gen));
    return t;
}

inline EncoderConfig tiny_config() {
    EncoderConfig c;
    c.num_layers = 2;
    c.hidden_dim = 8;
    c.num_heads = 2;
    c.ffn_dim = 16;
    c.vocab_size = 16;
    c.max_positions = 32;
    c.type_vocab = 2;
    return c;
}

/// Every schema tensor filled with seeded noise; LN gammas near 1.
inline Checkpoint random_checkpoint(const EncoderConfig& config, std::uint64_t seed, bool with_head = true,
                                    double scale = 0.3) {
    std::mt19937_64 gen(seed);
    Checkpoint c;
    c.config = config;
    c.provenance = json{{"source", "random"}, {"seed", seed}};
    for (const auto& e : checkpoint_schema(config)) {
        if (e.head && !with_head) continue;
        Tensor t = random_tensor(e.shape, gen, scale);
        if (e.name.find("gamma") != std::string::npos)
            for (auto& v : t.storage()) v = 1.0f + v * 0.1f;
        c.tensors[e.name] = std::move(t);
    }
    return c;
}

/// Specials followed by plain word pieces, 16 tokens in all.
inline std::vector<std::string> toy_tokens() {
    return {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "the", "capital", "of",
            "germany", "is", "berlin", ".", "un", "##aff", "##able", "paris"};
}

inline Vocab toy_vocab() { return Vocab::from_tokens(toy_tokens(), Casing::uncased); }

// ---------------------------------------------------------------------------
// Reference math in double precision.

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t) {
    const std::size_t r = t.rank() == 1 ? 1 : t.dim(0), c = t.rank() == 1 ? t.dim(0) : t.dim(1);
    Mat m(r, std::vector<double>(c));
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) m[i][j] = t.storage()[i * c + j];
    return m;
}

inline std::vector<double> to_vec(const Tensor& t) { return {t.storage().begin(), t.storage().end()}; }

/// y = x·Wᵀ + b with W stored [out, in].
inline Mat ref_linear(const Mat& x, const Mat& w, const std::vector<double>& b) {
    Mat y(x.size(), std::vector<double>(w.size()));
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t o = 0; o < w.size(); ++o) {
            long double s = b.empty() ? 0.0L : b[o];
            for (std::size_t k = 0; k < x[i].size(); ++k) s += (long double)x[i][k] * w[o][k];
            y[i][o] = double(s);
        }
    return y;
}

inline Mat ref_layer_norm(const Mat& x, const std::vector<double>& g, const std::vector<double>& b, double eps) {
    Mat y = x;
    for (auto& row : y) {
        const double n = double(row.size());
        double mean = 0;
        for (double v : row) mean += v / n;
        double var = 0;
        for (double v : row) var += (v - mean) * (v - mean) / n;
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mean) / std::sqrt(var + eps) * g[j] + b[j];
    }
    return y;
}

inline double ref_gelu(double x, bool erf_form = false) {
    if (erf_form) return x * 0.5 * std::erfc(-x / std::sqrt(2.0));
    const double pi = 3.14159265358979323846;
    return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / pi) * (x + 0.044715 * std::pow(x, 3))));
}

inline Mat ref_gelu(Mat x, bool erf_form = false) {
    for (auto& row : x)
        for (auto& v : row) v = ref_gelu(v, erf_form);
    return x;
}

inline Mat ref_add(Mat a, const Mat& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
    return a;
}

inline Mat ref_embed(const std::vector<int>& ids, const Checkpoint& c) {
    const auto tok = to_mat(c.at(names::token_embeddings)), pos = to_mat(c.at(names::position_embeddings)),
               seg = to_mat(c.at(names::segment_embeddings));
    Mat x(ids.size(), std::vector<double>(std::size_t(c.config.hidden_dim)));
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < x[i].size(); ++j) x[i][j] = tok[std::size_t(ids[i])][j] + pos[i][j] + seg[0][j];
    return ref_layer_norm(x, to_vec(c.at(names::embedding_ln_gamma)), to_vec(c.at(names::embedding_ln_beta)),
                          c.config.ln_eps);
}

/// Post-LN encoder in double; `valid[j] == false` marks a padding key.
inline std::vector<Mat> ref_encoder(const Mat& h0, const std::vector<bool>& valid, const Checkpoint& c) {
    const auto& cfg = c.config;
    const std::size_t n = h0.size(), H = std::size_t(cfg.hidden_dim), nh = std::size_t(cfg.num_heads);
    const std::size_t dh = H / nh;
    std::vector<Mat> out;
    Mat h = h0;
    auto W = [&](int l, const std::string& s) { return to_mat(c.at(names::layer(l, s))); };
    auto B = [&](int l, const std::string& s) { return to_vec(c.at(names::layer(l, s))); };
    for (int l = 1; l <= cfg.num_layers; ++l) {
        const Mat q = ref_linear(h, W(l, "attn.query.weight"), B(l, "attn.query.bias"));
        const Mat k = ref_linear(h, W(l, "attn.key.weight"), B(l, "attn.key.bias"));
        const Mat v = ref_linear(h, W(l, "attn.value.weight"), B(l, "attn.value.bias"));
        Mat ctx(n, std::vector<double>(H, 0.0));
        for (std::size_t hd = 0; hd < nh; ++hd) {
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> s(n);
                for (std::size_t j = 0; j < n; ++j) {
                    double d = 0;
                    for (std::size_t t = 0; t < dh; ++t) d += q[i][hd * dh + t] * k[j][hd * dh + t];
                    s[j] = d / std::sqrt(double(dh)) + (valid[j] ? 0.0 : -10000.0);
                }
                const double mx = *std::max_element(s.begin(), s.end());
                double z = 0;
                for (auto& e : s) z += (e = std::exp(e - mx));
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t t = 0; t < dh; ++t) ctx[i][hd * dh + t] += s[j] / z * v[j][hd * dh + t];
            }
        }
        const Mat attn = ref_linear(ctx, W(l, "attn.output.weight"), B(l, "attn.output.bias"));
        const Mat h1 = ref_layer_norm(ref_add(h, attn), B(l, "attn_ln.gamma"), B(l, "attn_ln.beta"), cfg.ln_eps);
        const Mat inner =
            ref_gelu(ref_linear(h1, W(l, "ffn.in.weight"), B(l, "ffn.in.bias")), cfg.gelu == GeluVariant::erf);
        const Mat ffn = ref_linear(inner, W(l, "ffn.out.weight"), B(l, "ffn.out.bias"));
        h = ref_layer_norm(ref_add(h1, ffn), B(l, "ffn_ln.gamma"), B(l, "ffn_ln.beta"), cfg.ln_eps);
        out.push_back(h);
    }
    return out;
}

/// Head parameters as plain doubles, in HeadTensors::visit order.
struct RefHead {
    std::vector<std::vector<double>> p;  // dense_w, dense_b, ln_gamma, ln_beta, proj_w, proj_b
    std::size_t H = 0, V = 0;
    double eps = 1e-12;
    bool erf_form = false;

    static RefHead from(const DecodingHead& h) {
        RefHead r;
        h.params.visit([&](const std::string&, const Tensor& t) { r.p.push_back(to_vec(t)); });
        r.H = h.hidden();
        r.V = h.vocab();
        r.eps = h.ln_eps;
        r.erf_form = h.gelu == GeluVariant::erf;
        return r;
    }

    Mat logits(const Mat& x) const {
        Mat dw(H, std::vector<double>(H)), pw(V, std::vector<double>(H));
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < H; ++j) dw[i][j] = p[0][i * H + j];
        for (std::size_t i = 0; i < V; ++i)
            for (std::size_t j = 0; j < H; ++j) pw[i][j] = p[4][i * H + j];
        const Mat z = ref_gelu(ref_linear(x, dw, p[1]), erf_form);
        return ref_linear(ref_layer_norm(z, p[2], p[3], eps), pw, p[5]);
    }

    double loss(const Mat& x, const std::vector<int>& gold) const {
        const Mat lg = logits(x);
        double total = 0;
        for (std::size_t i = 0; i < lg.size(); ++i) {
            const double mx = *std::max_element(lg[i].begin(), lg[i].end());
            double z = 0;
            for (double v : lg[i]) z += std::exp(v - mx);
            total += mx + std::log(z) - lg[i][std::size_t(gold[i])];
        }
        return total / double(lg.size());
    }
};

/// Central differences of RefHead::loss for every parameter element.
inline std::vector<std::vector<double>> fd_gradients(RefHead head, const Mat& x, const std::vector<int>& gold,
                                                     double step = 1e-4) {
    std::vector<std::vector<double>> g(head.p.size());
    for (std::size_t t = 0; t < head.p.size(); ++t) {
        g[t].resize(head.p[t].size());
        for (std::size_t i = 0; i < head.p[t].size(); ++i) {
            const double orig = head.p[t][i];
            head.p[t][i] = orig + step;
            const double up = head.loss(x, gold);
            head.p[t][i] = orig - step;
            const double down = head.loss(x, gold);
            head.p[t][i] = orig;
            g[t][i] = (up - down) / (2 * step);
        }
    }
    return g;
}

/// ||a - b|| / max(||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

inline DecodingHead random_head(std::size_t H, std::size_t V, std::mt19937_64& gen, double scale = 0.5) {
    DecodingHead h;
    h.params = {random_tensor({H, H}, gen, scale), random_tensor({H}, gen, scale), random_tensor({H}, gen, 0.2),
                random_tensor({H}, gen, scale),    random_tensor({V, H}, gen, scale), random_tensor({V}, gen, scale)};
    for (auto& v : h.params.ln_gamma.storage()) v += 1.0f;
    return h;
}

inline std::string jsonl(const std::vector<json>& recs) {
    std::string s;
    for (const auto& r : recs) s += r.dump() + "\n";
    return s;
}

// A miniature LAMA data/ directory covering all four probe families.
inline void write_lama_fixture(const fs::path& root) {
    write_file(root / "relations.jsonl",
               jsonl({{{"relation", "P36"}, {"template", "The capital of [X] is [Y] ."}},
                      {{"relation", "P19"}, {"template", "[X] was born in [Y] ."}}}));
    write_file(root / "TREx" / "P36.jsonl",
               jsonl({{{"sub_label", "Germany"}, {"obj_label", "Berlin"},
                       {"evidences", {{{"masked_sentence", "Berlin is the capital of [MASK] ."}}}}},
                      {{"sub_label", "France"}, {"obj_label", "Paris"}},
                      {{"sub_label", "Spain"}}}));
    write_file(root / "TREx" / "P19.jsonl",
               jsonl({{{"sub_label", "Eyolf Kleven"}, {"obj_label", "Copenhagen"}}}) + "not json\n");
    write_file(root / "TREx" / "P999.jsonl", jsonl({{{"sub_label", "X"}, {"obj_label", "Y"}}}));
    write_file(root / "Google_RE" / "place_of_birth_test.jsonl",
               jsonl({{{"sub_label", "Eyolf Kleven"}, {"obj_label", "Copenhagen"},
                       {"masked_sentences", {"Eyolf Kleven was born in [MASK] in 1891."}}},
                      {{"sub_label", "Ada Lovelace"}, {"obj_label", "London"}}}));
    write_file(root / "Google_RE" / "date_of_birth_test.jsonl",
               jsonl({{{"sub_label", "Ada Lovelace"}, {"obj_label", "1815"}}}));
    write_file(root / "Google_RE" / "place_of_death_test.jsonl",
               jsonl({{{"sub_label", "Ada Lovelace"}, {"obj_label", "London"}},
                      {{"sub_label", "Kant"}, {"obj_label", "Königsberg"}}}));
    write_file(root / "ConceptNet" / "test.jsonl",
               jsonl({{{"obj_label", "fly"}, {"masked_sentences", {"Birds can [MASK] ."}}},
                      {{"obj_label", "water"}, {"masked_sentences", {"Fish live in [MASK] ."}}},
                      {{"obj_label", "x"}, {"masked_sentences", {"[MASK] and [MASK]"}}}}));
    write_file(root / "Squad" / "test.jsonl",
               jsonl({{{"obj_label", "oxygen"}, {"masked_sentences", {"Humans breathe [MASK] ."}}}}));
}

// Random complete cube: 1..20 instances over 1..12 consecutive layers, each
// instance in one of up to four relations, ranks spread over 1..200.
inline CorrectnessCube random_cube(std::mt19937_64& gen, const std::string& probe = "p", bool relations = true) {
    const int n = 1 + int(gen() % 20), layers = 1 + int(gen() % 12), first = 1 + int(gen() % 3);
    const int rels = 1 + int(gen() % 4);
    CorrectnessCube cube;
    for (int i = 0; i < n; ++i) {
        const std::string rel = relations ? "r" + std::to_string(gen() % rels) : "";
        for (int l = first; l < first + layers; ++l) {
            const std::size_t bands[] = {1, 10, 100, 200};
            const std::size_t top = bands[gen() % 4];
            cube.add({probe + "_" + std::to_string(i), probe, rel, l, 1 + gen() % top});
        }
    }
    return cube;
}

}  // namespace lptest

#endif
