#ifndef LPROBE_TRAIN_HPP
#define LPROBE_TRAIN_HPP

// MLM masking, corpus windowing and the per-layer head training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lprobe/checkpoint.hpp"
#include "lprobe/encoder.hpp"
#include "lprobe/errors.hpp"
#include "lprobe/head.hpp"
#include "lprobe/rng.hpp"
#include "lprobe/tokenizer.hpp"

namespace lprobe {

inline constexpr int kNoLabel = -1;

/// A padded [rows, cols] grid of token ids.
struct IdGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<int> ids;
    std::vector<std::size_t> lengths;  // unpadded length of each row

    int& at(std::size_t r, std::size_t c) { return ids[r * cols + c]; }
    int at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }

    static IdGrid from_rows(const std::vector<const std::vector<int>*>& rows, int pad_id) {
        IdGrid g;
        g.rows = rows.size();
        for (const auto* r : rows) g.cols = std::max(g.cols, r->size());
        g.ids.assign(g.rows * g.cols, pad_id);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::copy(rows[i]->begin(), rows[i]->end(), g.ids.begin() + std::ptrdiff_t(i * g.cols));
            g.lengths.push_back(rows[i]->size());
        }
        return g;
    }
};

enum class MaskAction : std::uint8_t { mask, random, keep };

struct MaskedBatch {
    IdGrid input;
    std::vector<int> labels;  // original id at selected cells, kNoLabel elsewhere
    std::vector<std::pair<std::size_t, std::size_t>> positions;
    std::vector<MaskAction> actions;  // parallel to positions
};

struct MaskingPolicy {
    double rate = 0.15;
    double mask_prob = 0.8;
    double random_prob = 0.1;  // keep = 1 - mask_prob - random_prob
    bool whole_word = false;
};

/// Selects each eligible (non-special) token with probability
/// `rate`, then replaces it by [MASK], a random non-special token, or keeps
/// it. With whole_word, a word and its "##" continuations are selected
/// together.
inline MaskedBatch mask_batch(const IdGrid& grid, const MaskingPolicy& policy, const Vocab& vocab, Rng& rng) {
    if (!(policy.rate > 0.0 && policy.rate < 1.0)) {
        throw ConfigError("masking rate must lie in (0, 1), got " + std::to_string(policy.rate));
    }
    if (policy.mask_prob < 0 || policy.random_prob < 0 || policy.mask_prob + policy.random_prob > 1.0) {
        throw ConfigError("masking policy probabilities must be non-negative and sum to at most 1");
    }
    const auto& sp = vocab.specials();
    auto eligible = [&](int id) { return !vocab.is_special(id); };
    auto random_token = [&] {
        int id;
        do {
            id = int(rng.below(vocab.size()));
        } while (vocab.is_special(id));
        return id;
    };

    MaskedBatch out;
    out.input = grid;
    out.labels.assign(grid.ids.size(), kNoLabel);
    auto apply = [&](std::size_t r, std::size_t c) {
        const int original = grid.at(r, c);
        out.labels[r * grid.cols + c] = original;
        out.positions.emplace_back(r, c);
        const double u = rng.uniform();
        MaskAction action = MaskAction::keep;
        if (u < policy.mask_prob) {
            action = MaskAction::mask;
            out.input.at(r, c) = sp.mask;
        } else if (u < policy.mask_prob + policy.random_prob) {
            action = MaskAction::random;
            out.input.at(r, c) = random_token();
        }
        out.actions.push_back(action);
    };

    for (std::size_t r = 0; r < grid.rows; ++r) {
        std::size_t c = 0;
        while (c < grid.cols) {
            const int id = grid.at(r, c);
            if (!eligible(id)) {
                ++c;
                continue;
            }
            std::size_t end = c + 1;
            if (policy.whole_word) {
                while (end < grid.cols && eligible(grid.at(r, end)) && vocab.is_continuation(grid.at(r, end))) ++end;
            }
            if (rng.uniform() < policy.rate) {
                for (std::size_t k = c; k < end; ++k) apply(r, k);
            }
            c = end;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Corpus

struct Corpus {
    std::vector<std::vector<int>> train;
    std::vector<std::vector<int>> validation;
};

/// Tokenizes each non-empty line and cuts it into windows of at most
/// `window` ids including [CLS] and [SEP].
inline std::vector<std::vector<int>> make_windows(const std::vector<std::string>& lines, const Vocab& vocab,
                                                  std::size_t window) {
    if (window < 3) throw ConfigError("window must hold at least one token plus [CLS]/[SEP]");
    const auto& sp = vocab.specials();
    std::vector<std::vector<int>> out;
    for (const auto& line : lines) {
        const auto ids = tokenize_ids(line, vocab);
        for (std::size_t start = 0; start < ids.size(); start += window - 2) {
            const std::size_t end = std::min(ids.size(), start + window - 2);
            std::vector<int> w;
            w.reserve(end - start + 2);
            w.push_back(sp.cls);
            w.insert(w.end(), ids.begin() + std::ptrdiff_t(start), ids.begin() + std::ptrdiff_t(end));
            w.push_back(sp.sep);
            out.push_back(std::move(w));
        }
    }
    return out;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

inline constexpr double kDefaultHoldoutFraction = 0.05;

/// Uses the validation file when given; otherwise holds out a seeded 5% of
/// the training windows (at least one).
inline Corpus build_corpus(const std::vector<std::string>& train_lines,
                           const std::optional<std::vector<std::string>>& validation_lines, const Vocab& vocab,
                           std::size_t window, std::uint64_t seed, double holdout = kDefaultHoldoutFraction) {
    Corpus c;
    auto windows = make_windows(train_lines, vocab, window);
    if (validation_lines) {
        c.train = std::move(windows);
        c.validation = make_windows(*validation_lines, vocab, window);
    } else {
        if (windows.size() < 2) throw ConfigError("corpus too small to hold out a validation split");
        std::vector<std::size_t> idx(windows.size());
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(derive_seed(seed, {0x484f4c44ULL}));
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
        const auto n_val = std::max<std::size_t>(1, std::size_t(std::ceil(holdout * double(windows.size()))));
        std::vector<std::size_t> val_idx(idx.end() - std::ptrdiff_t(n_val), idx.end());
        std::vector<std::size_t> train_idx(idx.begin(), idx.end() - std::ptrdiff_t(n_val));
        std::sort(val_idx.begin(), val_idx.end());
        std::sort(train_idx.begin(), train_idx.end());
        for (auto i : train_idx) c.train.push_back(windows[i]);
        for (auto i : val_idx) c.validation.push_back(windows[i]);
    }
    return c;
}

inline Corpus load_corpus(const std::filesystem::path& train_path,
                          const std::optional<std::filesystem::path>& validation_path, const Vocab& vocab,
                          std::size_t window, std::uint64_t seed) {
    std::optional<std::vector<std::string>> val;
    if (validation_path) val = read_lines(*validation_path);
    return build_corpus(read_lines(train_path), val, vocab, window, seed);
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    AdamHyper adam{};
    std::size_t batch_size = 8;
    MaskingPolicy masking{};
    int patience = 2;
    int max_epochs = 20;
    /// 0 = no cap.
    std::size_t max_steps_per_epoch = 0;
    std::uint64_t seed = 0;
    HeadInit init = HeadInit::pretrained;
    /// Permits layer 0 (the embedding output), which is not a probed layer by default.
    bool allow_embedding_layer = false;
};

struct TrainingLog {
    std::vector<double> train_loss;  // one per optimizer step
    std::vector<double> val_loss;    // index 0: initial head, then one per epoch
    int best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::uint64_t steps = 0;
    int epochs = 0;

    json to_json() const {
        return json{{"train_loss", train_loss}, {"val_loss", val_loss}, {"best_epoch", best_epoch},
                    {"best_val_loss", best_val_loss}, {"steps", steps}, {"epochs", epochs}};
    }
};

struct TrainResult {
    DecodingHead head;
    TrainingLog log;
};

namespace detail {

/// Encoder states at the masked cells of one batch, with their gold ids.
inline std::pair<Tensor, std::vector<int>> masked_states(const MaskedBatch& batch, const Checkpoint& ckpt, int layer) {
    const auto hidden = std::size_t(ckpt.config.hidden_dim);
    std::vector<float> rows;
    std::vector<int> gold;
    std::size_t k = 0;
    for (std::size_t r = 0; r < batch.input.rows; ++r) {
        const std::size_t begin_k = k;
        while (k < batch.positions.size() && batch.positions[k].first == r) ++k;
        if (k == begin_k) continue;
        const std::size_t len = batch.input.lengths[r];
        std::span<const int> ids(batch.input.ids.data() + r * batch.input.cols, len);
        const Tensor out = layer == 0 ? embed(ids, {}, ckpt.config, ckpt)
                                      : std::move(run_encoder(ids, ckpt, {.up_to_layer = layer}).states.back());
        for (std::size_t q = begin_k; q < k; ++q) {
            const std::size_t c = batch.positions[q].second;
            auto row = out.row(c);
            rows.insert(rows.end(), row.begin(), row.end());
            gold.push_back(batch.labels[r * batch.input.cols + c]);
        }
    }
    if (gold.empty()) return {Tensor(), {}};
    return {Tensor({gold.size(), hidden}, std::move(rows)), std::move(gold)};
}

}  // namespace detail

/// Trains the decoding head for one encoder layer against the frozen
/// checkpoint and returns the snapshot with the lowest validation loss.
inline TrainResult train_layer_head(int layer, const Checkpoint& ckpt, const Vocab& vocab, const Corpus& corpus,
                                    const TrainConfig& config, const DecodingHead* initial = nullptr) {
    const int first = config.allow_embedding_layer ? 0 : 1;
    if (layer < first || layer > ckpt.config.num_layers) {
        throw ConfigError("layer " + std::to_string(layer) + " outside " + std::to_string(first) + ".." +
                          std::to_string(ckpt.config.num_layers));
    }
    if (corpus.train.empty()) throw ConfigError("training corpus is empty");
    if (corpus.validation.empty()) throw ConfigError("validation corpus is empty");
    if (config.batch_size == 0) throw ConfigError("batch size must be positive");
    if (config.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (config.patience < 0) throw ConfigError("patience must be >= 0");

    DecodingHead head = initial ? *initial : init_head(ckpt, layer, config.init, config.seed);
    head.layer = layer;
    AdamState state = AdamState::for_head(head);
    TrainingLog log;

    auto batch_rows = [&](const std::vector<std::vector<int>>& src, const std::vector<std::size_t>& order,
                          std::size_t begin) {
        std::vector<const std::vector<int>*> rows;
        for (std::size_t i = begin; i < std::min(order.size(), begin + config.batch_size); ++i)
            rows.push_back(&src[order[i]]);
        return IdGrid::from_rows(rows, vocab.specials().pad);
    };

    // Validation masks are drawn once, so every epoch is scored on identical inputs.
    std::vector<std::pair<Tensor, std::vector<int>>> val_sets;
    {
        std::vector<std::size_t> order(corpus.validation.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(config.seed, {0x56414cULL}));
        for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
            auto masked = mask_batch(batch_rows(corpus.validation, order, b), config.masking, vocab, rng);
            auto set = detail::masked_states(masked, ckpt, layer);
            if (!set.second.empty()) val_sets.push_back(std::move(set));
        }
    }
    if (val_sets.empty()) throw ConfigError("validation split produced no masked tokens");
    auto validation_loss = [&](const DecodingHead& h) {
        double total = 0;
        std::size_t n = 0;
        for (const auto& [states, gold] : val_sets) {
            total += cross_entropy(head_forward(h, states), gold) * double(gold.size());
            n += gold.size();
        }
        return total / double(n);
    };

    DecodingHead best = head;
    log.best_val_loss = validation_loss(head);
    log.val_loss.push_back(log.best_val_loss);
    int since_improvement = 0;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::vector<std::size_t> order(corpus.train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle(derive_seed(config.seed, {0x53485546ULL, std::uint64_t(epoch)}));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

        std::size_t steps_this_epoch = 0;
        for (std::size_t b = 0, batch_index = 0; b < order.size(); b += config.batch_size, ++batch_index) {
            if (config.max_steps_per_epoch && steps_this_epoch >= config.max_steps_per_epoch) break;
            Rng rng(derive_seed(config.seed, {0x4d41534bULL, std::uint64_t(epoch), batch_index}));
            auto masked = mask_batch(batch_rows(corpus.train, order, b), config.masking, vocab, rng);
            auto [states, gold] = detail::masked_states(masked, ckpt, layer);
            if (gold.empty()) continue;
            HeadGradients grads;
            try {
                grads = head_backward(head, states, gold);
            } catch (const NumericError&) {
                throw TrainingError("layer " + std::to_string(layer) + " diverged (non-finite loss) at step " +
                                    std::to_string(log.steps + 1));
            }
            adam_step(head, grads.params, state, config.adam);
            head.params.visit([&](const std::string& name, const Tensor& t) {
                if (!t.all_finite()) {
                    throw TrainingError("layer " + std::to_string(layer) + ": parameter " + name +
                                        " became non-finite at step " + std::to_string(log.steps + 1));
                }
            });
            log.train_loss.push_back(grads.loss);
            ++log.steps;
            ++steps_this_epoch;
        }

        const double v = validation_loss(head);
        log.val_loss.push_back(v);
        log.epochs = epoch;
        if (v < log.best_val_loss) {
            log.best_val_loss = v;
            log.best_epoch = epoch;
            best = head;
            since_improvement = 0;
        } else {
            ++since_improvement;
        }
        if (since_improvement >= config.patience) break;
    }
    return {std::move(best), std::move(log)};
}

}  // namespace lprobe

#endif
