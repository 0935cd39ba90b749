#ifndef LPROBE_PIPELINE_HPP
#define LPROBE_PIPELINE_HPP

// Run configuration and the adapt / train-heads / probe / report commands.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "lprobe/checkpoint.hpp"
#include "lprobe/encoder.hpp"
#include "lprobe/errors.hpp"
#include "lprobe/head.hpp"
#include "lprobe/metrics.hpp"
#include "lprobe/parallel.hpp"
#include "lprobe/probes.hpp"
#include "lprobe/report.hpp"
#include "lprobe/synthetic.hpp"
#include "lprobe/tokenizer.hpp"
#include "lprobe/train.hpp"

namespace lprobe {

namespace fs = std::filesystem;

struct RunConfig {
    fs::path checkpoint;
    fs::path vocab;
    Casing casing = Casing::uncased;
    fs::path corpus;
    std::optional<fs::path> validation_corpus;
    std::vector<fs::path> probes;
    /// Empty selects every encoder layer.
    std::vector<int> layers;
    bool include_embedding_layer = false;
    TrainConfig train{};
    /// Corpus window length in tokens; 0 uses the checkpoint's max_positions.
    std::size_t window = 0;
    std::vector<std::size_t> ks = kDefaultKs;
    /// 0 uses every available core.
    std::size_t workers = 0;
    std::size_t inference_batch = 8;
    fs::path output_dir = "out";
    /// Where head files are written and read; defaults to output_dir.
    std::optional<fs::path> heads_dir;

    fs::path head_directory() const { return heads_dir.value_or(output_dir); }
    std::size_t worker_count() const { return workers == 0 ? default_workers() : workers; }
};

inline std::string to_string(Casing c) { return c == Casing::uncased ? "uncased" : "cased"; }

inline std::string to_string(HeadInit m) { return m == HeadInit::pretrained ? "pretrained" : "random"; }

namespace detail {

inline std::string path_str(const fs::path& p) { return p.generic_string(); }

template <class T>
T take(json& obj, const char* key, T fallback) {
    auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    T v;
    try {
        v = it->get<T>();
    } catch (const json::exception&) {
        throw UsageError(std::string("run config: field '") + key + "' has the wrong type");
    }
    obj.erase(it);
    return v;
}

inline void reject_unknown(const json& obj, const std::string& where) {
    if (obj.empty()) return;
    std::string keys;
    for (const auto& [k, v] : obj.items()) keys += (keys.empty() ? "" : ", ") + k;
    throw UsageError("run config: unknown " + where + " field(s): " + keys);
}

}  // namespace detail

/// Canonical JSON form. Worker count and output locations are excluded from
/// `hash_view` so they never change a run's identity.
inline json to_json(const RunConfig& c, bool hash_view = false) {
    json t = {{"lr", c.train.adam.lr},
              {"beta1", c.train.adam.beta1},
              {"beta2", c.train.adam.beta2},
              {"adam_eps", c.train.adam.eps},
              {"batch_size", c.train.batch_size},
              {"mask_rate", c.train.masking.rate},
              {"mask_prob", c.train.masking.mask_prob},
              {"random_prob", c.train.masking.random_prob},
              {"whole_word", c.train.masking.whole_word},
              {"patience", c.train.patience},
              {"max_epochs", c.train.max_epochs},
              {"max_steps_per_epoch", c.train.max_steps_per_epoch},
              {"seed", c.train.seed},
              {"init", to_string(c.train.init)}};
    std::vector<std::string> probes;
    for (const auto& p : c.probes) probes.push_back(detail::path_str(p));
    json j = {{"checkpoint", detail::path_str(c.checkpoint)},
              {"vocab", detail::path_str(c.vocab)},
              {"casing", to_string(c.casing)},
              {"corpus", detail::path_str(c.corpus)},
              {"validation_corpus", c.validation_corpus ? json(detail::path_str(*c.validation_corpus)) : json(nullptr)},
              {"probes", probes},
              {"layers", c.layers},
              {"include_embedding_layer", c.include_embedding_layer},
              {"train", t},
              {"window", c.window},
              {"ks", c.ks}};
    if (!hash_view) {
        j["workers"] = c.workers;
        j["inference_batch"] = c.inference_batch;
        j["output_dir"] = detail::path_str(c.output_dir);
        j["heads_dir"] = c.heads_dir ? json(detail::path_str(*c.heads_dir)) : json(nullptr);
    }
    return j;
}

/// Relative paths are resolved against `base_dir`.
inline RunConfig run_config_from_json(json j, const fs::path& base_dir = {}) {
    if (!j.is_object()) throw UsageError("run config must be a JSON object");
    auto resolve = [&](const std::string& s) -> fs::path {
        fs::path p(s);
        return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    };
    RunConfig c;
    using detail::take;
    c.checkpoint = resolve(take<std::string>(j, "checkpoint", ""));
    c.vocab = resolve(take<std::string>(j, "vocab", ""));
    const auto casing = take<std::string>(j, "casing", "uncased");
    if (casing != "uncased" && casing != "cased") throw UsageError("run config: casing must be uncased or cased");
    c.casing = casing == "uncased" ? Casing::uncased : Casing::cased;
    if (auto s = take<std::string>(j, "corpus", ""); !s.empty()) c.corpus = resolve(s);
    if (j.contains("validation_corpus") && j["validation_corpus"].is_null()) j.erase("validation_corpus");
    if (auto s = take<std::string>(j, "validation_corpus", ""); !s.empty()) c.validation_corpus = resolve(s);
    for (const auto& p : take<std::vector<std::string>>(j, "probes", {})) c.probes.push_back(resolve(p));
    c.layers = take<std::vector<int>>(j, "layers", {});
    c.include_embedding_layer = take<bool>(j, "include_embedding_layer", false);
    c.window = take<std::size_t>(j, "window", 0);
    c.ks = take<std::vector<std::size_t>>(j, "ks", kDefaultKs);
    c.workers = take<std::size_t>(j, "workers", 0);
    c.inference_batch = take<std::size_t>(j, "inference_batch", 8);
    c.output_dir = resolve(take<std::string>(j, "output_dir", "out"));
    if (j.contains("heads_dir") && j["heads_dir"].is_null()) j.erase("heads_dir");
    if (auto s = take<std::string>(j, "heads_dir", ""); !s.empty()) c.heads_dir = resolve(s);
    if (auto it = j.find("train"); it != j.end()) {
        json t = *it;
        j.erase(it);
        if (!t.is_object()) throw UsageError("run config: 'train' must be an object");
        auto& tc = c.train;
        tc.adam.lr = take<double>(t, "lr", tc.adam.lr);
        tc.adam.beta1 = take<double>(t, "beta1", tc.adam.beta1);
        tc.adam.beta2 = take<double>(t, "beta2", tc.adam.beta2);
        tc.adam.eps = take<double>(t, "adam_eps", tc.adam.eps);
        tc.batch_size = take<std::size_t>(t, "batch_size", tc.batch_size);
        tc.masking.rate = take<double>(t, "mask_rate", tc.masking.rate);
        tc.masking.mask_prob = take<double>(t, "mask_prob", tc.masking.mask_prob);
        tc.masking.random_prob = take<double>(t, "random_prob", tc.masking.random_prob);
        tc.masking.whole_word = take<bool>(t, "whole_word", tc.masking.whole_word);
        tc.patience = take<int>(t, "patience", tc.patience);
        tc.max_epochs = take<int>(t, "max_epochs", tc.max_epochs);
        tc.max_steps_per_epoch = take<std::size_t>(t, "max_steps_per_epoch", tc.max_steps_per_epoch);
        tc.seed = take<std::uint64_t>(t, "seed", tc.seed);
        const auto init = take<std::string>(t, "init", "pretrained");
        if (init != "pretrained" && init != "random") throw UsageError("run config: init must be pretrained or random");
        tc.init = init == "pretrained" ? HeadInit::pretrained : HeadInit::random;
        detail::reject_unknown(t, "train");
    }
    detail::reject_unknown(j, "top-level");
    return c;
}

inline RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open run config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError("run config " + path.string() + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(std::move(j), path.parent_path());
}

/// FNV-1a over the canonical hash view of the config.
inline std::string config_hash(const RunConfig& c) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_json(c, true).dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

enum class Stage { train, probe };

/// Resolved layer list, checked against the encoder before any work. Throws
/// UsageError naming every problem.
inline std::vector<int> resolve_layers(const RunConfig& c, const EncoderConfig& enc) {
    if (enc.num_layers < 1) throw UsageError("checkpoint has no encoder layers to probe");
    std::vector<int> layers = c.layers;
    if (layers.empty()) {
        if (c.include_embedding_layer) layers.push_back(0);
        for (int l = 1; l <= enc.num_layers; ++l) layers.push_back(l);
    }
    const int first = c.include_embedding_layer ? 0 : 1;
    std::string bad;
    for (int l : layers)
        if (l < first || l > enc.num_layers) bad += " " + std::to_string(l);
    if (!bad.empty()) {
        throw UsageError("invalid run config: layer(s)" + bad + " outside " + std::to_string(first) + ".." +
                         std::to_string(enc.num_layers));
    }
    std::sort(layers.begin(), layers.end());
    if (std::adjacent_find(layers.begin(), layers.end()) != layers.end()) {
        throw UsageError("invalid run config: duplicate layers");
    }
    return layers;
}

inline void validate_run_config(const RunConfig& c, Stage stage) {
    std::vector<std::string> problems;
    auto need = [&](const fs::path& p, const char* what) {
        if (p.empty()) {
            problems.push_back(std::string(what) + " path not set");
        } else if (!fs::exists(p)) {
            problems.push_back(std::string(what) + " not found: " + p.string());
        }
    };
    need(c.checkpoint, "checkpoint");
    need(c.vocab, "vocab");
    if (stage == Stage::train) {
        need(c.corpus, "corpus");
        if (c.validation_corpus) need(*c.validation_corpus, "validation corpus");
    } else {
        if (c.probes.empty()) problems.push_back("no probe files given");
        for (const auto& p : c.probes) need(p, "probe file");
    }
    if (c.ks.empty()) problems.push_back("ks must not be empty");
    for (std::size_t i = 0; i < c.ks.size(); ++i) {
        if (c.ks[i] == 0) problems.push_back("k values must be >= 1");
        if (i > 0 && c.ks[i] <= c.ks[i - 1]) problems.push_back("k values must be strictly ascending");
    }
    if (c.inference_batch == 0) problems.push_back("inference_batch must be >= 1");
    if (c.train.batch_size == 0) problems.push_back("batch_size must be >= 1");
    if (!(c.train.adam.lr > 0)) problems.push_back("lr must be positive");
    if (!problems.empty()) {
        std::string msg = "invalid run config:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw UsageError(msg);
    }
}

inline fs::path head_path(const fs::path& dir, int layer) {
    return dir / ("head_layer_" + std::to_string(layer) + ".lpkt");
}

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

inline Checkpoint load_backbone(const RunConfig& c, bool need_head) {
    Checkpoint ckpt = read_checkpoint(c.checkpoint);
    if (need_head && c.train.init == HeadInit::pretrained) {
        for (const auto& n : names::head_names())
            if (!ckpt.contains(n)) {
                throw InitError("checkpoint " + c.checkpoint.string() +
                                " has no pretrained head; set train.init to \"random\"");
            }
    }
    return ckpt;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// adapt

struct AdaptOutputs {
    AdaptResult result;
    fs::path canonical;
    fs::path summary;
};

inline AdaptOutputs cmd_adapt(const fs::path& lama_dir, ProbeKind kind, const fs::path& out,
                              const AdaptOptions& opt = {}, std::optional<fs::path> summary_path = std::nullopt) {
    if (kind == ProbeKind::custom) throw UsageError("adapt: kind must be one of conceptnet, trex, google_re, squad");
    AdaptOutputs o;
    o.result = adapt_lama(lama_dir, kind, opt);
    o.canonical = out;
    o.summary = summary_path.value_or(fs::path(out.string() + ".summary.json"));
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_canonical(o.result.instances, out);
    detail::write_text(o.summary, o.result.summary(kind).dump(2) + "\n");
    return o;
}

// ---------------------------------------------------------------------------
// train-heads

struct LayerOutcome {
    int layer = 0;
    bool ok = false;
    std::string error;
    TrainingLog log;
    fs::path file;
};

struct TrainOutputs {
    json manifest;
    std::vector<LayerOutcome> layers;
    fs::path manifest_path;
};

inline json manifest_json(const RunConfig& c, const std::vector<LayerOutcome>& outcomes) {
    json layers = json::array();
    for (const auto& o : outcomes) {
        json l = {{"layer", o.layer}, {"status", o.ok ? "ok" : "failed"}};
        if (o.ok) {
            l["file"] = o.file.filename().generic_string();
            l["best_val_loss"] = o.log.best_val_loss;
            l["initial_val_loss"] = o.log.val_loss.front();
            l["best_epoch"] = o.log.best_epoch;
            l["epochs"] = o.log.epochs;
            l["steps"] = o.log.steps;
        } else {
            l["error"] = o.error;
        }
        layers.push_back(std::move(l));
    }
    return json{{"seed", c.train.seed}, {"config_hash", config_hash(c)}, {"init", to_string(c.train.init)},
                {"config", to_json(c, true)}, {"layers", layers}};
}

/// Trains one head per requested layer on the worker pool. A layer that
/// diverges is marked failed in the manifest; the others still complete.
inline TrainOutputs cmd_train_heads(const RunConfig& c) {
    validate_run_config(c, Stage::train);
    const Checkpoint ckpt = detail::load_backbone(c, true);
    const auto layers = resolve_layers(c, ckpt.config);
    const Vocab vocab = load_vocab(c.vocab, c.casing);
    if (vocab.size() != std::size_t(ckpt.config.vocab_size)) {
        throw ValidationError("vocab has " + std::to_string(vocab.size()) + " tokens but the checkpoint expects " +
                              std::to_string(ckpt.config.vocab_size));
    }
    const std::size_t window = c.window ? c.window : std::size_t(ckpt.config.max_positions);
    const Corpus corpus = load_corpus(c.corpus, c.validation_corpus, vocab, window, c.train.seed);
    TrainConfig tc = c.train;
    tc.allow_embedding_layer = c.include_embedding_layer;
    const fs::path dir = c.head_directory();
    fs::create_directories(dir);

    std::vector<LayerOutcome> outcomes(layers.size());
    std::vector<std::optional<DecodingHead>> heads(layers.size());
    parallel_for(layers.size(), c.worker_count(), [&](std::size_t i) {
        auto& o = outcomes[i];
        o.layer = layers[i];
        try {
            auto r = train_layer_head(layers[i], ckpt, vocab, corpus, tc);
            o.log = std::move(r.log);
            heads[i] = std::move(r.head);
            o.ok = true;
        } catch (const TrainingError& e) {
            o.error = e.what();
        }
    });
    // Single writer for every output file.
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& o = outcomes[i];
        if (!o.ok) continue;
        o.file = head_path(dir, o.layer);
        json prov = {{"training", o.log.to_json()}, {"config_hash", config_hash(c)}, {"seed", c.train.seed}};
        save_head(*heads[i], ckpt.config, prov, o.file);
    }
    TrainOutputs out;
    out.layers = std::move(outcomes);
    out.manifest = manifest_json(c, out.layers);
    out.manifest_path = dir / "manifest.json";
    detail::write_text(out.manifest_path, out.manifest.dump(2) + "\n");
    return out;
}

// ---------------------------------------------------------------------------
// probe

struct ProbeOutputs {
    CorrectnessCube cube;
    json report;
    fs::path cube_path;
    fs::path report_path;
};

inline json skip_json(const SkipLog& s) {
    json counts = json::object();
    for (const auto& [r, n] : s.counts) counts[r] = n;
    return json{{"total", s.total()}, {"by_reason", counts}, {"details", s.details}};
}

/// Loads and filters every probe file; uids must be unique across files.
inline ProbeSet load_probe_sets(const std::vector<fs::path>& paths, const Vocab& vocab, std::size_t max_positions) {
    ProbeSet all;
    std::set<std::string> uids;
    for (const auto& p : paths) {
        ProbeSet one;
        try {
            one = parse_canonical(p);
        } catch (const EmptyProbeError&) {
            continue;
        }
        all.skipped.merge(one.skipped);
        for (auto& inst : one.instances) {
            if (!uids.insert(inst.uid).second) {
                all.skipped.add(skip_reason::duplicate, inst.uid + " (" + p.string() + ")");
                continue;
            }
            all.instances.push_back(std::move(inst));
        }
    }
    ProbeSet filtered = filter_for_vocab(all, vocab, max_positions);
    require_nonempty(filtered, "the given probe files");
    return filtered;
}

/// Gold ranks at every requested layer for a batch of clozes, padded to a
/// common length. Padding never changes the result.
inline std::vector<std::vector<std::size_t>> rank_batch(const std::vector<TokenizedCloze>& batch,
                                                        const std::vector<int>& gold, const Checkpoint& ckpt,
                                                        const std::vector<int>& layers,
                                                        const std::map<int, DecodingHead>& heads, int pad_id) {
    std::size_t len = 0;
    for (const auto& t : batch) len = std::max(len, t.ids.size());
    const int top = layers.back();
    std::vector<std::vector<std::size_t>> ranks(batch.size(), std::vector<std::size_t>(layers.size()));
    for (std::size_t b = 0; b < batch.size(); ++b) {
        std::vector<int> ids = batch[b].ids;
        std::vector<std::uint8_t> mask(len, 0);
        std::fill(mask.begin(), mask.begin() + std::ptrdiff_t(ids.size()), std::uint8_t(1));
        ids.resize(len, pad_id);
        const Tensor h0 = embed(ids, {}, ckpt.config, ckpt);
        const LayerStates st = encode_all_layers(h0, mask, ckpt.config, ckpt,
                                                 {.up_to_layer = std::max(top, 1), .keep_embeddings = layers.front() == 0});
        for (std::size_t li = 0; li < layers.size(); ++li) {
            const Tensor h = hidden_at_mask(st, layers[li], batch[b].mask_index);
            const Tensor x({1, h.numel()}, std::vector<float>(h.data().begin(), h.data().end()));
            const Tensor logits = head_forward(heads.at(layers[li]), x);
            ranks[b][li] = rank_of(logits.row(0), gold[b]);
        }
    }
    return ranks;
}

inline ProbeOutputs cmd_probe(const RunConfig& c) {
    validate_run_config(c, Stage::probe);
    const Checkpoint ckpt = read_checkpoint(c.checkpoint);
    const auto layers = resolve_layers(c, ckpt.config);
    const Vocab vocab = load_vocab(c.vocab, c.casing);
    if (vocab.size() != std::size_t(ckpt.config.vocab_size)) {
        throw ValidationError("vocab has " + std::to_string(vocab.size()) + " tokens but the checkpoint expects " +
                              std::to_string(ckpt.config.vocab_size));
    }
    const fs::path dir = c.head_directory();
    std::string missing;
    for (int l : layers)
        if (!fs::exists(head_path(dir, l))) missing += " " + std::to_string(l);
    if (!missing.empty()) throw SetupError("missing head files in " + dir.string() + " for layer(s)" + missing);
    std::map<int, DecodingHead> heads;
    for (int l : layers) {
        DecodingHead h = load_head(head_path(dir, l));
        if (h.hidden() != std::size_t(ckpt.config.hidden_dim) || h.vocab() != std::size_t(ckpt.config.vocab_size)) {
            throw SetupError("head for layer " + std::to_string(l) + " does not match the checkpoint dimensions");
        }
        heads.emplace(l, std::move(h));
    }

    const ProbeSet set = load_probe_sets(c.probes, vocab, std::size_t(ckpt.config.max_positions));
    const std::size_t n = set.instances.size(), bs = c.inference_batch;
    std::vector<TokenizedCloze> encoded(n);
    std::vector<int> gold(n);
    for (std::size_t i = 0; i < n; ++i) {
        encoded[i] = encode_cloze(set.instances[i], vocab, std::size_t(ckpt.config.max_positions));
        gold[i] = *single_token_answer(set.instances[i].answer, vocab);
    }
    std::vector<std::vector<std::size_t>> ranks(n);
    const std::size_t n_batches = (n + bs - 1) / bs;
    parallel_for(n_batches, c.worker_count(), [&](std::size_t b) {
        const std::size_t begin = b * bs, end = std::min(n, begin + bs);
        std::vector<TokenizedCloze> batch(encoded.begin() + std::ptrdiff_t(begin), encoded.begin() + std::ptrdiff_t(end));
        std::vector<int> g(gold.begin() + std::ptrdiff_t(begin), gold.begin() + std::ptrdiff_t(end));
        auto r = rank_batch(batch, g, ckpt, layers, heads, vocab.specials().pad);
        for (std::size_t i = 0; i < r.size(); ++i) ranks[begin + i] = std::move(r[i]);
    });

    ProbeOutputs out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& inst = set.instances[i];
        for (std::size_t li = 0; li < layers.size(); ++li)
            out.cube.add({inst.uid, to_string(inst.probe), inst.relation.value_or(""), layers[li], ranks[i][li]});
    }
    out.report = json{{"metrics", build_layer_report(out.cube, c.ks)}, {"skipped", skip_json(set.skipped)}};
    fs::create_directories(c.output_dir);
    out.cube_path = c.output_dir / "cube.csv";
    out.report_path = c.output_dir / "report.json";
    write_cube_csv(out.cube, out.cube_path);
    detail::write_text(out.report_path, out.report.dump(2) + "\n");
    return out;
}

// ---------------------------------------------------------------------------
// report

/// "label=path" or a bare path labelled by its parent directory name (or
/// file stem when that is empty).
inline LabeledCube load_labeled_cube(const std::string& spec) {
    std::string label, path = spec;
    if (auto eq = spec.find('='); eq != std::string::npos) {
        label = spec.substr(0, eq);
        path = spec.substr(eq + 1);
    }
    const fs::path p(path);
    if (label.empty()) {
        label = p.parent_path().filename().string();
        if (label.empty() || label == ".") label = p.stem().string();
    }
    return {label, read_cube_csv(p)};
}

struct ReportCommandOptions {
    ReportOptions report{};
    bool write_metrics_json = false;
};

inline std::vector<fs::path> cmd_report(const std::vector<std::string>& cube_specs, const fs::path& out_dir,
                                        const ReportCommandOptions& opt) {
    if (cube_specs.empty()) throw UsageError("report: at least one --cube is required");
    std::vector<LabeledCube> cubes;
    std::set<std::string> labels;
    for (const auto& s : cube_specs) {
        cubes.push_back(load_labeled_cube(s));
        if (!labels.insert(cubes.back().label).second) {
            throw UsageError("report: duplicate cube label '" + cubes.back().label + "'; use label=path");
        }
    }
    auto written = write_report(cubes, opt.report, out_dir);
    if (opt.write_metrics_json) {
        json all = json::object();
        for (const auto& lc : cubes) all[lc.label] = build_layer_report(lc.cube, opt.report.ks);
        const auto p = out_dir / "metrics.json";
        detail::write_text(p, all.dump(2) + "\n");
        written.push_back(p);
    }
    return written;
}

// ---------------------------------------------------------------------------
// planted demo task

/// Writes checkpoint, vocab, corpus, probes and a run.json (paths relative to
/// `dir`) and returns the same config with resolved paths.
inline RunConfig write_planted_task(const PlantedTask& task, const fs::path& dir) {
    fs::create_directories(dir);
    write_checkpoint(task.checkpoint, dir / "checkpoint.lpkt");
    std::string vocab, corpus;
    for (const auto& t : task.vocab_tokens) vocab += t + "\n";
    for (const auto& l : task.corpus_lines) corpus += l + "\n";
    detail::write_text(dir / "vocab.txt", vocab);
    detail::write_text(dir / "corpus.txt", corpus);
    write_canonical(task.probes, dir / "probes.jsonl");
    const json run = {{"checkpoint", "checkpoint.lpkt"},
                      {"vocab", "vocab.txt"},
                      {"casing", "uncased"},
                      {"corpus", "corpus.txt"},
                      {"probes", {"probes.jsonl"}},
                      {"train", {{"lr", 3e-3}, {"patience", 3}, {"max_epochs", 30}, {"seed", 1}, {"init", "random"}}},
                      {"output_dir", "run"}};
    detail::write_text(dir / "run.json", run.dump(2) + "\n");
    return run_config_from_json(run, dir);
}

}  // namespace lprobe

#endif
