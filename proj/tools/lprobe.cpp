// lprobe: layer-wise knowledge probing of frozen transformer encoders.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "lprobe/fixture.hpp"
#include "lprobe/pipeline.hpp"
#include "lprobe/synthetic.hpp"

namespace fs = std::filesystem;
using namespace lprobe;

namespace {

struct Overrides {
    std::string config, checkpoint, vocab, casing, corpus, validation_corpus, out, heads, init;
    std::vector<std::string> probes;
    std::vector<int> layers;
    std::vector<std::size_t> ks;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr;
    std::optional<std::size_t> batch_size, workers, max_steps, inference_batch, window;
    std::optional<int> patience, max_epochs;
    bool whole_word = false;
};

void add_common(CLI::App* app, Overrides& o) {
    app->add_option("--config", o.config, "run config JSON file");
    app->add_option("--checkpoint", o.checkpoint, "encoder checkpoint (.lpkt)");
    app->add_option("--vocab", o.vocab, "vocabulary file, one token per line");
    app->add_option("--casing", o.casing, "uncased or cased")->check(CLI::IsMember({"uncased", "cased"}));
    app->add_option("--layers", o.layers, "layers to use (default: all)")->delimiter(',');
    app->add_option("--workers", o.workers, "worker threads (0 = all cores)");
    app->add_option("--out", o.out, "output directory");
    app->add_option("--heads", o.heads, "directory holding head_layer_<l>.lpkt files");
}

RunConfig build_config(const Overrides& o) {
    RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
    if (!o.checkpoint.empty()) c.checkpoint = o.checkpoint;
    if (!o.vocab.empty()) c.vocab = o.vocab;
    if (!o.casing.empty()) c.casing = o.casing == "cased" ? Casing::cased : Casing::uncased;
    if (!o.corpus.empty()) c.corpus = o.corpus;
    if (!o.validation_corpus.empty()) c.validation_corpus = fs::path(o.validation_corpus);
    if (!o.probes.empty()) c.probes.assign(o.probes.begin(), o.probes.end());
    if (!o.layers.empty()) c.layers = o.layers;
    if (!o.ks.empty()) c.ks = o.ks;
    if (!o.out.empty()) c.output_dir = o.out;
    if (!o.heads.empty()) c.heads_dir = fs::path(o.heads);
    if (!o.init.empty()) c.train.init = o.init == "random" ? HeadInit::random : HeadInit::pretrained;
    if (o.seed) c.train.seed = *o.seed;
    if (o.lr) c.train.adam.lr = *o.lr;
    if (o.batch_size) c.train.batch_size = *o.batch_size;
    if (o.workers) c.workers = *o.workers;
    if (o.max_steps) c.train.max_steps_per_epoch = *o.max_steps;
    if (o.inference_batch) c.inference_batch = *o.inference_batch;
    if (o.window) c.window = *o.window;
    if (o.patience) c.train.patience = *o.patience;
    if (o.max_epochs) c.train.max_epochs = *o.max_epochs;
    if (o.whole_word) c.train.masking.whole_word = true;
    return c;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

int write_synthetic(const fs::path& dir, bool small, bool forget) {
    PlantedSpec spec;
    if (small) {
        spec.num_subjects = 8;
        spec.num_answers = 2;
        spec.num_relations = 1;
        spec.train_subjects = 4;
        spec.corpus_repeats = 100;
    }
    spec.forget_layer = forget;
    const PlantedTask task = build_planted_task(spec);
    write_planted_task(task, dir);
    std::cout << "wrote planted task (" << task.checkpoint.config.num_layers << " layers, vocab "
              << task.vocab_tokens.size() << ", " << task.probes.size() << " probes) to " << dir.string() << "\n";
    return 0;
}

int inspect(const fs::path& path) {
    const Checkpoint c = read_lpkt(path);
    std::cout << "config: " << to_json(c.config).dump() << "\n";
    std::cout << "provenance: " << c.provenance.dump() << "\n";
    std::cout << "tensors: " << c.tensors.size() << "\n";
    const auto kind = c.provenance.value("kind", std::string());
    const auto report =
        kind == "decoding_head"
            ? validate_against(head_schema(std::size_t(c.config.hidden_dim), std::size_t(c.config.vocab_size)),
                               shapes_of(c.tensors))
            : validate_schema(c.config, shapes_of(c.tensors));
    std::cout << "schema: " << report.summary() << "\n";
    return report.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-wise knowledge probing for transformer encoders"};
    app.require_subcommand(1);

    std::string lama, kind, adapt_out, summary;
    bool masked_sentences = false;
    auto* adapt = app.add_subcommand("adapt", "convert a LAMA probe directory to canonical JSON Lines");
    adapt->add_option("--lama", lama, "LAMA release directory")->required();
    adapt->add_option("--kind", kind, "conceptnet, trex, google_re or squad")->required();
    adapt->add_option("--out", adapt_out, "canonical output file")->required();
    adapt->add_option("--summary", summary, "summary JSON (default: <out>.summary.json)");
    adapt->add_flag("--masked-sentences", masked_sentences, "use provided masked sentences instead of templates");

    Overrides train_o;
    auto* train = app.add_subcommand("train-heads", "train one decoding head per layer");
    add_common(train, train_o);
    train->add_option("--corpus", train_o.corpus, "training text, one passage per line");
    train->add_option("--validation-corpus", train_o.validation_corpus, "validation text");
    train->add_option("--seed", train_o.seed);
    train->add_option("--lr", train_o.lr);
    train->add_option("--batch-size", train_o.batch_size);
    train->add_option("--patience", train_o.patience);
    train->add_option("--max-epochs", train_o.max_epochs);
    train->add_option("--max-steps-per-epoch", train_o.max_steps);
    train->add_option("--window", train_o.window, "corpus window length in tokens");
    train->add_option("--init", train_o.init, "pretrained or random")->check(CLI::IsMember({"pretrained", "random"}));
    train->add_flag("--whole-word", train_o.whole_word, "mask whole words instead of word pieces");

    Overrides probe_o;
    auto* probe = app.add_subcommand("probe", "score every probe instance at every layer");
    add_common(probe, probe_o);
    probe->add_option("--probes", probe_o.probes, "canonical probe files");
    probe->add_option("--ks", probe_o.ks, "k values, ascending")->delimiter(',');
    probe->add_option("--batch", probe_o.inference_batch, "inference batch size");

    std::vector<std::string> cubes, relations;
    std::string report_out;
    std::size_t plot_k = 1;
    std::vector<std::size_t> report_ks;
    bool no_timestamp = false, metrics_json = false;
    auto* report = app.add_subcommand("report", "render tables and plots from cube files");
    report->add_option("--cube", cubes, "cube CSV, optionally label=path; repeat to overlay")->required();
    report->add_option("--out", report_out, "output directory")->required();
    report->add_option("--k", plot_k, "k used for plots");
    report->add_option("--ks", report_ks, "k values for tables")->delimiter(',');
    report->add_option("--relations", relations, "relations for the per-relation plot")->delimiter(',');
    report->add_flag("--no-timestamp", no_timestamp, "omit the timestamp from SVG metadata");
    report->add_flag("--json", metrics_json, "also write metrics.json");

    std::string synth_out = "planted";
    bool small = false, no_forget = false;
    auto* synth = app.add_subcommand("synth", "write the planted-knowledge demo task");
    synth->add_option("--out", synth_out, "output directory");
    synth->add_flag("--small", small, "16-token vocabulary variant");
    synth->add_flag("--no-forget", no_forget, "omit the layer that erases the planted answer");

    std::string inspect_path;
    auto* insp = app.add_subcommand("inspect", "print an LPKT file's config and schema status");
    insp->add_option("file", inspect_path)->required();

    std::string parity_ckpt, parity_fixture;
    double parity_tol = kParityTolerance;
    auto* parity = app.add_subcommand("parity", "compare encoder outputs with a reference-activation fixture");
    parity->add_option("--checkpoint", parity_ckpt, "encoder checkpoint (.lpkt)")->required();
    parity->add_option("--fixture", parity_fixture, "reference-activation JSON")->required();
    parity->add_option("--tol", parity_tol, "elementwise tolerance");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (adapt->parsed()) {
            const auto k = parse_probe_kind(kind);
            if (!k || *k == ProbeKind::custom) throw UsageError("unknown probe kind '" + kind + "'");
            const auto o = cmd_adapt(lama, *k, adapt_out, AdaptOptions{masked_sentences},
                                     summary.empty() ? std::nullopt : std::optional<fs::path>(summary));
            std::cout << o.result.summary(*k).dump(2) << "\n";
            for (const auto& w : o.result.warnings) std::cerr << "warning: " << w << "\n";
        } else if (train->parsed()) {
            const auto o = cmd_train_heads(build_config(train_o));
            std::cout << o.manifest.dump(2) << "\n";
            for (const auto& l : o.layers)
                if (!l.ok) std::cerr << "layer " << l.layer << " failed: " << l.error << "\n";
        } else if (probe->parsed()) {
            const auto o = cmd_probe(build_config(probe_o));
            std::cout << "wrote " << o.cube_path.string() << " and " << o.report_path.string() << "\n";
        } else if (report->parsed()) {
            ReportCommandOptions opt;
            opt.report.plot_k = plot_k;
            if (!report_ks.empty()) opt.report.ks = report_ks;
            opt.report.relations = relations;
            if (!no_timestamp) opt.report.timestamp = utc_timestamp();
            opt.write_metrics_json = metrics_json;
            for (const auto& p : cmd_report(cubes, report_out, opt)) std::cout << "wrote " << p.string() << "\n";
        } else if (synth->parsed()) {
            return write_synthetic(synth_out, small, !no_forget);
        } else if (parity->parsed()) {
            const auto r = check_parity(load_fixture(parity_fixture), read_checkpoint(parity_ckpt));
            std::printf("%zu inputs, max abs diff %.3g (tolerance %.3g)%s%s\n", r.inputs, r.max_abs_diff, parity_tol,
                        r.worst.empty() ? "" : ", worst: ", r.worst.c_str());
            return r.ok(parity_tol) ? 0 : 1;
        } else if (insp->parsed()) {
            return inspect(inspect_path);
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
