#ifndef LPROBE_PROBES_HPP
#define LPROBE_PROBES_HPP

// Knowledge probes in canonical JSON-Lines form, plus adapters for the LAMA
// release layout.
//
// Canonical record (one object per line):
//   {"probe":"trex","relation":"P19","cloze_text":"... [MASK] .","answer":"Berlin","uid":"P19_000001"}
// "relation" may be absent or null for probes that are not relation-organized.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "lprobe/errors.hpp"
#include "lprobe/tokenizer.hpp"

namespace lprobe {

using json = nlohmann::json;

enum class ProbeKind { conceptnet, trex, google_re, squad, custom };

inline std::string to_string(ProbeKind k) {
    switch (k) {
        case ProbeKind::conceptnet: return "conceptnet";
        case ProbeKind::trex: return "trex";
        case ProbeKind::google_re: return "google_re";
        case ProbeKind::squad: return "squad";
        case ProbeKind::custom: return "custom";
    }
    return "custom";
}

inline std::optional<ProbeKind> parse_probe_kind(std::string_view s) {
    for (auto k : {ProbeKind::conceptnet, ProbeKind::trex, ProbeKind::google_re, ProbeKind::squad, ProbeKind::custom})
        if (s == to_string(k)) return k;
    return std::nullopt;
}

inline bool is_relation_organized(ProbeKind k) { return k == ProbeKind::trex || k == ProbeKind::google_re; }

inline std::size_t count_mask_tokens(std::string_view text) {
    std::size_t n = 0;
    for (auto pos = text.find(kMaskToken); pos != std::string_view::npos; pos = text.find(kMaskToken, pos + 1)) ++n;
    return n;
}

struct ProbeInstance {
    ProbeKind probe = ProbeKind::custom;
    std::optional<std::string> relation;
    std::string cloze_text;
    std::string answer;
    std::string uid;

    friend bool operator==(const ProbeInstance&, const ProbeInstance&) = default;
};

inline json to_json(const ProbeInstance& p) {
    json j = json::object();
    j["probe"] = to_string(p.probe);
    j["relation"] = p.relation ? json(*p.relation) : json(nullptr);
    j["cloze_text"] = p.cloze_text;
    j["answer"] = p.answer;
    j["uid"] = p.uid;
    return j;
}

/// Per-reason skip counts plus per-record details.
struct SkipLog {
    std::map<std::string, std::size_t> counts;
    std::vector<std::string> details;

    void add(const std::string& reason, const std::string& detail) {
        ++counts[reason];
        details.push_back(reason + ": " + detail);
    }
    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& [r, c] : counts) n += c;
        return n;
    }
    void merge(const SkipLog& o) {
        for (const auto& [r, c] : o.counts) counts[r] += c;
        details.insert(details.end(), o.details.begin(), o.details.end());
    }
};

namespace skip_reason {
inline const std::string malformed = "malformed";
inline const std::string duplicate = "duplicate";
inline const std::string multi_token = "multi-token";
inline const std::string over_length = "over-length";
}  // namespace skip_reason

struct ProbeSet {
    std::vector<ProbeInstance> instances;
    SkipLog skipped;

    /// Instance count per relation; instances without a relation count under "".
    std::map<std::string, std::size_t> counts() const {
        std::map<std::string, std::size_t> c;
        for (const auto& i : instances) ++c[i.relation.value_or("")];
        return c;
    }
};

inline void require_nonempty(const ProbeSet& set, const std::string& what) {
    if (set.instances.empty()) throw EmptyProbeError("no valid probe instances in " + what);
}

/// Validates one canonical record; throws ProbeFormatError on any defect.
inline ProbeInstance instance_from_json(const json& j) {
    if (!j.is_object()) throw ProbeFormatError("record is not an object");
    auto str_field = [&](const char* key) {
        if (!j.contains(key) || !j.at(key).is_string()) throw ProbeFormatError(std::string("missing string field '") + key + "'");
        return j.at(key).get<std::string>();
    };
    ProbeInstance p;
    const auto kind = parse_probe_kind(str_field("probe"));
    if (!kind) throw ProbeFormatError("unknown probe name '" + j.at("probe").get<std::string>() + "'");
    p.probe = *kind;
    if (j.contains("relation") && !j.at("relation").is_null()) {
        if (!j.at("relation").is_string()) throw ProbeFormatError("relation must be a string or null");
        p.relation = j.at("relation").get<std::string>();
    }
    p.cloze_text = str_field("cloze_text");
    p.answer = str_field("answer");
    p.uid = str_field("uid");
    if (count_mask_tokens(p.cloze_text) != 1) throw ProbeFormatError("cloze_text must contain exactly one [MASK]");
    if (p.answer.empty()) throw ProbeFormatError("answer is empty");
    if (p.uid.empty()) throw ProbeFormatError("uid is empty");
    return p;
}

/// Parses a canonical JSON-Lines stream. Bad lines are recorded in
/// `skipped` with their line numbers; the stream is never aborted.
inline ProbeSet parse_canonical_stream(std::istream& in, const std::string& source) {
    ProbeSet set;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = source + ":" + std::to_string(lineno);
        try {
            ProbeInstance p = instance_from_json(json::parse(line));
            if (!seen.insert(p.uid).second) {
                set.skipped.add(skip_reason::duplicate, where + " uid " + p.uid);
                continue;
            }
            set.instances.push_back(std::move(p));
        } catch (const json::exception& e) {
            set.skipped.add(skip_reason::malformed, where + " " + e.what());
        } catch (const ProbeFormatError& e) {
            set.skipped.add(skip_reason::malformed, where + " " + e.what());
        }
    }
    return set;
}

inline ProbeSet parse_canonical(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open probe file " + path.string());
    ProbeSet set = parse_canonical_stream(in, path.string());
    require_nonempty(set, path.string());
    return set;
}

inline void write_canonical(const std::vector<ProbeInstance>& instances, std::ostream& out) {
    for (const auto& p : instances) out << to_json(p).dump() << '\n';
}

inline void write_canonical(const std::vector<ProbeInstance>& instances, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    write_canonical(instances, out);
}

/// Replaces "[X]" by the subject and "[Y]" by "[MASK]".
inline std::string fill_template(std::string_view templ, std::string_view subject) {
    auto count = [&](std::string_view needle) {
        std::size_t n = 0;
        for (auto p = templ.find(needle); p != std::string_view::npos; p = templ.find(needle, p + 1)) ++n;
        return n;
    };
    if (count("[X]") != 1 || count("[Y]") != 1) {
        throw TemplateError("template must contain [X] and [Y] exactly once: " + std::string(templ));
    }
    std::string out(templ);
    out.replace(out.find("[X]"), 3, subject);
    out.replace(out.find("[Y]"), 3, kMaskToken);
    if (count_mask_tokens(out) != 1) throw TemplateError("subject introduces an extra [MASK]: " + std::string(subject));
    return out;
}

/// Drops instances whose answer is not a single vocab token or whose cloze
/// does not encode within max_positions.
inline ProbeSet filter_for_vocab(const ProbeSet& set, const Vocab& vocab, std::size_t max_positions) {
    ProbeSet out;
    out.skipped = set.skipped;
    for (const auto& p : set.instances) {
        if (!single_token_answer(p.answer, vocab)) {
            out.skipped.add(skip_reason::multi_token, p.uid + " answer '" + p.answer + "'");
            continue;
        }
        try {
            encode_cloze(p.cloze_text, vocab, max_positions);
        } catch (const TruncationError&) {
            out.skipped.add(skip_reason::over_length, p.uid);
            continue;
        } catch (const ProbeFormatError&) {
            out.skipped.add(skip_reason::malformed, p.uid);
            continue;
        }
        out.instances.push_back(p);
    }
    return out;
}

inline TokenizedCloze encode_cloze(const ProbeInstance& p, const Vocab& vocab, std::size_t max_positions) {
    return encode_cloze(p.cloze_text, vocab, max_positions);
}

// ---------------------------------------------------------------------------
// LAMA adaptation

struct AdaptOptions {
    /// Use the release's pre-masked sentences instead of relation templates
    /// (T-REx and Google-RE only; ConceptNet and SQuAD always use them).
    bool use_masked_sentences = false;
};

struct AdaptResult {
    std::vector<ProbeInstance> instances;
    SkipLog skipped;
    std::map<std::string, std::size_t> relation_counts;
    std::vector<std::string> warnings;

    json summary(ProbeKind kind) const {
        json rel = json::object();
        for (const auto& [r, c] : relation_counts) rel[r] = c;
        json sk = json::object();
        for (const auto& [r, c] : skipped.counts) sk[r] = c;
        return json{{"kind", to_string(kind)}, {"instances", instances.size()}, {"relations", rel},
                    {"num_relations", relation_counts.size()}, {"skipped", sk}, {"warnings", warnings}};
    }
};

inline constexpr std::size_t kLamaSquadInstances = 305;

namespace detail {

inline std::string padded_uid(const std::string& stem, std::size_t index) {
    std::ostringstream os;
    os << stem << '_' << std::setw(6) << std::setfill('0') << index;
    return os.str();
}

/// Calls f(record, index) for each line of a JSON-Lines file; unparseable
/// lines go to the skip log.
template <class F>
void for_each_record(const std::filesystem::path& path, SkipLog& skipped, F&& f) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::size_t index = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::size_t i = index++;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            skipped.add(skip_reason::malformed, path.filename().string() + ":" + std::to_string(i) + " " + e.what());
            continue;
        }
        f(rec, i);
    }
}

inline std::optional<std::string> string_at(const json& j, const char* key) {
    if (j.is_object() && j.contains(key) && j.at(key).is_string()) return j.at(key).get<std::string>();
    return std::nullopt;
}

inline std::optional<std::string> first_masked_sentence(const json& rec) {
    if (rec.contains("masked_sentences") && rec["masked_sentences"].is_array()) {
        for (const auto& s : rec["masked_sentences"])
            if (s.is_string()) return s.get<std::string>();
    }
    if (rec.contains("evidences") && rec["evidences"].is_array()) {
        for (const auto& e : rec["evidences"])
            if (auto s = string_at(e, "masked_sentence")) return s;
    }
    return std::nullopt;
}

inline std::vector<std::filesystem::path> sorted_files(const std::filesystem::path& dir, const std::string& suffix) {
    std::vector<std::filesystem::path> files;
    if (!std::filesystem::is_directory(dir)) return files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && name.size() >= suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

inline std::string stem_of(const std::filesystem::path& p) { return p.stem().string(); }

/// relation id -> template from a LAMA relations.jsonl file.
inline std::map<std::string, std::string> read_templates(const std::filesystem::path& path, SkipLog& skipped) {
    std::map<std::string, std::string> out;
    if (!std::filesystem::exists(path)) return out;
    for_each_record(path, skipped, [&](const json& rec, std::size_t) {
        auto rel = string_at(rec, "relation");
        auto tpl = string_at(rec, "template");
        if (rel && tpl) out[*rel] = *tpl;
    });
    return out;
}

inline const std::map<std::string, std::string>& google_re_default_templates() {
    static const std::map<std::string, std::string> t = {
        {"place_of_birth", "[X] was born in [Y] ."},
        {"date_of_birth", "[X] (born [Y])."},
        {"place_of_death", "[X] died in [Y] ."},
    };
    return t;
}

// Relation-organized record: subject + object + relation template.
inline void adapt_relation_record(const json& rec, std::size_t index, ProbeKind kind, const std::string& file_stem,
                                  const std::string& relation, const std::optional<std::string>& templ,
                                  const AdaptOptions& opt, AdaptResult& out) {
    const std::string where = file_stem + ":" + std::to_string(index);
    if (!rec.is_object()) {
        out.skipped.add("unrecognized-record", where);
        return;
    }
    auto answer = string_at(rec, "obj_label");
    if (!answer || answer->empty()) {
        out.skipped.add("unrecognized-record", where + " lacks obj_label");
        return;
    }
    std::string cloze;
    if (opt.use_masked_sentences) {
        auto s = first_masked_sentence(rec);
        if (!s) {
            out.skipped.add("unrecognized-record", where + " lacks masked sentence");
            return;
        }
        cloze = *s;
    } else {
        auto subject = string_at(rec, "sub_label");
        if (!subject) {
            out.skipped.add("unrecognized-record", where + " lacks sub_label");
            return;
        }
        if (!templ) {
            out.skipped.add("no-template", where + " relation " + relation);
            return;
        }
        try {
            cloze = fill_template(*templ, *subject);
        } catch (const TemplateError& e) {
            out.skipped.add("bad-template", where + " " + e.what());
            return;
        }
    }
    if (count_mask_tokens(cloze) != 1) {
        out.skipped.add(skip_reason::malformed, where + " cloze lacks exactly one [MASK]");
        return;
    }
    out.instances.push_back({kind, relation, cloze, *answer, padded_uid(file_stem, index)});
    ++out.relation_counts[relation];
}

// Pre-masked sentence record without relation grouping.
inline void adapt_sentence_record(const json& rec, std::size_t index, ProbeKind kind, const std::string& file_stem,
                                  AdaptResult& out) {
    const std::string where = file_stem + ":" + std::to_string(index);
    auto answer = rec.is_object() ? string_at(rec, "obj_label") : std::nullopt;
    auto cloze = rec.is_object() ? first_masked_sentence(rec) : std::nullopt;
    if (!answer || answer->empty() || !cloze) {
        out.skipped.add("unrecognized-record", where);
        return;
    }
    if (count_mask_tokens(*cloze) != 1) {
        out.skipped.add(skip_reason::malformed, where + " cloze lacks exactly one [MASK]");
        return;
    }
    out.instances.push_back({kind, std::nullopt, *cloze, *answer, padded_uid(file_stem, index)});
    ++out.relation_counts[""];
}

}  // namespace detail

/// Converts one probe family from a LAMA `data/` directory:
///   ConceptNet/test.jsonl, Squad/test.jsonl, TREx/<relation>.jsonl,
///   Google_RE/<relation>_test.jsonl, relations.jsonl (T-REx templates).
/// Files are visited in sorted order and records in file order, so reruns
/// produce identical output.
inline AdaptResult adapt_lama(const std::filesystem::path& dir, ProbeKind kind, const AdaptOptions& opt = {}) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("LAMA directory not found: " + dir.string());
    AdaptResult out;
    switch (kind) {
        case ProbeKind::trex: {
            auto templates = detail::read_templates(dir / "relations.jsonl", out.skipped);
            for (const auto& f : detail::sorted_files(dir / "TREx", ".jsonl")) {
                const std::string rel = detail::stem_of(f);
                std::optional<std::string> tpl;
                if (auto it = templates.find(rel); it != templates.end()) tpl = it->second;
                detail::for_each_record(f, out.skipped, [&](const json& rec, std::size_t i) {
                    detail::adapt_relation_record(rec, i, kind, rel, rel, tpl, opt, out);
                });
            }
            break;
        }
        case ProbeKind::google_re: {
            auto templates = detail::google_re_default_templates();
            for (const auto& [r, t] : detail::read_templates(dir / "Google_RE" / "relations.jsonl", out.skipped))
                templates[r] = t;
            for (const auto& f : detail::sorted_files(dir / "Google_RE", ".jsonl")) {
                std::string stem = detail::stem_of(f);
                if (stem == "relations") continue;
                std::string key = stem;
                if (key.size() > 5 && key.ends_with("_test")) key.resize(key.size() - 5);
                std::string rel = key;
                std::replace(rel.begin(), rel.end(), '_', '-');
                std::optional<std::string> tpl;
                if (auto it = templates.find(key); it != templates.end()) tpl = it->second;
                detail::for_each_record(f, out.skipped, [&](const json& rec, std::size_t i) {
                    detail::adapt_relation_record(rec, i, kind, stem, rel, tpl, opt, out);
                });
            }
            break;
        }
        case ProbeKind::conceptnet:
        case ProbeKind::squad: {
            const fs::path sub = dir / (kind == ProbeKind::conceptnet ? "ConceptNet" : "Squad");
            for (const auto& f : detail::sorted_files(sub, ".jsonl")) {
                const std::string stem = (kind == ProbeKind::conceptnet ? "conceptnet_" : "squad_") + detail::stem_of(f);
                detail::for_each_record(f, out.skipped, [&](const json& rec, std::size_t i) {
                    detail::adapt_sentence_record(rec, i, kind, stem, out);
                });
            }
            if (kind == ProbeKind::squad && !out.instances.empty() && out.instances.size() != kLamaSquadInstances) {
                out.warnings.push_back("SQuAD probe has " + std::to_string(out.instances.size()) + " instances, expected " +
                                       std::to_string(kLamaSquadInstances));
            }
            break;
        }
        case ProbeKind::custom:
            throw UsageError("adapt_lama: 'custom' is not a LAMA probe kind");
    }
    if (out.instances.empty()) throw EmptyProbeError("no " + to_string(kind) + " records found under " + dir.string());
    return out;
}

}  // namespace lprobe

#endif
