#ifndef LPROBE_METRICS_HPP
#define LPROBE_METRICS_HPP

// Rank-based knowledge measurement over a correctness cube
// (instance × layer → gold rank).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lprobe/errors.hpp"

namespace lprobe {

/// 1-based rank of `gold` with ties broken towards the smaller token id.
inline std::size_t rank_of(std::span<const float> logits, int gold) {
    if (gold < 0 || std::size_t(gold) >= logits.size()) {
        throw IndexError("rank_of: gold id " + std::to_string(gold) + " outside vocabulary of " +
                         std::to_string(logits.size()));
    }
    const float g = logits[std::size_t(gold)];
    std::size_t rank = 1;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        const float v = logits[j];
        if (!std::isfinite(v)) throw MetricError("rank_of: non-finite logit at token " + std::to_string(j));
        if (v > g || (v == g && j < std::size_t(gold))) ++rank;
    }
    return rank;
}

struct CubeEntry {
    std::string uid;
    std::string probe;
    std::string relation;  // empty when the probe is not relation-organized
    int layer = 0;
    std::size_t rank = 0;

    bool correct_at(std::size_t k) const { return rank <= k; }
    friend bool operator==(const CubeEntry&, const CubeEntry&) = default;
};

class CorrectnessCube {
public:
    void add(CubeEntry e) {
        if (e.rank == 0) throw MetricError("rank must be 1-based");
        if (!keys_.emplace(e.uid, e.layer).second) {
            throw MetricError("duplicate cube cell (" + e.uid + ", layer " + std::to_string(e.layer) + ")");
        }
        entries_.push_back(std::move(e));
    }

    const std::vector<CubeEntry>& entries() const noexcept { return entries_; }
    bool empty() const noexcept { return entries_.empty(); }

    std::vector<int> layers() const {
        std::set<int> s;
        for (const auto& e : entries_) s.insert(e.layer);
        return {s.begin(), s.end()};
    }

    std::vector<std::string> probes() const {
        std::set<std::string> s;
        for (const auto& e : entries_) s.insert(e.probe);
        return {s.begin(), s.end()};
    }

    /// Instance uids of a probe in first-seen order.
    std::vector<std::string> uids(const std::string& probe) const {
        std::vector<std::string> out;
        std::set<std::string> seen;
        for (const auto& e : entries_)
            if (e.probe == probe && seen.insert(e.uid).second) out.push_back(e.uid);
        return out;
    }

    /// True when every instance of the probe carries a relation label.
    bool relation_organized(const std::string& probe) const {
        bool any = false;
        for (const auto& e : entries_) {
            if (e.probe != probe) continue;
            any = true;
            if (e.relation.empty()) return false;
        }
        return any;
    }

    /// Every (uid, layer) pair of a probe present exactly once.
    void check_complete(const std::string& probe) const {
        const auto ls = layers();
        std::map<std::string, std::size_t> per_uid;
        for (const auto& e : entries_)
            if (e.probe == probe) ++per_uid[e.uid];
        for (const auto& [uid, n] : per_uid)
            if (n != ls.size()) throw MetricError("instance " + uid + " is missing layers in the cube");
    }

    friend bool operator==(const CorrectnessCube& a, const CorrectnessCube& b) { return a.entries_ == b.entries_; }

private:
    std::vector<CubeEntry> entries_;
    std::set<std::pair<std::string, int>> keys_;
};

/// Micro-averaged P@k of a probe at one layer.
inline double precision_at_k(const CorrectnessCube& cube, int layer, const std::string& probe, std::size_t k) {
    std::size_t n = 0, hit = 0;
    for (const auto& e : cube.entries()) {
        if (e.probe != probe || e.layer != layer) continue;
        ++n;
        hit += e.correct_at(k);
    }
    if (n == 0) throw EmptyProbeError("probe '" + probe + "' has no instances at layer " + std::to_string(layer));
    return double(hit) / double(n);
}

/// P@k per layer, in ascending layer order.
inline std::vector<double> layer_curve(const CorrectnessCube& cube, const std::string& probe, std::size_t k) {
    std::vector<double> out;
    for (int l : cube.layers()) out.push_back(precision_at_k(cube, l, probe, k));
    return out;
}

struct TotalPrecision {
    double union_semantics = 0;  // fraction of instances correct at some layer
    double max_of_means = 0;     // max over layers of P^l@k
};

inline TotalPrecision total_precision_at_k(const CorrectnessCube& cube, const std::string& probe, std::size_t k) {
    const auto ls = cube.layers();
    if (ls.empty()) throw EmptyProbeError("cube has no layers");
    std::map<std::string, bool> any;
    for (const auto& e : cube.entries()) {
        if (e.probe != probe) continue;
        any[e.uid] = any[e.uid] || e.correct_at(k);
    }
    if (any.empty()) throw EmptyProbeError("probe '" + probe + "' has no instances");
    std::size_t hit = 0;
    for (const auto& [uid, ok] : any) hit += ok;
    TotalPrecision t;
    t.union_semantics = double(hit) / double(any.size());
    for (int l : ls) t.max_of_means = std::max(t.max_of_means, precision_at_k(cube, l, probe, k));
    return t;
}

struct RelationCurve {
    std::size_t count = 0;             // instances of the relation
    std::vector<int> layers;           // ascending
    std::vector<std::size_t> correct;  // per layer
    std::vector<double> means;         // correct / count, per layer
};

/// Per-relation mean P@k at every layer. Only relations with instances
/// appear.
inline std::map<std::string, RelationCurve> per_relation_means(const CorrectnessCube& cube, const std::string& probe,
                                                               std::size_t k) {
    if (!cube.relation_organized(probe)) {
        throw UsageError("probe '" + probe + "' is not relation-organized");
    }
    const auto ls = cube.layers();
    std::map<int, std::size_t> layer_pos;
    for (std::size_t i = 0; i < ls.size(); ++i) layer_pos[ls[i]] = i;
    std::map<std::string, RelationCurve> out;
    std::map<std::string, std::set<std::string>> members;
    for (const auto& e : cube.entries()) {
        if (e.probe != probe) continue;
        auto& c = out[e.relation];
        if (c.layers.empty()) {
            c.layers = ls;
            c.correct.assign(ls.size(), 0);
        }
        members[e.relation].insert(e.uid);
        c.correct[layer_pos[e.layer]] += e.correct_at(k);
    }
    for (auto& [r, c] : out) {
        c.count = members[r].size();
        c.means.resize(ls.size());
        for (std::size_t i = 0; i < ls.size(); ++i) c.means[i] = double(c.correct[i]) / double(c.count);
    }
    return out;
}

/// A relation is forgotten when some earlier layer's mean strictly exceeds
/// the last layer's.
inline bool is_forgotten(const RelationCurve& c) {
    if (c.means.size() < 2) throw UsageError("forgotten-relation test needs at least two layers");
    const double last = c.means.back();
    return *std::max_element(c.means.begin(), c.means.end() - 1) > last;
}

inline double forgotten_fraction(const std::map<std::string, RelationCurve>& relation_means) {
    if (relation_means.empty()) throw UsageError("forgotten fraction needs a relation-organized probe");
    std::size_t forgotten = 0;
    for (const auto& [r, c] : relation_means) forgotten += is_forgotten(c);
    return double(forgotten) / double(relation_means.size());
}

// ---------------------------------------------------------------------------
// Cube CSV: uid,probe,relation,layer,rank

inline const std::string kCubeCsvHeader = "uid,probe,relation,layer,rank";

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted) throw FormatError("unterminated quoted CSV field");
    fields.push_back(std::move(cur));
    return fields;
}

}  // namespace detail

inline void write_cube_csv(const CorrectnessCube& cube, std::ostream& out) {
    out << kCubeCsvHeader << '\n';
    for (const auto& e : cube.entries()) {
        out << detail::csv_field(e.uid) << ',' << detail::csv_field(e.probe) << ',' << detail::csv_field(e.relation)
            << ',' << e.layer << ',' << e.rank << '\n';
    }
}

inline void write_cube_csv(const CorrectnessCube& cube, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    write_cube_csv(cube, out);
}

inline CorrectnessCube read_cube_csv(std::istream& in, const std::string& source = "cube") {
    std::string line;
    if (!std::getline(in, line)) throw FormatError(source + ": empty cube file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCubeCsvHeader) throw FormatError(source + ": unexpected cube header '" + line + "'");
    CorrectnessCube cube;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 5) throw FormatError(source + ":" + std::to_string(lineno) + ": expected 5 fields");
        CubeEntry e{f[0], f[1], f[2], 0, 0};
        try {
            std::size_t used = 0;
            e.layer = std::stoi(f[3], &used);
            if (used != f[3].size()) throw std::invalid_argument("layer");
            const unsigned long long r = std::stoull(f[4], &used);
            if (used != f[4].size()) throw std::invalid_argument("rank");
            e.rank = std::size_t(r);
        } catch (const std::logic_error&) {
            throw FormatError(source + ":" + std::to_string(lineno) + ": bad layer or rank");
        }
        cube.add(std::move(e));
    }
    return cube;
}

inline CorrectnessCube read_cube_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open cube " + path.string());
    return read_cube_csv(in, path.string());
}

}  // namespace lprobe

#endif
