#ifndef LPROBE_REPORT_HPP
#define LPROBE_REPORT_HPP

// Aggregated reports, comparison tables and SVG plots derived from one or
// more correctness cubes.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "lprobe/errors.hpp"
#include "lprobe/metrics.hpp"

namespace lprobe {

using json = nlohmann::json;

inline const std::vector<std::size_t> kDefaultKs = {1, 10, 100};

/// Every metric for every probe in the cube, keyed by k.
inline json build_layer_report(const CorrectnessCube& cube, const std::vector<std::size_t>& ks = kDefaultKs) {
    json report = json::object();
    const auto layers = cube.layers();
    report["layers"] = layers;
    report["ks"] = ks;
    json probes = json::object();
    for (const auto& probe : cube.probes()) {
        cube.check_complete(probe);
        json p = json::object();
        p["instances"] = cube.uids(probe).size();
        json precision = json::object(), total = json::object(), last = json::object();
        for (auto k : ks) {
            const auto key = std::to_string(k);
            const auto curve = layer_curve(cube, probe, k);
            precision[key] = curve;
            last[key] = curve.back();
            const auto t = total_precision_at_k(cube, probe, k);
            total[key] = {{"union", t.union_semantics}, {"max_of_means", t.max_of_means}};
        }
        p["precision"] = precision;
        p["last_layer"] = last;
        p["total"] = total;
        if (cube.relation_organized(probe)) {
            json rels = json::object(), fractions = json::object();
            for (auto k : ks) {
                const auto key = std::to_string(k);
                const auto means = per_relation_means(cube, probe, k);
                for (const auto& [r, c] : means) {
                    rels[r]["count"] = c.count;
                    rels[r]["means"][key] = c.means;
                    if (layers.size() >= 2) rels[r]["forgotten"][key] = is_forgotten(c);
                }
                if (layers.size() >= 2) fractions[key] = forgotten_fraction(means);
            }
            p["relations"] = rels;
            if (layers.size() >= 2) p["forgotten_fraction"] = fractions;
        }
        probes[probe] = p;
    }
    report["probes"] = probes;
    return report;
}

// ---------------------------------------------------------------------------
// SVG

namespace svg {

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline const std::vector<std::string>& palette() {
    static const std::vector<std::string> p = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return p;
}

struct Series {
    std::string label;
    std::vector<double> xs;
    std::vector<double> ys;
};

struct Panel {
    std::string title;
    std::vector<Series> series;
};

inline constexpr double kPanelW = 360, kPanelH = 260, kMarginL = 50, kMarginR = 15, kMarginT = 30, kMarginB = 40;

inline std::string document(double width, double height, const std::string& title, const std::string& body,
                            const std::optional<std::string>& timestamp) {
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
       << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height) << "\" font-family=\"sans-serif\">\n"
       << "<title>" << escape(title) << "</title>\n";
    if (timestamp) os << "<metadata>generated " << escape(*timestamp) << "</metadata>\n";
    os << "<rect x=\"0\" y=\"0\" width=\"" << num(width) << "\" height=\"" << num(height) << "\" fill=\"#ffffff\"/>\n"
       << body << "</svg>\n";
    return os.str();
}

inline void axes(std::ostringstream& os, double ox, double oy, double w, double h, const std::string& title,
                 const std::string& xlabel, const std::string& ylabel) {
    os << "<text x=\"" << num(ox + w / 2) << "\" y=\"" << num(oy - 10) << "\" font-size=\"13\" text-anchor=\"middle\">"
       << escape(title) << "</text>\n";
    os << "<line x1=\"" << num(ox) << "\" y1=\"" << num(oy + h) << "\" x2=\"" << num(ox + w) << "\" y2=\""
       << num(oy + h) << "\" stroke=\"#000000\"/>\n";
    os << "<line x1=\"" << num(ox) << "\" y1=\"" << num(oy) << "\" x2=\"" << num(ox) << "\" y2=\"" << num(oy + h)
       << "\" stroke=\"#000000\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = t / 4.0, y = oy + h - v * h;
        os << "<line x1=\"" << num(ox - 4) << "\" y1=\"" << num(y) << "\" x2=\"" << num(ox) << "\" y2=\"" << num(y)
           << "\" stroke=\"#000000\"/>\n";
        os << "<text x=\"" << num(ox - 6) << "\" y=\"" << num(y + 4) << "\" font-size=\"10\" text-anchor=\"end\">"
           << num(v) << "</text>\n";
    }
    os << "<text x=\"" << num(ox + w / 2) << "\" y=\"" << num(oy + h + 32) << "\" font-size=\"11\" text-anchor=\"middle\">"
       << escape(xlabel) << "</text>\n";
    os << "<text x=\"" << num(ox - 38) << "\" y=\"" << num(oy + h / 2) << "\" font-size=\"11\" text-anchor=\"middle\""
       << " transform=\"rotate(-90 " << num(ox - 38) << ' ' << num(oy + h / 2) << ")\">" << escape(ylabel)
       << "</text>\n";
}

inline void legend(std::ostringstream& os, double x, double y, const std::vector<std::pair<std::string, std::string>>& items) {
    for (std::size_t i = 0; i < items.size(); ++i) {
        const double yy = y + 14.0 * double(i);
        os << "<rect x=\"" << num(x) << "\" y=\"" << num(yy - 8) << "\" width=\"10\" height=\"10\" fill=\""
           << items[i].second << "\"/>\n";
        os << "<text x=\"" << num(x + 14) << "\" y=\"" << num(yy + 1) << "\" font-size=\"10\">" << escape(items[i].first)
           << "</text>\n";
    }
}

/// Grid of line panels sharing a [0,1] y-axis.
inline std::string line_panels(const std::string& title, const std::vector<Panel>& panels, const std::string& xlabel,
                               const std::string& ylabel, const std::optional<std::string>& timestamp) {
    const std::size_t cols = std::min<std::size_t>(3, std::max<std::size_t>(1, panels.size()));
    const std::size_t rows = (panels.size() + cols - 1) / cols;
    std::ostringstream os;
    for (std::size_t pi = 0; pi < panels.size(); ++pi) {
        const auto& panel = panels[pi];
        const double px = double(pi % cols) * kPanelW, py = double(pi / cols) * kPanelH;
        const double ox = px + kMarginL, oy = py + kMarginT;
        const double w = kPanelW - kMarginL - kMarginR, h = kPanelH - kMarginT - kMarginB;
        axes(os, ox, oy, w, h, panel.title, xlabel, ylabel);
        double xmin = 1e300, xmax = -1e300;
        for (const auto& s : panel.series)
            for (double x : s.xs) {
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
            }
        if (xmin > xmax) continue;
        const double span = xmax > xmin ? xmax - xmin : 1.0;
        auto sx = [&](double x) { return ox + (xmax > xmin ? (x - xmin) / span * w : w / 2); };
        auto sy = [&](double y) { return oy + h - std::clamp(y, 0.0, 1.0) * h; };
        std::set<double> ticks;
        for (const auto& s : panel.series) ticks.insert(s.xs.begin(), s.xs.end());
        for (double x : ticks) {
            os << "<text x=\"" << num(sx(x)) << "\" y=\"" << num(oy + h + 14) << "\" font-size=\"10\" text-anchor=\"middle\">"
               << num(x).substr(0, num(x).find('.')) << "</text>\n";
        }
        std::vector<std::pair<std::string, std::string>> items;
        for (std::size_t si = 0; si < panel.series.size(); ++si) {
            const auto& s = panel.series[si];
            const auto& color = palette()[si % palette().size()];
            os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
            for (std::size_t i = 0; i < s.xs.size(); ++i) os << (i ? " " : "") << num(sx(s.xs[i])) << ',' << num(sy(s.ys[i]));
            os << "\"/>\n";
            for (std::size_t i = 0; i < s.xs.size(); ++i)
                os << "<circle cx=\"" << num(sx(s.xs[i])) << "\" cy=\"" << num(sy(s.ys[i])) << "\" r=\"2.5\" fill=\""
                   << color << "\"/>\n";
            items.emplace_back(s.label, color);
        }
        legend(os, ox + w - 90, oy + 8, items);
    }
    return document(double(cols) * kPanelW, double(std::max<std::size_t>(rows, 1)) * kPanelH, title, os.str(), timestamp);
}

struct BarGroup {
    std::string label;
    std::vector<std::pair<double, double>> bars;  // (total, last) per series
};

/// Paired bars per group: outlined total knowledge with the last-layer value
/// filled inside it.
inline std::string paired_bars(const std::string& title, const std::vector<BarGroup>& groups,
                               const std::vector<std::string>& series_labels, const std::string& ylabel,
                               const std::optional<std::string>& timestamp) {
    const double bar_w = 18, gap = 24;
    const double group_w = double(std::max<std::size_t>(series_labels.size(), 1)) * bar_w + gap;
    const double w = std::max(260.0, double(groups.size()) * group_w), h = 220;
    const double ox = kMarginL, oy = kMarginT + 10;
    std::ostringstream os;
    axes(os, ox, oy, w, h, title, "probe", ylabel);
    std::vector<std::pair<std::string, std::string>> items;
    for (std::size_t si = 0; si < series_labels.size(); ++si)
        items.emplace_back(series_labels[si], palette()[si % palette().size()]);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const double gx = ox + gap / 2 + double(gi) * group_w;
        for (std::size_t si = 0; si < groups[gi].bars.size(); ++si) {
            const auto [total, last] = groups[gi].bars[si];
            const auto& color = palette()[si % palette().size()];
            const double x = gx + double(si) * bar_w;
            const double ht = std::clamp(total, 0.0, 1.0) * h, hl = std::clamp(last, 0.0, 1.0) * h;
            os << "<rect x=\"" << num(x) << "\" y=\"" << num(oy + h - ht) << "\" width=\"" << num(bar_w - 2)
               << "\" height=\"" << num(ht) << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n";
            os << "<rect x=\"" << num(x) << "\" y=\"" << num(oy + h - hl) << "\" width=\"" << num(bar_w - 2)
               << "\" height=\"" << num(hl) << "\" fill=\"" << color << "\" fill-opacity=\"0.7\"/>\n";
            os << "<text x=\"" << num(x + bar_w / 2 - 1) << "\" y=\"" << num(oy + h - ht - 3)
               << "\" font-size=\"8\" text-anchor=\"middle\">" << num(total) << "</text>\n";
        }
        os << "<text x=\"" << num(gx + double(groups[gi].bars.size()) * bar_w / 2) << "\" y=\"" << num(oy + h + 14)
           << "\" font-size=\"10\" text-anchor=\"middle\">" << escape(groups[gi].label) << "</text>\n";
    }
    legend(os, ox + w + 10, oy + 8, items);
    return document(ox + w + 120, oy + h + kMarginB + 10, title, os.str(), timestamp);
}

}  // namespace svg

// ---------------------------------------------------------------------------
// Multi-cube report

struct LabeledCube {
    std::string label;
    CorrectnessCube cube;
};

struct ReportOptions {
    std::vector<std::size_t> ks = kDefaultKs;
    std::size_t plot_k = 1;
    /// Relations for the per-relation plot; empty selects the largest ones.
    std::vector<std::string> relations;
    std::size_t max_default_relations = 6;
    /// Embedded in each SVG's <metadata>; nullopt omits it.
    std::optional<std::string> timestamp;
};

inline const std::vector<std::string> kReportFiles = {"layer_curves.svg", "relation_curves.svg", "total_vs_last.svg",
                                                      "forgotten.csv", "total_vs_last.csv"};

/// Throws ComparisonError unless all cubes cover the same probes.
inline void check_comparable(const std::vector<LabeledCube>& cubes) {
    if (cubes.empty()) throw UsageError("report needs at least one cube");
    const auto ref = cubes.front().cube.probes();
    for (std::size_t i = 1; i < cubes.size(); ++i) {
        const auto other = cubes[i].cube.probes();
        if (other == ref) continue;
        std::vector<std::string> only_a, only_b;
        std::set_difference(ref.begin(), ref.end(), other.begin(), other.end(), std::back_inserter(only_a));
        std::set_difference(other.begin(), other.end(), ref.begin(), ref.end(), std::back_inserter(only_b));
        std::string msg = "probe sets differ between '" + cubes.front().label + "' and '" + cubes[i].label + "':";
        for (const auto& p : only_a) msg += " only in " + cubes.front().label + ": " + p + ";";
        for (const auto& p : only_b) msg += " only in " + cubes[i].label + ": " + p + ";";
        throw ComparisonError(msg);
    }
}

namespace detail {

inline std::vector<double> as_doubles(const std::vector<int>& v) { return {v.begin(), v.end()}; }

inline std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

/// (probe, relation) pairs for the relation plot.
inline std::vector<std::pair<std::string, std::string>> select_relations(const CorrectnessCube& cube,
                                                                         const ReportOptions& opt) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& probe : cube.probes()) {
        if (!cube.relation_organized(probe)) continue;
        const auto means = per_relation_means(cube, probe, opt.plot_k);
        if (!opt.relations.empty()) {
            for (const auto& r : opt.relations)
                if (means.count(r)) out.emplace_back(probe, r);
            continue;
        }
        std::vector<std::pair<std::size_t, std::string>> by_count;
        for (const auto& [r, c] : means) by_count.emplace_back(c.count, r);
        std::sort(by_count.begin(), by_count.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        for (std::size_t i = 0; i < std::min(opt.max_default_relations, by_count.size()); ++i)
            out.emplace_back(probe, by_count[i].second);
    }
    return out;
}

}  // namespace detail

struct ReportArtifacts {
    std::map<std::string, std::string> files;  // file name -> contents
};

inline ReportArtifacts render_report(const std::vector<LabeledCube>& cubes, const ReportOptions& opt) {
    check_comparable(cubes);
    const auto probes = cubes.front().cube.probes();
    const std::size_t k = opt.plot_k;
    const std::string klabel = "P@" + std::to_string(k);
    ReportArtifacts art;

    std::vector<svg::Panel> curve_panels;
    for (const auto& probe : probes) {
        svg::Panel panel{probe, {}};
        for (const auto& lc : cubes)
            panel.series.push_back({lc.label, detail::as_doubles(lc.cube.layers()), layer_curve(lc.cube, probe, k)});
        curve_panels.push_back(std::move(panel));
    }
    art.files["layer_curves.svg"] = svg::line_panels(klabel + " per layer", curve_panels, "layer", klabel, opt.timestamp);

    std::vector<svg::Panel> rel_panels;
    for (const auto& [probe, rel] : detail::select_relations(cubes.front().cube, opt)) {
        svg::Panel panel{probe + ": " + rel, {}};
        for (const auto& lc : cubes) {
            const auto means = per_relation_means(lc.cube, probe, k);
            auto it = means.find(rel);
            if (it == means.end()) continue;
            panel.series.push_back({lc.label, detail::as_doubles(it->second.layers), it->second.means});
        }
        rel_panels.push_back(std::move(panel));
    }
    art.files["relation_curves.svg"] =
        svg::line_panels("Per-relation " + klabel + " per layer", rel_panels, "layer", klabel, opt.timestamp);

    std::vector<svg::BarGroup> groups;
    std::vector<std::string> labels;
    for (const auto& lc : cubes) labels.push_back(lc.label);
    for (const auto& probe : probes) {
        svg::BarGroup g{probe, {}};
        for (const auto& lc : cubes) {
            const auto curve = layer_curve(lc.cube, probe, k);
            g.bars.emplace_back(total_precision_at_k(lc.cube, probe, k).union_semantics, curve.back());
        }
        groups.push_back(std::move(g));
    }
    art.files["total_vs_last.svg"] =
        svg::paired_bars("Total " + klabel + " (outline) vs last layer (filled)", groups, labels, klabel, opt.timestamp);

    std::ostringstream forgotten, totals;
    forgotten << "label,probe,k,relations,forgotten,fraction\n";
    totals << "label,probe,k,last_layer,total_union,total_max_of_means\n";
    for (const auto& lc : cubes) {
        const bool multi_layer = lc.cube.layers().size() >= 2;
        for (const auto& probe : probes) {
            for (auto kk : opt.ks) {
                const auto curve = layer_curve(lc.cube, probe, kk);
                const auto t = total_precision_at_k(lc.cube, probe, kk);
                totals << detail::csv_field(lc.label) << ',' << detail::csv_field(probe) << ',' << kk << ','
                       << detail::fmt6(curve.back()) << ',' << detail::fmt6(t.union_semantics) << ','
                       << detail::fmt6(t.max_of_means) << '\n';
                if (!multi_layer || !lc.cube.relation_organized(probe)) continue;
                const auto means = per_relation_means(lc.cube, probe, kk);
                std::size_t n_forgotten = 0;
                for (const auto& [r, c] : means) n_forgotten += is_forgotten(c);
                forgotten << detail::csv_field(lc.label) << ',' << detail::csv_field(probe) << ',' << kk << ','
                          << means.size() << ',' << n_forgotten << ',' << detail::fmt6(forgotten_fraction(means)) << '\n';
            }
        }
    }
    art.files["forgotten.csv"] = forgotten.str();
    art.files["total_vs_last.csv"] = totals.str();
    return art;
}

inline std::vector<std::filesystem::path> write_report(const std::vector<LabeledCube>& cubes, const ReportOptions& opt,
                                                       const std::filesystem::path& out_dir) {
    const auto art = render_report(cubes, opt);
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;
    for (const auto& [name, content] : art.files) {
        const auto path = out_dir / name;
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path.string());
        out << content;
        written.push_back(path);
    }
    return written;
}

}  // namespace lprobe

#endif
