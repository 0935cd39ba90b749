#ifndef LPROBE_FIXTURE_HPP
#define LPROBE_FIXTURE_HPP

// Reference-activation fixtures written by the exporter:
//
//   {"source": "...",
//    "inputs": [{"text": "...", "ids": [101, ...],
//                "final_layer": [[...hidden...], ...],
//                "layers": [[[...]]]}]}           // optional, layers 1..L
//
// Values are decimal text with 17 significant digits.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "lprobe/checkpoint.hpp"
#include "lprobe/encoder.hpp"
#include "lprobe/errors.hpp"

namespace lprobe {

inline constexpr double kParityTolerance = 1e-3;

struct FixtureInput {
    std::string text;
    std::vector<int> ids;
    Tensor final_layer;
    std::vector<Tensor> layers;
};

struct ReferenceFixture {
    std::string source;
    std::vector<FixtureInput> inputs;
};

namespace detail {

inline Tensor matrix_from_json(const json& rows, const std::string& what) {
    if (!rows.is_array() || rows.empty() || !rows.front().is_array()) {
        throw FormatError(what + ": expected a non-empty array of rows");
    }
    const std::size_t n = rows.size(), d = rows.front().size();
    if (d == 0) throw FormatError(what + ": empty row");
    Tensor t({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        if (rows[i].size() != d) throw FormatError(what + ": ragged rows");
        for (std::size_t j = 0; j < d; ++j) t(i, j) = rows[i][j].get<float>();
    }
    if (!t.all_finite()) throw FormatError(what + ": non-finite value");
    return t;
}

inline json matrix_to_json(const Tensor& t) {
    json rows = json::array();
    for (std::size_t i = 0; i < t.rows(); ++i) {
        json r = json::array();
        for (float v : t.row(i)) r.push_back(double(v));
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace detail

inline ReferenceFixture fixture_from_json(const json& j) {
    try {
        ReferenceFixture f;
        f.source = j.value("source", std::string());
        for (const auto& in : j.at("inputs")) {
            FixtureInput x;
            x.text = in.value("text", std::string());
            x.ids = in.at("ids").get<std::vector<int>>();
            const std::string what = "fixture input '" + x.text + "'";
            x.final_layer = detail::matrix_from_json(in.at("final_layer"), what);
            if (x.final_layer.rows() != x.ids.size()) throw FormatError(what + ": rows differ from ids");
            if (in.contains("layers"))
                for (const auto& l : in.at("layers")) x.layers.push_back(detail::matrix_from_json(l, what));
            f.inputs.push_back(std::move(x));
        }
        return f;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed reference fixture: ") + e.what());
    }
}

inline ReferenceFixture load_fixture(const std::filesystem::path& path) {
    const std::string text = read_file_bytes(path);
    try {
        return fixture_from_json(json::parse(text));
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline json to_json(const ReferenceFixture& f) {
    json inputs = json::array();
    for (const auto& x : f.inputs) {
        json in = {{"text", x.text}, {"ids", x.ids}, {"final_layer", detail::matrix_to_json(x.final_layer)}};
        if (!x.layers.empty()) {
            json ls = json::array();
            for (const auto& l : x.layers) ls.push_back(detail::matrix_to_json(l));
            in["layers"] = std::move(ls);
        }
        inputs.push_back(std::move(in));
    }
    return {{"source", f.source}, {"inputs", std::move(inputs)}};
}

struct ParityResult {
    std::size_t inputs = 0;
    double max_abs_diff = 0;
    std::string worst;  // text of the input with the largest deviation
    bool ok(double tol = kParityTolerance) const { return max_abs_diff <= tol; }
};

/// Runs the encoder on every fixture input and compares final-layer states
/// (and per-layer states when the fixture has them).
inline ParityResult check_parity(const ReferenceFixture& f, const Checkpoint& ckpt) {
    ParityResult r;
    for (const auto& x : f.inputs) {
        const LayerStates s = run_encoder(x.ids, ckpt);
        if (s.num_layers() == 0) throw ValidationError("parity check needs at least one encoder layer");
        auto compare = [&](const Tensor& got, const Tensor& want) {
            if (got.shape() != want.shape()) {
                throw DimensionError("fixture shape " + shape_str(want.shape()) + " vs encoder " +
                                     shape_str(got.shape()));
            }
            for (std::size_t k = 0; k < got.numel(); ++k) {
                const double d = std::abs(double(got[k]) - double(want[k]));
                if (d > r.max_abs_diff) {
                    r.max_abs_diff = d;
                    r.worst = x.text;
                }
            }
        };
        compare(s.states.back(), x.final_layer);
        if (!x.layers.empty()) {
            if (x.layers.size() != s.num_layers()) throw DimensionError("fixture layer count differs from encoder");
            for (std::size_t l = 0; l < x.layers.size(); ++l) compare(s.states[l], x.layers[l]);
        }
        ++r.inputs;
    }
    return r;
}

}  // namespace lprobe

#endif
