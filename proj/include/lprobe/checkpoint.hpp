#ifndef LPROBE_CHECKPOINT_HPP
#define LPROBE_CHECKPOINT_HPP

// LPKT named-tensor container.
//
// Layout (all integers little-endian):
//   "LPKT"            4 bytes magic
//   version           u32 (currently 1)
//   header_len        u64
//   header            UTF-8 JSON object, header_len bytes, keys sorted:
//                       "config"      encoder configuration object
//                       "provenance"  free-form metadata object
//                       <tensor name> {"dtype":"f32","nbytes":N,"offset":O,"shape":[...]}
//   data region       raw little-endian IEEE-754 f32 values; offsets are
//                     relative to the start of this region
//
// The writer lays tensors out contiguously in sorted name order, so the
// same checkpoint always serializes to the same bytes.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "lprobe/errors.hpp"
#include "lprobe/tensor.hpp"

namespace lprobe {

using json = nlohmann::json;

struct EncoderConfig {
    int num_layers = 12;
    int hidden_dim = 768;
    int num_heads = 12;
    int ffn_dim = 3072;
    int vocab_size = 30522;
    int max_positions = 512;
    int type_vocab = 2;
    double ln_eps = kDefaultLayerNormEps;
    GeluVariant gelu = GeluVariant::tanh;

    static EncoderConfig bert_base() { return {}; }

    int head_dim() const { return hidden_dim / num_heads; }

    /// Throws ValidationError when counts are non-positive or the hidden size
    /// does not split evenly over heads.
    void validate() const {
        auto positive = [](int v, const char* name) {
            if (v < 1) throw ValidationError(std::string("encoder config: ") + name + " must be >= 1");
        };
        positive(num_layers, "num_layers");
        positive(hidden_dim, "hidden_dim");
        positive(num_heads, "num_heads");
        positive(ffn_dim, "ffn_dim");
        positive(vocab_size, "vocab_size");
        positive(max_positions, "max_positions");
        positive(type_vocab, "type_vocab");
        if (hidden_dim % num_heads != 0) {
            throw ValidationError("encoder config: hidden_dim " + std::to_string(hidden_dim) +
                                  " not divisible by num_heads " + std::to_string(num_heads));
        }
        if (!(ln_eps > 0)) throw ValidationError("encoder config: ln_eps must be positive");
    }

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline json to_json(const EncoderConfig& c) {
    return json{{"num_layers", c.num_layers},   {"hidden_dim", c.hidden_dim},
                {"num_heads", c.num_heads},     {"ffn_dim", c.ffn_dim},
                {"vocab_size", c.vocab_size},   {"max_positions", c.max_positions},
                {"type_vocab", c.type_vocab},   {"ln_eps", c.ln_eps},
                {"hidden_act", c.gelu == GeluVariant::tanh ? "gelu_tanh" : "gelu_erf"}};
}

inline EncoderConfig encoder_config_from_json(const json& j) {
    try {
        EncoderConfig c;
        c.num_layers = j.at("num_layers").get<int>();
        c.hidden_dim = j.at("hidden_dim").get<int>();
        c.num_heads = j.at("num_heads").get<int>();
        c.ffn_dim = j.at("ffn_dim").get<int>();
        c.vocab_size = j.at("vocab_size").get<int>();
        c.max_positions = j.at("max_positions").get<int>();
        c.type_vocab = j.at("type_vocab").get<int>();
        c.ln_eps = j.at("ln_eps").get<double>();
        const std::string act = j.value("hidden_act", "gelu_tanh");
        if (act == "gelu_tanh") {
            c.gelu = GeluVariant::tanh;
        } else if (act == "gelu_erf" || act == "gelu") {
            c.gelu = GeluVariant::erf;
        } else {
            throw FormatError("unknown hidden_act '" + act + "'");
        }
        return c;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed encoder config: ") + e.what());
    }
}

struct Checkpoint {
    EncoderConfig config;
    std::map<std::string, Tensor> tensors;
    json provenance = json::object();

    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw SchemaError("checkpoint has no tensor '" + name + "'");
        return it->second;
    }
    bool contains(const std::string& name) const { return tensors.count(name) != 0; }

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// ---------------------------------------------------------------------------
// Canonical tensor names

namespace names {

inline const std::string token_embeddings = "embeddings.token";
inline const std::string position_embeddings = "embeddings.position";
inline const std::string segment_embeddings = "embeddings.segment";
inline const std::string embedding_ln_gamma = "embeddings.ln.gamma";
inline const std::string embedding_ln_beta = "embeddings.ln.beta";

inline const std::string head_dense_weight = "head.dense.weight";
inline const std::string head_dense_bias = "head.dense.bias";
inline const std::string head_ln_gamma = "head.ln.gamma";
inline const std::string head_ln_beta = "head.ln.beta";
inline const std::string head_proj_weight = "head.proj.weight";
inline const std::string head_proj_bias = "head.proj.bias";

/// Name of a per-layer tensor; layers are 1-based.
inline std::string layer(int l, const std::string& suffix) {
    return "layer." + std::to_string(l) + "." + suffix;
}

inline const std::vector<std::string>& layer_suffixes() {
    static const std::vector<std::string> s = {
        "attn.query.weight", "attn.query.bias", "attn.key.weight",   "attn.key.bias",
        "attn.value.weight", "attn.value.bias", "attn.output.weight", "attn.output.bias",
        "attn_ln.gamma",     "attn_ln.beta",    "ffn.in.weight",      "ffn.in.bias",
        "ffn.out.weight",    "ffn.out.bias",    "ffn_ln.gamma",       "ffn_ln.beta",
    };
    return s;
}

inline const std::vector<std::string>& head_names() {
    static const std::vector<std::string> s = {head_dense_weight, head_dense_bias, head_ln_gamma,
                                               head_ln_beta,      head_proj_weight, head_proj_bias};
    return s;
}

}  // namespace names

struct SchemaEntry {
    std::string name;
    Shape shape;
    bool head = false;  // part of the optional pretrained decoding head group
};

/// Decoding-head tensors for a given hidden/vocab size.
inline std::vector<SchemaEntry> head_schema(std::size_t hidden, std::size_t vocab) {
    return {{names::head_dense_weight, {hidden, hidden}, true}, {names::head_dense_bias, {hidden}, true},
            {names::head_ln_gamma, {hidden}, true},             {names::head_ln_beta, {hidden}, true},
            {names::head_proj_weight, {vocab, hidden}, true},   {names::head_proj_bias, {vocab}, true}};
}

/// Every tensor an encoder checkpoint for `config` carries.
inline std::vector<SchemaEntry> checkpoint_schema(const EncoderConfig& config) {
    const auto h = std::size_t(config.hidden_dim), f = std::size_t(config.ffn_dim),
               v = std::size_t(config.vocab_size);
    std::vector<SchemaEntry> s = {
        {names::token_embeddings, {v, h}},
        {names::position_embeddings, {std::size_t(config.max_positions), h}},
        {names::segment_embeddings, {std::size_t(config.type_vocab), h}},
        {names::embedding_ln_gamma, {h}},
        {names::embedding_ln_beta, {h}},
    };
    for (int l = 1; l <= config.num_layers; ++l) {
        for (const char* p : {"attn.query", "attn.key", "attn.value", "attn.output"}) {
            s.push_back({names::layer(l, std::string(p) + ".weight"), {h, h}});
            s.push_back({names::layer(l, std::string(p) + ".bias"), {h}});
        }
        s.push_back({names::layer(l, "attn_ln.gamma"), {h}});
        s.push_back({names::layer(l, "attn_ln.beta"), {h}});
        s.push_back({names::layer(l, "ffn.in.weight"), {f, h}});
        s.push_back({names::layer(l, "ffn.in.bias"), {f}});
        s.push_back({names::layer(l, "ffn.out.weight"), {h, f}});
        s.push_back({names::layer(l, "ffn.out.bias"), {h}});
        s.push_back({names::layer(l, "ffn_ln.gamma"), {h}});
        s.push_back({names::layer(l, "ffn_ln.beta"), {h}});
    }
    auto head = head_schema(h, v);
    s.insert(s.end(), head.begin(), head.end());
    return s;
}

struct ValidationReport {
    std::vector<std::string> missing;
    std::vector<std::string> misshaped;  // "name: expected [..], got [..]"
    std::vector<std::string> extra;      // warnings only
    bool has_pretrained_head = false;

    bool ok() const { return missing.empty() && misshaped.empty(); }

    std::string summary() const {
        std::ostringstream os;
        auto list = [&](const char* label, const std::vector<std::string>& v) {
            if (v.empty()) return;
            os << label << ":";
            for (const auto& s : v) os << " " << s << ";";
            os << " ";
        };
        list("missing", missing);
        list("mis-shaped", misshaped);
        list("extra (warning)", extra);
        if (ok() && extra.empty()) os << "schema ok";
        return os.str();
    }
};

/// Checks names and shapes against `schema`. Head-group entries are optional
/// as a group: absent entirely is fine, partially present is a failure.
/// Unknown names are reported as warnings. Result lists are sorted.
inline ValidationReport validate_against(const std::vector<SchemaEntry>& schema,
                                         const std::map<std::string, Shape>& present) {
    ValidationReport r;
    bool any_head = false;
    for (const auto& e : schema)
        if (e.head && present.count(e.name)) any_head = true;
    r.has_pretrained_head = any_head;

    std::map<std::string, const SchemaEntry*> by_name;
    for (const auto& e : schema) by_name[e.name] = &e;

    for (const auto& e : schema) {
        auto it = present.find(e.name);
        if (it == present.end()) {
            if (!e.head || any_head) r.missing.push_back(e.name);
        } else if (it->second != e.shape) {
            r.misshaped.push_back(e.name + ": expected " + shape_str(e.shape) + ", got " + shape_str(it->second));
        }
    }
    for (const auto& [name, shape] : present)
        if (!by_name.count(name)) r.extra.push_back(name);
    std::sort(r.missing.begin(), r.missing.end());
    std::sort(r.misshaped.begin(), r.misshaped.end());
    return r;
}

inline ValidationReport validate_schema(const EncoderConfig& config, const std::map<std::string, Shape>& present) {
    return validate_against(checkpoint_schema(config), present);
}

inline std::map<std::string, Shape> shapes_of(const std::map<std::string, Tensor>& tensors) {
    std::map<std::string, Shape> out;
    for (const auto& [n, t] : tensors) out[n] = t.shape();
    return out;
}

// ---------------------------------------------------------------------------
// Byte-level encode/decode

inline constexpr char kLpktMagic[4] = {'L', 'P', 'K', 'T'};
inline constexpr std::uint32_t kLpktVersion = 1;
inline constexpr std::size_t kLpktPreamble = 16;

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class U>
U get_le(const unsigned char* p) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(p[i]) << (8 * i);
    return v;
}

inline bool is_reserved_key(const std::string& name) { return name == "config" || name == "provenance"; }

}  // namespace detail

/// Serializes without schema checks (format rules only).
inline std::string encode_lpkt(const Checkpoint& ckpt) {
    json header = json::object();
    header["config"] = to_json(ckpt.config);
    header["provenance"] = ckpt.provenance.is_null() ? json::object() : ckpt.provenance;
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        if (detail::is_reserved_key(name)) throw ValidationError("tensor name '" + name + "' is reserved");
        if (t.empty()) throw ValidationError("tensor '" + name + "' is empty");
        const std::uint64_t nbytes = std::uint64_t(t.numel()) * 4;
        header[name] = {{"dtype", "f32"}, {"shape", t.shape()}, {"offset", offset}, {"nbytes", nbytes}};
        offset += nbytes;
    }
    const std::string header_text = header.dump();

    std::string out;
    out.reserve(kLpktPreamble + header_text.size() + offset);
    out.append(kLpktMagic, 4);
    detail::put_le<std::uint32_t>(out, kLpktVersion);
    detail::put_le<std::uint64_t>(out, header_text.size());
    out += header_text;
    for (const auto& [name, t] : ckpt.tensors)
        for (float v : t.data()) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

inline Checkpoint decode_lpkt(const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kLpktMagic, 4) != 0) {
        throw FormatError("not an LPKT file (bad magic)");
    }
    if (bytes.size() < kLpktPreamble) throw CorruptionError("LPKT preamble truncated");
    const auto* base = reinterpret_cast<const unsigned char*>(bytes.data());
    const auto version = detail::get_le<std::uint32_t>(base + 4);
    if (version != kLpktVersion) throw FormatError("unsupported LPKT version " + std::to_string(version));
    const auto header_len = detail::get_le<std::uint64_t>(base + 8);
    if (header_len > bytes.size() - kLpktPreamble) throw CorruptionError("LPKT header truncated");

    json header;
    try {
        header = json::parse(bytes.begin() + kLpktPreamble, bytes.begin() + kLpktPreamble + header_len);
    } catch (const json::exception& e) {
        throw FormatError(std::string("LPKT header is not valid JSON: ") + e.what());
    }
    if (!header.is_object() || !header.contains("config")) throw FormatError("LPKT header lacks config");

    Checkpoint ckpt;
    ckpt.config = encoder_config_from_json(header.at("config"));
    ckpt.provenance = header.value("provenance", json::object());

    const std::size_t data_start = kLpktPreamble + header_len;
    const std::uint64_t data_len = bytes.size() - data_start;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> extents;
    for (const auto& [name, desc] : header.items()) {
        if (detail::is_reserved_key(name)) continue;
        Shape shape;
        std::uint64_t offset = 0, nbytes = 0;
        try {
            if (desc.at("dtype").get<std::string>() != "f32") {
                throw FormatError("tensor '" + name + "' has unsupported dtype");
            }
            shape = desc.at("shape").get<Shape>();
            offset = desc.at("offset").get<std::uint64_t>();
            nbytes = desc.at("nbytes").get<std::uint64_t>();
        } catch (const json::exception& e) {
            throw FormatError("malformed descriptor for tensor '" + name + "': " + e.what());
        }
        if (shape.empty() || nbytes != shape_numel(shape) * 4) {
            throw FormatError("tensor '" + name + "' nbytes inconsistent with shape " + shape_str(shape));
        }
        if (offset > data_len || nbytes > data_len - offset) {
            throw CorruptionError("tensor '" + name + "' extends past the end of the data region (truncated file)");
        }
        extents.emplace_back(offset, nbytes);
        std::vector<float> values(shape_numel(shape));
        const unsigned char* p = base + data_start + offset;
        for (std::size_t i = 0; i < values.size(); ++i)
            values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(p + 4 * i));
        Tensor t(std::move(shape), std::move(values));
        if (!t.all_finite()) throw CorruptionError("tensor '" + name + "' contains NaN/Inf");
        ckpt.tensors.emplace(name, std::move(t));
    }
    std::sort(extents.begin(), extents.end());
    std::uint64_t end = 0;
    for (const auto& [off, len] : extents) {
        if (off < end) throw CorruptionError("LPKT tensor extents overlap");
        end = off + len;
    }
    if (end != data_len) throw CorruptionError("LPKT data region has trailing bytes");
    return ckpt;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

/// Format-level read; no schema check.
inline Checkpoint read_lpkt(const std::filesystem::path& path) { return decode_lpkt(read_file_bytes(path)); }

inline void write_lpkt(const Checkpoint& ckpt, const std::filesystem::path& path) {
    write_file_bytes(path, encode_lpkt(ckpt));
}

inline void require_valid(const Checkpoint& ckpt, ValidationReport* report) {
    ckpt.config.validate();
    ValidationReport r = validate_schema(ckpt.config, shapes_of(ckpt.tensors));
    if (report) *report = r;
    if (!r.ok()) throw SchemaError("checkpoint fails schema validation: " + r.summary());
}

/// Reads and validates an encoder checkpoint. Extra tensors are tolerated and
/// surface in `report->extra`.
inline Checkpoint read_checkpoint(const std::filesystem::path& path, ValidationReport* report = nullptr) {
    Checkpoint ckpt = read_lpkt(path);
    require_valid(ckpt, report);
    return ckpt;
}

/// Validates, then writes. Nothing touches disk if validation fails.
inline void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    require_valid(ckpt, nullptr);
    write_lpkt(ckpt, path);
}

}  // namespace lprobe

#endif
