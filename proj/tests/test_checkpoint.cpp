#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <random>
#include <set>

#include "lprobe/checkpoint.hpp"
#include "support.hpp"

using namespace lprobe;
using namespace lptest;

namespace {

// Independent enumeration of the tensor names an encoder checkpoint carries.
std::set<std::string> expected_names(int layers, bool head) {
    std::set<std::string> s = {"embeddings.token", "embeddings.position", "embeddings.segment",
                               "embeddings.ln.gamma", "embeddings.ln.beta"};
    for (int l = 1; l <= layers; ++l) {
        const std::string p = "layer." + std::to_string(l) + ".";
        for (const char* m : {"query", "key", "value", "output"}) {
            s.insert(p + "attn." + m + ".weight");
            s.insert(p + "attn." + m + ".bias");
        }
        for (const char* m : {"in", "out"}) {
            s.insert(p + "ffn." + m + ".weight");
            s.insert(p + "ffn." + m + ".bias");
        }
        for (const char* ln : {"attn_ln", "ffn_ln"}) {
            s.insert(p + ln + ".gamma");
            s.insert(p + ln + ".beta");
        }
    }
    if (head)
        for (const char* n : {"head.dense.weight", "head.dense.bias", "head.ln.gamma", "head.ln.beta",
                              "head.proj.weight", "head.proj.bias"})
            s.insert(n);
    return s;
}

std::uint64_t le64(const std::string& b, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[at + i]);
    return v;
}

}  // namespace

TEST(Checkpoint, OneTensorRoundTripIsByteIdentical) {
    TempDir dir;
    Checkpoint c;
    c.config = tiny_config();
    c.provenance = {{"source", "unit"}};
    c.tensors["only"] = Tensor::matrix({{1.5f, -2.25f}, {0.0f, 3e-8f}});
    write_lpkt(c, dir / "a.lpkt");
    const Checkpoint back = read_lpkt(dir / "a.lpkt");
    EXPECT_EQ(back, c);
    write_lpkt(back, dir / "b.lpkt");
    EXPECT_EQ(read_file(dir / "a.lpkt"), read_file(dir / "b.lpkt"));
}

TEST(Checkpoint, BadMagicIsFormatError) {
    TempDir dir;
    Checkpoint c;
    c.tensors["x"] = Tensor({2}, 1.0f);
    std::string bytes = encode_lpkt(c);
    std::memcpy(bytes.data(), "XXXX", 4);
    write_file(dir / "bad.lpkt", bytes);
    EXPECT_THROW(read_lpkt(dir / "bad.lpkt"), FormatError);
    EXPECT_THROW(decode_lpkt(""), FormatError);
}

TEST(Checkpoint, TruncationIsCorruption) {
    const std::string bytes = encode_lpkt(random_checkpoint(tiny_config(), 1));
    const std::size_t header_end = kLpktPreamble + le64(bytes, 8);
    for (std::size_t cut : {std::size_t(10), header_end - 3, header_end + 5, bytes.size() - 1}) {
        EXPECT_THROW(decode_lpkt(bytes.substr(0, cut)), CorruptionError) << cut;
    }
    EXPECT_THROW(decode_lpkt(bytes + std::string(4, '\0')), CorruptionError);
}

TEST(Checkpoint, NonFiniteValuesRejectedOnLoad) {
    Checkpoint c;
    c.tensors["x"] = Tensor({3}, 1.0f);
    c.tensors["x"][1] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(decode_lpkt(encode_lpkt(c)), CorruptionError);
}

TEST(Checkpoint, TinyConfigRoundTripsWithFullSchema) {
    TempDir dir;
    for (bool head : {false, true}) {
        const Checkpoint c = random_checkpoint(tiny_config(), 42, head);
        std::set<std::string> got;
        for (const auto& [n, t] : c.tensors) got.insert(n);
        EXPECT_EQ(got, expected_names(2, head));
        EXPECT_EQ(got.size(), head ? 2u * 16 + 11 : 2u * 16 + 5);

        write_checkpoint(c, dir / "tiny.lpkt");
        ValidationReport report;
        const Checkpoint back = read_checkpoint(dir / "tiny.lpkt", &report);
        EXPECT_TRUE(report.ok()) << report.summary();
        EXPECT_EQ(report.has_pretrained_head, head);
        EXPECT_EQ(back, c);
    }
}

TEST(Checkpoint, WritingTwiceGivesIdenticalBytes) {
    TempDir dir;
    const Checkpoint c = random_checkpoint(tiny_config(), 7);
    write_checkpoint(c, dir / "a.lpkt");
    write_checkpoint(c, dir / "b.lpkt");
    EXPECT_EQ(read_file(dir / "a.lpkt"), read_file(dir / "b.lpkt"));
}

TEST(Checkpoint, EmptyMappingFailsBeforeAnyWrite) {
    TempDir dir;
    Checkpoint c;
    c.config = tiny_config();
    EXPECT_THROW(write_checkpoint(c, dir / "empty.lpkt"), ValidationError);
    EXPECT_FALSE(fs::exists(dir / "empty.lpkt"));
}

TEST(Checkpoint, HeaderWalkOffsetsMonotoneAndContiguous) {
    const Checkpoint c = random_checkpoint(tiny_config(), 3);
    const std::string bytes = encode_lpkt(c);
    ASSERT_EQ(bytes.substr(0, 4), "LPKT");
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);
    EXPECT_EQ(bytes.substr(5, 3), std::string(3, '\0'));
    const std::uint64_t hlen = le64(bytes, 8);
    const json header = json::parse(bytes.substr(16, hlen));
    ASSERT_TRUE(header.contains("config"));
    ASSERT_TRUE(header.contains("provenance"));

    std::vector<std::string> keys;
    for (const auto& [k, v] : header.items()) keys.push_back(k);
    EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));

    std::vector<std::pair<std::uint64_t, std::uint64_t>> ext;
    for (const auto& [k, v] : header.items()) {
        if (k == "config" || k == "provenance") continue;
        EXPECT_EQ(v.at("dtype"), "f32");
        std::uint64_t n = 4;
        for (auto d : v.at("shape")) n *= d.get<std::uint64_t>();
        EXPECT_EQ(v.at("nbytes").get<std::uint64_t>(), n) << k;
        ext.emplace_back(v.at("offset").get<std::uint64_t>(), n);
    }
    std::sort(ext.begin(), ext.end());
    std::uint64_t end = 0;
    for (const auto& [off, n] : ext) {
        EXPECT_GE(off, end);
        end = off + n;
    }
    EXPECT_EQ(end, bytes.size() - 16 - hlen);

    // Values are little-endian f32 at their recorded offsets.
    const auto& d = header.at("embeddings.token");
    const std::size_t at = 16 + hlen + d.at("offset").get<std::size_t>();
    float first;
    unsigned char raw[4];
    for (int i = 0; i < 4; ++i) raw[i] = static_cast<unsigned char>(bytes[at + i]);
    const std::uint32_t u = raw[0] | (raw[1] << 8) | (raw[2] << 16) | (std::uint32_t(raw[3]) << 24);
    std::memcpy(&first, &u, 4);
    EXPECT_EQ(first, c.at("embeddings.token")[0]);
}

TEST(Schema, BertBaseNameSetPasses) {
    const EncoderConfig base = EncoderConfig::bert_base();
    const auto schema = checkpoint_schema(base);
    EXPECT_EQ(schema.size(), 12u * 16 + 11);
    std::map<std::string, Shape> present;
    for (const auto& e : schema) present[e.name] = e.shape;
    std::set<std::string> names;
    for (const auto& [n, s] : present) names.insert(n);
    EXPECT_EQ(names, expected_names(12, true));
    const auto r = validate_schema(base, present);
    EXPECT_TRUE(r.ok()) << r.summary();
    EXPECT_TRUE(r.extra.empty());
    EXPECT_EQ(present.at("layer.7.ffn.in.weight"), (Shape{3072, 768}));
    EXPECT_EQ(present.at("head.proj.weight"), (Shape{30522, 768}));
}

TEST(Schema, MissingLayerSevenFfnBiasNamedExactly) {
    const EncoderConfig base = EncoderConfig::bert_base();
    for (const char* victim : {"layer.7.ffn.out.bias", "layer.7.ffn.in.bias"}) {
        std::map<std::string, Shape> present;
        for (const auto& e : checkpoint_schema(base)) present[e.name] = e.shape;
        present.erase(victim);
        const auto r = validate_schema(base, present);
        EXPECT_FALSE(r.ok());
        EXPECT_EQ(r.missing, std::vector<std::string>{victim});
        EXPECT_TRUE(r.misshaped.empty());
    }
}

TEST(Schema, MisshapedTensorReported) {
    const EncoderConfig cfg = tiny_config();
    std::map<std::string, Shape> present;
    for (const auto& e : checkpoint_schema(cfg)) present[e.name] = e.shape;
    present["layer.2.attn.key.weight"] = {8, 4};
    const auto r = validate_schema(cfg, present);
    ASSERT_EQ(r.misshaped.size(), 1u);
    EXPECT_NE(r.misshaped[0].find("layer.2.attn.key.weight"), std::string::npos);
    EXPECT_NE(r.misshaped[0].find("[8,4]"), std::string::npos);
}

TEST(Schema, ExtraTensorIsWarningOnly) {
    TempDir dir;
    Checkpoint c = random_checkpoint(tiny_config(), 5);
    c.tensors["qa_outputs.weight"] = Tensor({2, 8}, 0.5f);
    write_checkpoint(c, dir / "extra.lpkt");
    ValidationReport r;
    const Checkpoint back = read_checkpoint(dir / "extra.lpkt", &r);
    EXPECT_TRUE(r.ok());
    EXPECT_EQ(r.extra, std::vector<std::string>{"qa_outputs.weight"});
    EXPECT_NE(r.summary().find("qa_outputs.weight"), std::string::npos);
    EXPECT_TRUE(back.contains("qa_outputs.weight"));
}

TEST(Schema, PartialHeadGroupFails) {
    std::map<std::string, Shape> present;
    const EncoderConfig cfg = tiny_config();
    for (const auto& e : checkpoint_schema(cfg)) present[e.name] = e.shape;
    present.erase("head.proj.bias");
    const auto r = validate_schema(cfg, present);
    EXPECT_EQ(r.missing, std::vector<std::string>{"head.proj.bias"});
}

TEST(Schema, ValidationIsOrderIndependent) {
    const EncoderConfig cfg = tiny_config();
    auto schema = checkpoint_schema(cfg);
    std::mt19937_64 gen(99);
    std::optional<ValidationReport> first;
    for (int trial = 0; trial < 20; ++trial) {
        std::shuffle(schema.begin(), schema.end(), gen);
        std::map<std::string, Shape> present;
        // Drop the same two names and add one extra each time, inserted in shuffled order.
        for (const auto& e : schema)
            if (e.name != "layer.1.attn.value.bias" && e.name != "embeddings.ln.beta") present[e.name] = e.shape;
        present["zz.extra"] = {1};
        present["layer.2.ffn.out.weight"] = {3, 3};
        std::vector<SchemaEntry> shuffled = schema;
        std::shuffle(shuffled.begin(), shuffled.end(), gen);
        const auto r = validate_against(shuffled, present);
        if (!first) {
            first = r;
            continue;
        }
        EXPECT_EQ(r.missing, first->missing);
        EXPECT_EQ(r.misshaped, first->misshaped);
        EXPECT_EQ(r.extra, first->extra);
        EXPECT_EQ(r.summary(), first->summary());
    }
}

TEST(Schema, HeadParameterCount) {
    EXPECT_EQ(head_parameter_count(768, 30522), 24063546u);
    // The count quoted for the original head differs; the schema follows the architecture.
    EXPECT_NE(head_parameter_count(768, 30522), 24459834u);
    std::size_t n = 0;
    for (const auto& e : head_schema(768, 30522)) n += shape_numel(e.shape);
    EXPECT_EQ(n, head_parameter_count(768, 30522));
}

TEST(Config, ValidationRules) {
    EXPECT_NO_THROW(EncoderConfig::bert_base().validate());
    EncoderConfig c = tiny_config();
    c.num_heads = 3;
    EXPECT_THROW(c.validate(), ValidationError);
    c = tiny_config();
    c.vocab_size = 0;
    EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Config, JsonRoundTripAndActivation) {
    EncoderConfig c = tiny_config();
    c.gelu = GeluVariant::erf;
    EXPECT_EQ(encoder_config_from_json(to_json(c)), c);
    json j = to_json(c);
    j["hidden_act"] = "gelu";
    EXPECT_EQ(encoder_config_from_json(j).gelu, GeluVariant::erf);
    j.erase("hidden_act");
    EXPECT_EQ(encoder_config_from_json(j).gelu, GeluVariant::tanh);
    j["hidden_act"] = "relu";
    EXPECT_THROW(encoder_config_from_json(j), FormatError);
}

TEST(Checkpoint, RandomizedRoundTripsBitExact) {
    std::mt19937_64 gen(2024);
    for (int trial = 0; trial < 25; ++trial) {
        EncoderConfig cfg;
        cfg.num_layers = 1 + int(gen() % 3);
        cfg.num_heads = 1 + int(gen() % 2);
        cfg.hidden_dim = cfg.num_heads * (2 + int(gen() % 4));
        cfg.ffn_dim = 4 + int(gen() % 8);
        cfg.vocab_size = 8 + int(gen() % 20);
        cfg.max_positions = 4 + int(gen() % 12);
        Checkpoint c = random_checkpoint(cfg, gen(), gen() % 2 == 0, 1e3);
        c.provenance["trial"] = trial;
        // Include subnormals and signed zero.
        c.tensors.begin()->second[0] = -0.0f;
        c.tensors.begin()->second[1] = std::numeric_limits<float>::denorm_min();
        const Checkpoint back = decode_lpkt(encode_lpkt(c));
        ASSERT_EQ(back.tensors.size(), c.tensors.size());
        for (const auto& [n, t] : c.tensors) {
            const auto& u = back.at(n);
            ASSERT_EQ(std::memcmp(t.storage().data(), u.storage().data(), t.numel() * 4), 0) << n;
        }
        EXPECT_EQ(back.config, c.config);
        EXPECT_EQ(back.provenance, c.provenance);
    }
}
