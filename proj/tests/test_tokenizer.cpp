#include <gtest/gtest.h>

#include <cstdlib>
#include <random>

#include "lprobe/tokenizer.hpp"
#include "support.hpp"

using namespace lprobe;
using namespace lptest;

namespace {

using Strings = std::vector<std::string>;

// Layout of the standard uncased BERT vocabulary's first 104 rows.
Strings standard_layout_head() {
    Strings t = {"[PAD]"};
    for (int i = 0; i < 99; ++i) t.push_back("[unused" + std::to_string(i) + "]");
    for (const char* s : {"[UNK]", "[CLS]", "[SEP]", "[MASK]"}) t.push_back(s);
    return t;
}

}  // namespace

TEST(Vocab, ToyVocabWithSpecialsOnly) {
    TempDir dir;
    write_file(dir / "v.txt", "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nhello\n");
    const Vocab v = load_vocab(dir / "v.txt", Casing::uncased);
    EXPECT_EQ(v.size(), 6u);
    EXPECT_EQ(v.specials().mask, 4);
    EXPECT_EQ(v.token(5), "hello");
    EXPECT_EQ(*v.find("hello"), 5);
}

TEST(Vocab, MissingMaskNamed) {
    TempDir dir;
    write_file(dir / "v.txt", "[PAD]\n[UNK]\n[CLS]\n[SEP]\n");
    try {
        load_vocab(dir / "v.txt", Casing::uncased);
        FAIL();
    } catch (const VocabError& e) {
        EXPECT_NE(std::string(e.what()).find("[MASK]"), std::string::npos);
    }
}

TEST(Vocab, DuplicatesAndMissingFile) {
    EXPECT_THROW(Vocab::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "a"}, Casing::uncased),
                 VocabError);
    EXPECT_THROW(load_vocab("/nonexistent/vocab.txt", Casing::uncased), IoError);
}

TEST(Vocab, BijectionOverIds) {
    const Vocab v = toy_vocab();
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(*v.find(v.token(int(i))), int(i));
    EXPECT_THROW(v.token(int(v.size())), IndexError);
}

TEST(Vocab, StandardUncasedLayout) {
    TempDir dir;
    std::string text;
    for (const auto& t : standard_layout_head()) text += t + "\n";
    text += "the\nberlin\n";
    write_file(dir / "vocab.txt", text);
    const Vocab v = load_vocab(dir / "vocab.txt", Casing::uncased);
    EXPECT_EQ(v.specials().pad, 0);
    EXPECT_EQ(v.specials().unk, 100);
    EXPECT_EQ(v.specials().cls, 101);
    EXPECT_EQ(v.specials().sep, 102);
    EXPECT_EQ(v.specials().mask, 103);
}

TEST(Vocab, RealStandardVocabWhenAvailable) {
    const char* path = std::getenv("LPROBE_BERT_VOCAB");
    if (!path || !fs::exists(path)) GTEST_SKIP() << "set LPROBE_BERT_VOCAB to the uncased vocab file";
    const Vocab v = load_vocab(path, Casing::uncased);
    EXPECT_EQ(v.size(), 30522u);
    EXPECT_EQ(v.specials().pad, 0);
    EXPECT_EQ(v.specials().unk, 100);
    EXPECT_EQ(v.specials().cls, 101);
    EXPECT_EQ(v.specials().sep, 102);
    EXPECT_EQ(v.specials().mask, 103);
    EXPECT_EQ(wordpiece_tokenize("unaffable", v), (Strings{"un", "##aff", "##able"}));
    EXPECT_TRUE(single_token_answer("Berlin", v));
    EXPECT_FALSE(single_token_answer("New York", v));
}

TEST(Wordpiece, GreedyLongestMatch) {
    const Vocab v = toy_vocab();
    EXPECT_EQ(wordpiece_tokenize("unaffable", v), (Strings{"un", "##aff", "##able"}));
    EXPECT_EQ(wordpiece_tokenize("Unaffable.", v), (Strings{"un", "##aff", "##able", "."}));
    EXPECT_EQ(wordpiece_tokenize("unaffablex", v), (Strings{"[UNK]"}));
    EXPECT_EQ(wordpiece_tokenize("", v), Strings{});
    EXPECT_EQ(wordpiece_tokenize("   \t\n", v), Strings{});
}

TEST(Wordpiece, PrefersLongestPiece) {
    const Vocab v = Vocab::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "ab", "abc", "##c",
                                        "##bc", "##d"},
                                       Casing::uncased);
    EXPECT_EQ(wordpiece_tokenize("abcd", v), (Strings{"abc", "##d"}));
    EXPECT_EQ(wordpiece_tokenize("abd", v), (Strings{"ab", "##d"}));
    EXPECT_EQ(wordpiece_tokenize("abdx", v), (Strings{"[UNK]"}));
}

TEST(Wordpiece, IdempotentOnWholeWordVocabMembers) {
    const Vocab v = toy_vocab();
    for (std::size_t i = 0; i < v.size(); ++i) {
        const int id = int(i);
        if (v.is_special(id) || v.is_continuation(id)) continue;
        EXPECT_EQ(wordpiece_tokenize(v.token(id), v), Strings{v.token(id)});
    }
}

TEST(Wordpiece, LongWordIsUnknown) {
    const Vocab v = Vocab::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "##a"}, Casing::uncased);
    EXPECT_EQ(wordpiece_tokenize(std::string(200, 'a'), v).size(), 200u);
    EXPECT_EQ(wordpiece_tokenize(std::string(201, 'a'), v), Strings{"[UNK]"});
}

TEST(Wordpiece, CasingAndAccents) {
    const Strings tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "cafe", "Berlin", "berlin", "zurich"};
    const Vocab uncased = Vocab::from_tokens(tokens, Casing::uncased);
    const Vocab cased = Vocab::from_tokens(tokens, Casing::cased);
    EXPECT_EQ(wordpiece_tokenize("Café", uncased), Strings{"cafe"});
    EXPECT_EQ(wordpiece_tokenize("ZÜRICH", uncased), Strings{"zurich"});
    EXPECT_EQ(wordpiece_tokenize("Berlin", uncased), Strings{"berlin"});
    EXPECT_EQ(wordpiece_tokenize("Berlin", cased), Strings{"Berlin"});
    EXPECT_EQ(wordpiece_tokenize("Café", cased), Strings{"[UNK]"});
}

TEST(Wordpiece, PunctuationSplitsAndDeterminism) {
    const Vocab v = toy_vocab();
    EXPECT_EQ(wordpiece_tokenize("berlin.paris", v), (Strings{"berlin", ".", "paris"}));
    const std::string text = "The capital of Germany is Berlin. Paris is the capital of un-Germany!";
    const auto a = tokenize_ids(text, v);
    for (int i = 0; i < 5; ++i) EXPECT_EQ(tokenize_ids(text, v), a);
}

TEST(Cloze, CapitalOfGermanyExample) {
    const Vocab v = toy_vocab();
    const auto c = encode_cloze("The capital of Germany is [MASK].", v, 512);
    EXPECT_EQ(c.ids.front(), v.specials().cls);
    EXPECT_EQ(c.ids.back(), v.specials().sep);
    EXPECT_EQ(std::count(c.ids.begin(), c.ids.end(), v.specials().mask), 1);
    EXPECT_EQ(c.ids[c.mask_index], v.specials().mask);
    EXPECT_EQ(c.mask_index, 6u);
    const std::string text = decode(c.ids, v);
    EXPECT_EQ(text, "the capital of germany is [MASK] .");
    EXPECT_EQ(encode_cloze(text, v, 512).ids, c.ids);
}

TEST(Cloze, MaskCountErrors) {
    const Vocab v = toy_vocab();
    EXPECT_THROW(encode_cloze("[MASK] [MASK]", v, 512), ProbeFormatError);
    EXPECT_THROW(encode_cloze("no placeholder", v, 512), ProbeFormatError);
    EXPECT_NO_THROW(encode_cloze("[MASK]", v, 512));
}

TEST(Cloze, LengthBound) {
    const Vocab v = toy_vocab();
    std::string text;
    for (int i = 0; i < 600; ++i) text += "the ";
    text += "[MASK]";
    EXPECT_THROW(encode_cloze(text, v, 512), TruncationError);
    // Exactly at the limit: 509 words + [MASK] + [CLS] + [SEP].
    std::string fit;
    for (int i = 0; i < 509; ++i) fit += "the ";
    EXPECT_EQ(encode_cloze(fit + "[MASK]", v, 512).ids.size(), 512u);
    EXPECT_THROW(encode_cloze("the " + fit + "[MASK]", v, 512), TruncationError);
}

TEST(Cloze, InvariantsOverRandomTemplates) {
    const Vocab v = toy_vocab();
    const Strings words = {"the", "Capital", "of", "GERMANY", "is", "berlin", ".", "unaffable", "paris",
                           "zzz", "x,y", "[", "]", "mask", "##", "!"};
    std::mt19937_64 gen(31);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = gen() % 20;
        const std::size_t at = n ? gen() % (n + 1) : 0;
        std::string text;
        for (std::size_t i = 0; i <= n; ++i) {
            if (i == at) text += (gen() % 2 ? " " : "") + std::string("[MASK]");
            if (i < n) text += (gen() % 3 ? " " : "") + words[gen() % words.size()];
        }
        const std::size_t limit = 4 + gen() % 30;
        try {
            const auto c = encode_cloze(text, v, limit);
            EXPECT_LE(c.ids.size(), limit);
            EXPECT_EQ(c.ids.front(), v.specials().cls) << text;
            EXPECT_EQ(c.ids.back(), v.specials().sep) << text;
            EXPECT_EQ(std::count(c.ids.begin(), c.ids.end(), v.specials().mask), 1) << text;
            EXPECT_EQ(c.ids[c.mask_index], v.specials().mask) << text;
        } catch (const TruncationError&) {
            std::size_t full = encode_cloze(text, v, 100000).ids.size();
            EXPECT_GT(full, limit);
        }
    }
}

TEST(Answer, SingleTokenRule) {
    const Vocab v = toy_vocab();
    EXPECT_EQ(single_token_answer("Berlin", v), v.find("berlin"));
    EXPECT_FALSE(single_token_answer("New York", v));
    EXPECT_FALSE(single_token_answer("unaffable", v));
    EXPECT_FALSE(single_token_answer("Atlantis", v));
    EXPECT_FALSE(single_token_answer("", v));
}
