#ifndef LPROBE_TOKENIZER_HPP
#define LPROBE_TOKENIZER_HPP

// WordPiece tokenization compatible with the BERT reference tokenizer:
// text cleanup, CJK isolation, whitespace split, optional lowercasing and
// accent stripping, punctuation split, then greedy longest-match-first
// subword segmentation with "##" continuation pieces.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lprobe/errors.hpp"

namespace lprobe {

enum class Casing { uncased, cased };

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";

inline constexpr std::size_t kMaxCharsPerWord = 200;

struct SpecialIds {
    int pad = -1, unk = -1, cls = -1, sep = -1, mask = -1;
};

class Vocab {
public:
    /// Token ids are positions in `tokens`. Duplicate tokens and missing
    /// special tokens are VocabErrors.
    static Vocab from_tokens(std::vector<std::string> tokens, Casing casing) {
        Vocab v;
        v.casing_ = casing;
        v.tokens_ = std::move(tokens);
        v.index_.reserve(v.tokens_.size());
        for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
            if (v.tokens_[i].empty()) throw VocabError("empty token at id " + std::to_string(i));
            if (!v.index_.emplace(v.tokens_[i], int(i)).second) {
                throw VocabError("duplicate vocab token '" + v.tokens_[i] + "' at id " + std::to_string(i));
            }
        }
        auto special = [&](std::string_view name) {
            auto id = v.find(name);
            if (!id) throw VocabError("vocab lacks special token " + std::string(name));
            return *id;
        };
        v.specials_ = {special(kPadToken), special(kUnkToken), special(kClsToken), special(kSepToken),
                       special(kMaskToken)};
        return v;
    }

    std::optional<int> find(std::string_view token) const {
        auto it = index_.find(std::string(token));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || std::size_t(id) >= tokens_.size()) {
            throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(tokens_.size()));
        }
        return tokens_[std::size_t(id)];
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    const SpecialIds& specials() const noexcept { return specials_; }
    Casing casing() const noexcept { return casing_; }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    bool is_special(int id) const noexcept {
        return id == specials_.pad || id == specials_.unk || id == specials_.cls || id == specials_.sep ||
               id == specials_.mask;
    }
    bool is_continuation(int id) const {
        const auto& t = token(id);
        return t.size() > 2 && t[0] == '#' && t[1] == '#';
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    SpecialIds specials_;
    Casing casing_ = Casing::uncased;
};

/// One token per line; the zero-based line number is the id.
inline Vocab load_vocab(const std::filesystem::path& path, Casing casing) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocab " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    return Vocab::from_tokens(std::move(tokens), casing);
}

// ---------------------------------------------------------------------------
// UTF-8 and character classes

namespace text {

inline std::vector<char32_t> decode_utf8(std::string_view s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = 0;
        char32_t cp = 0;
        if (c < 0x80) {
            cp = c;
            len = 1;
        } else if ((c >> 5) == 0x6) {
            cp = c & 0x1f;
            len = 2;
        } else if ((c >> 4) == 0xe) {
            cp = c & 0x0f;
            len = 3;
        } else if ((c >> 3) == 0x1e) {
            cp = c & 0x07;
            len = 4;
        } else {
            out.push_back(0xFFFD);
            ++i;
            continue;
        }
        if (i + len > s.size()) {
            out.push_back(0xFFFD);
            break;
        }
        bool ok = true;
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + k]);
            if ((cc >> 6) != 0x2) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (cc & 0x3f);
        }
        if (!ok) {
            out.push_back(0xFFFD);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

inline void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(char(cp));
    } else if (cp < 0x800) {
        out.push_back(char(0xc0 | (cp >> 6)));
        out.push_back(char(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
        out.push_back(char(0xe0 | (cp >> 12)));
        out.push_back(char(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(char(0x80 | (cp & 0x3f)));
    } else {
        out.push_back(char(0xf0 | (cp >> 18)));
        out.push_back(char(0x80 | ((cp >> 12) & 0x3f)));
        out.push_back(char(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(char(0x80 | (cp & 0x3f)));
    }
}

inline std::string encode_utf8(const std::vector<char32_t>& cps, std::size_t begin, std::size_t end) {
    std::string out;
    for (std::size_t i = begin; i < end; ++i) append_utf8(out, cps[i]);
    return out;
}

inline bool is_whitespace(char32_t c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == 0x00A0 || c == 0x1680 ||
           (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F ||
           c == 0x3000;
}

inline bool is_control(char32_t c) {
    if (c == '\t' || c == '\n' || c == '\r') return false;
    return c < 0x20 || (c >= 0x7f && c < 0xa0) || c == 0x00AD || (c >= 0x200B && c <= 0x200F) ||
           (c >= 0x202A && c <= 0x202E) || (c >= 0x2060 && c <= 0x2064) || c == 0xFEFF;
}

inline bool is_punctuation(char32_t c) {
    if ((c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126)) {
        return true;
    }
    switch (c) {
        case 0x00A1: case 0x00A7: case 0x00AB: case 0x00B6: case 0x00B7: case 0x00BB: case 0x00BF:
        case 0x037E: case 0x0387: case 0xFF1A: case 0xFF1B: case 0xFF1F: case 0xFF20: case 0xFF3F:
        case 0xFF5B: case 0xFF5D:
            return true;
        default:
            break;
    }
    return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x2043) || (c >= 0x2045 && c <= 0x2051) ||
           (c >= 0x2053 && c <= 0x205E) || (c >= 0x3001 && c <= 0x3003) || (c >= 0x3008 && c <= 0x3011) ||
           (c >= 0x3014 && c <= 0x301F) || (c >= 0xFF01 && c <= 0xFF03) || (c >= 0xFF05 && c <= 0xFF0A) ||
           (c >= 0xFF0C && c <= 0xFF0F) || (c >= 0xFF3B && c <= 0xFF3D);
}

inline bool is_cjk(char32_t c) {
    return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) || (c >= 0x20000 && c <= 0x2A6DF) ||
           (c >= 0x2A700 && c <= 0x2B73F) || (c >= 0x2B740 && c <= 0x2B81F) || (c >= 0x2B820 && c <= 0x2CEAF) ||
           (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x2F800 && c <= 0x2FA1F);
}

inline char32_t to_lower(char32_t c) {
    if (c >= 'A' && c <= 'Z') return c + 32;
    if (c < 0x80) return c;
    if (c >= 0x00C0 && c <= 0x00DE && c != 0x00D7) return c + 0x20;
    if (c == 0x0130) return 'i';
    if (c == 0x0178) return 0x00FF;
    if ((c >= 0x0100 && c <= 0x0137) || (c >= 0x014A && c <= 0x0177)) return (c % 2 == 0) ? c + 1 : c;
    if ((c >= 0x0139 && c <= 0x0148) || (c >= 0x0179 && c <= 0x017E)) return (c % 2 == 1) ? c + 1 : c;
    if (c >= 0x0391 && c <= 0x03A9 && c != 0x03A2) return c + 0x20;
    if (c >= 0x0410 && c <= 0x042F) return c + 0x20;
    if (c >= 0x0400 && c <= 0x040F) return c + 0x50;
    return c;
}

inline bool is_combining_mark(char32_t c) {
    return (c >= 0x0300 && c <= 0x036F) || (c >= 0x1AB0 && c <= 0x1AFF) || (c >= 0x1DC0 && c <= 0x1DFF) ||
           (c >= 0x20D0 && c <= 0x20FF) || (c >= 0xFE20 && c <= 0xFE2F);
}

/// Base letter of a precomposed Latin character, or 0 when it has no
/// canonical decomposition.
inline char32_t strip_accent(char32_t c) {
    // U+00C0..U+00FF, then U+0100..U+017F; '.' marks no decomposition.
    static constexpr std::string_view latin1 =
        "AAAAAA.CEEEEIIII.NOOOOO..UUUUY..aaaaaa.ceeeeiiii.nooooo..uuuuy.y";
    static constexpr std::string_view latin_ext_a =
        "AaAaAaCcCcCcCcDd..EeEeEeEeEeGgGgGgGgHh..IiIiIiIiI...JjKk.LlLlLl."
        "...NnNnNn...OoOoOo..RrRrRrSsSsSsSsTtTt..UuUuUuUuUuUuWwYyYZzZzZz.";
    static_assert(latin1.size() == 0x40 && latin_ext_a.size() == 0x80);
    char b = '.';
    if (c >= 0x00C0 && c <= 0x00FF) b = latin1[c - 0x00C0];
    else if (c >= 0x0100 && c <= 0x017F) b = latin_ext_a[c - 0x0100];
    return b == '.' ? 0 : char32_t(b);
}

}  // namespace text

// ---------------------------------------------------------------------------
// Tokenization

/// Cleanup, CJK isolation, whitespace split, casing normalization and
/// punctuation split. Returns words as UTF-8 strings.
inline std::vector<std::string> basic_tokenize(std::string_view input, Casing casing) {
    using namespace text;
    std::vector<std::string> words;
    std::vector<char32_t> current;
    auto flush = [&] {
        if (!current.empty()) {
            words.push_back(encode_utf8(current, 0, current.size()));
            current.clear();
        }
    };
    for (char32_t c : decode_utf8(input)) {
        if (c == 0 || c == 0xFFFD || is_control(c)) continue;
        if (is_whitespace(c)) {
            flush();
            continue;
        }
        if (casing == Casing::uncased) {
            c = to_lower(c);
            if (is_combining_mark(c)) continue;
            if (char32_t base = strip_accent(c)) c = base;
        }
        if (is_cjk(c) || is_punctuation(c)) {
            flush();
            current.push_back(c);
            flush();
            continue;
        }
        current.push_back(c);
    }
    flush();
    return words;
}

/// Greedy longest-match-first segmentation of one word. Words that cannot be
/// segmented, or exceed kMaxCharsPerWord code points, become [UNK].
inline std::vector<int> wordpiece_word(std::string_view word, const Vocab& vocab) {
    const auto cps = text::decode_utf8(word);
    if (cps.size() > kMaxCharsPerWord) return {vocab.specials().unk};
    std::vector<int> pieces;
    std::size_t start = 0;
    while (start < cps.size()) {
        std::size_t end = cps.size();
        std::optional<int> found;
        while (start < end) {
            std::string sub = text::encode_utf8(cps, start, end);
            if (start > 0) sub = "##" + sub;
            if ((found = vocab.find(sub))) break;
            --end;
        }
        if (!found) return {vocab.specials().unk};
        pieces.push_back(*found);
        start = end;
    }
    return pieces;
}

/// Full tokenization to ids using the vocab's casing.
inline std::vector<int> tokenize_ids(std::string_view input, const Vocab& vocab) {
    std::vector<int> ids;
    for (const auto& w : basic_tokenize(input, vocab.casing())) {
        auto pieces = wordpiece_word(w, vocab);
        ids.insert(ids.end(), pieces.begin(), pieces.end());
    }
    return ids;
}

/// Full tokenization to token strings.
inline std::vector<std::string> wordpiece_tokenize(std::string_view input, const Vocab& vocab) {
    std::vector<std::string> out;
    for (int id : tokenize_ids(input, vocab)) out.push_back(vocab.token(id));
    return out;
}

/// Joins tokens back to text, merging "##" pieces and dropping
/// [CLS]/[SEP]/[PAD].
inline std::string decode(const std::vector<int>& ids, const Vocab& vocab) {
    std::string out;
    const auto& sp = vocab.specials();
    for (int id : ids) {
        if (id == sp.cls || id == sp.sep || id == sp.pad) continue;
        const auto& t = vocab.token(id);
        if (vocab.is_continuation(id)) {
            out += t.substr(2);
        } else {
            if (!out.empty()) out.push_back(' ');
            out += t;
        }
    }
    return out;
}

struct TokenizedCloze {
    std::vector<int> ids;  // [CLS] ... [MASK] ... [SEP]
    std::size_t mask_index = 0;
};

/// Tokenizes a cloze statement containing the literal "[MASK]" exactly once.
/// The placeholder is never subword-split.
inline TokenizedCloze encode_cloze(std::string_view cloze_text, const Vocab& vocab, std::size_t max_positions) {
    const auto first = cloze_text.find(kMaskToken);
    if (first == std::string_view::npos) throw ProbeFormatError("cloze has no [MASK]: " + std::string(cloze_text));
    if (cloze_text.find(kMaskToken, first + kMaskToken.size()) != std::string_view::npos) {
        throw ProbeFormatError("cloze has more than one [MASK]: " + std::string(cloze_text));
    }
    const auto& sp = vocab.specials();
    TokenizedCloze out;
    out.ids.push_back(sp.cls);
    auto left = tokenize_ids(cloze_text.substr(0, first), vocab);
    out.ids.insert(out.ids.end(), left.begin(), left.end());
    out.mask_index = out.ids.size();
    out.ids.push_back(sp.mask);
    auto right = tokenize_ids(cloze_text.substr(first + kMaskToken.size()), vocab);
    out.ids.insert(out.ids.end(), right.begin(), right.end());
    out.ids.push_back(sp.sep);
    if (out.ids.size() > max_positions) {
        throw TruncationError("cloze encodes to " + std::to_string(out.ids.size()) + " tokens, limit " +
                              std::to_string(max_positions));
    }
    return out;
}

/// Id of the answer iff it normalizes to exactly one non-[UNK] token.
inline std::optional<int> single_token_answer(std::string_view answer, const Vocab& vocab) {
    const auto ids = tokenize_ids(answer, vocab);
    if (ids.size() != 1 || ids[0] == vocab.specials().unk) return std::nullopt;
    return ids[0];
}

}  // namespace lprobe

#endif
