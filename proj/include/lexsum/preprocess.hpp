#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lexsum/errors.hpp"
#include "lexsum/porter.hpp"
#include "lexsum/stopwords.hpp"

namespace lexsum {

struct Sentence {
    std::size_t index = 0;
    std::string text;
    std::vector<std::string> tokens;
};

struct PreprocessConfig {
    bool lowercase = true;
    bool remove_stopwords = true;
    bool stem = false;
    std::set<std::string> stopword_list = default_stopwords();
};

namespace unicode {

// Decodes one UTF-8 sequence at byte i; malformed bytes fall back to a
// single-byte codepoint so processing never stalls.
inline std::pair<std::uint32_t, std::size_t> decode(const std::string& s, std::size_t i) {
    const auto byte = [&](std::size_t p) { return static_cast<unsigned char>(s[p]); };
    const unsigned char b0 = byte(i);
    if (b0 < 0x80) return {b0, 1};
    const auto cont = [&](std::size_t p) {
        return p < s.size() && (byte(p) & 0xC0) == 0x80;
    };
    if ((b0 & 0xE0) == 0xC0 && cont(i + 1)) {
        const std::uint32_t cp = (static_cast<std::uint32_t>(b0 & 0x1F) << 6) |
                                 (byte(i + 1) & 0x3F);
        if (cp >= 0x80) return {cp, 2};
    } else if ((b0 & 0xF0) == 0xE0 && cont(i + 1) && cont(i + 2)) {
        const std::uint32_t cp = (static_cast<std::uint32_t>(b0 & 0x0F) << 12) |
                                 (static_cast<std::uint32_t>(byte(i + 1) & 0x3F) << 6) |
                                 (byte(i + 2) & 0x3F);
        if (cp >= 0x800) return {cp, 3};
    } else if ((b0 & 0xF8) == 0xF0 && cont(i + 1) && cont(i + 2) && cont(i + 3)) {
        const std::uint32_t cp = (static_cast<std::uint32_t>(b0 & 0x07) << 18) |
                                 (static_cast<std::uint32_t>(byte(i + 1) & 0x3F) << 12) |
                                 (static_cast<std::uint32_t>(byte(i + 2) & 0x3F) << 6) |
                                 (byte(i + 3) & 0x3F);
        if (cp >= 0x10000 && cp <= 0x10FFFF) return {cp, 4};
    }
    return {b0, 1};
}

inline void encode(std::uint32_t cp, std::string& out) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// Precomposed codepoint for ASCII base + combining mark, 0 when the pair
// has no single-codepoint form. Covers the Latin letters patents use.
inline std::uint32_t compose(std::uint32_t base, std::uint32_t mark) {
    struct Entry {
        char base;
        std::uint16_t mark;
        std::uint16_t composed;
    };
    static constexpr std::array<Entry, 56> table = {{
        {'A', 0x300, 0xC0}, {'A', 0x301, 0xC1}, {'A', 0x302, 0xC2},
        {'A', 0x303, 0xC3}, {'A', 0x308, 0xC4}, {'A', 0x30A, 0xC5},
        {'C', 0x327, 0xC7}, {'E', 0x300, 0xC8}, {'E', 0x301, 0xC9},
        {'E', 0x302, 0xCA}, {'E', 0x308, 0xCB}, {'I', 0x300, 0xCC},
        {'I', 0x301, 0xCD}, {'I', 0x302, 0xCE}, {'I', 0x308, 0xCF},
        {'N', 0x303, 0xD1}, {'O', 0x300, 0xD2}, {'O', 0x301, 0xD3},
        {'O', 0x302, 0xD4}, {'O', 0x303, 0xD5}, {'O', 0x308, 0xD6},
        {'U', 0x300, 0xD9}, {'U', 0x301, 0xDA}, {'U', 0x302, 0xDB},
        {'U', 0x308, 0xDC}, {'Y', 0x301, 0xDD}, {'a', 0x300, 0xE0},
        {'a', 0x301, 0xE1}, {'a', 0x302, 0xE2}, {'a', 0x303, 0xE3},
        {'a', 0x308, 0xE4}, {'a', 0x30A, 0xE5}, {'c', 0x327, 0xE7},
        {'e', 0x300, 0xE8}, {'e', 0x301, 0xE9}, {'e', 0x302, 0xEA},
        {'e', 0x308, 0xEB}, {'i', 0x300, 0xEC}, {'i', 0x301, 0xED},
        {'i', 0x302, 0xEE}, {'i', 0x308, 0xEF}, {'n', 0x303, 0xF1},
        {'o', 0x300, 0xF2}, {'o', 0x301, 0xF3}, {'o', 0x302, 0xF4},
        {'o', 0x303, 0xF5}, {'o', 0x308, 0xF6}, {'u', 0x300, 0xF9},
        {'u', 0x301, 0xFA}, {'u', 0x302, 0xFB}, {'u', 0x308, 0xFC},
        {'y', 0x301, 0xFD}, {'y', 0x308, 0xFF}, {'S', 0x30C, 0x160},
        {'s', 0x30C, 0x161}, {'z', 0x30C, 0x17E},
    }};
    for (const auto& e : table) {
        if (static_cast<std::uint32_t>(e.base) == base && e.mark == mark) {
            return e.composed;
        }
    }
    return 0;
}

// Canonical composition limited to the table above.
inline std::string nfc(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        auto [cp, len] = decode(s, i);
        std::size_t next = i + len;
        if (cp < 0x80 && next < s.size()) {
            auto [mark, mlen] = decode(s, next);
            const std::uint32_t composed = compose(cp, mark);
            if (composed != 0) {
                encode(composed, out);
                i = next + mlen;
                continue;
            }
        }
        encode(cp, out);
        i = next;
    }
    return out;
}

inline bool is_word_cp(std::uint32_t cp) {
    if (cp >= 0x80) return true;
    return (cp >= '0' && cp <= '9') || (cp >= 'A' && cp <= 'Z') ||
           (cp >= 'a' && cp <= 'z');
}

}  // namespace unicode

// Byte ranges [begin, end) of the word tokens of text, in order. Combining
// marks count as word bytes, so composed and decomposed spellings yield the
// same token boundaries.
inline std::vector<std::pair<std::size_t, std::size_t>> token_spans(const std::string& text) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::size_t i = 0;
    bool in_token = false;
    std::size_t start = 0;
    while (i < text.size()) {
        auto [cp, len] = unicode::decode(text, i);
        if (unicode::is_word_cp(cp)) {
            if (!in_token) {
                in_token = true;
                start = i;
            }
        } else if (in_token) {
            spans.emplace_back(start, i);
            in_token = false;
        }
        i += len;
    }
    if (in_token) spans.emplace_back(start, text.size());
    return spans;
}

inline std::size_t count_word_tokens(const std::string& text) {
    return token_spans(text).size();
}

inline std::string ascii_lower(std::string s) {
    for (char& c : s) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return s;
}

inline std::vector<std::string> tokenize_words(const std::string& text,
                                               const PreprocessConfig& cfg) {
    if (cfg.remove_stopwords && cfg.stopword_list.empty()) {
        throw ConfigError("stopword removal requested with an empty stopword list");
    }
    const std::string normalized = unicode::nfc(text);
    std::vector<std::string> tokens;
    porter::Stemmer stemmer;
    for (const auto& [begin, end] : token_spans(normalized)) {
        std::string tok = normalized.substr(begin, end - begin);
        if (cfg.lowercase) tok = ascii_lower(tok);
        if (cfg.remove_stopwords && cfg.stopword_list.count(tok)) continue;
        if (cfg.stem) tok = stemmer.stem(tok);
        tokens.push_back(std::move(tok));
    }
    return tokens;
}

namespace detail {

inline bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline const std::vector<std::string>& abbreviations() {
    static const std::vector<std::string> list = {
        "Fig.", "No.", "e.g.", "i.e.", "U.S.", "et al.",
    };
    return list;
}

// Case-sensitive suffix match at a word boundary: the character before the
// abbreviation must not be alphanumeric.
inline bool ends_with_abbreviation(const std::string& text, std::size_t end) {
    for (const auto& abbr : abbreviations()) {
        if (abbr.size() > end) continue;
        const std::size_t start = end - abbr.size();
        if (text.compare(start, abbr.size(), abbr) != 0) continue;
        if (start > 0) {
            const char prev = text[start - 1];
            const bool alnum = (prev >= '0' && prev <= '9') ||
                               (prev >= 'A' && prev <= 'Z') ||
                               (prev >= 'a' && prev <= 'z');
            if (alnum) continue;
        }
        return true;
    }
    return false;
}

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return s.substr(b, e - b);
}

}  // namespace detail

// Splits on runs of . ? ! followed by whitespace and an uppercase ASCII
// letter, except after a listed abbreviation. Trailing unterminated text
// becomes the final sentence. Tokens are left empty; see
// preprocess_document.
inline std::vector<Sentence> split_sentences(const std::string& text) {
    std::vector<Sentence> sentences;
    const auto emit = [&](const std::string& piece) {
        const std::string trimmed = detail::trim(piece);
        if (trimmed.empty()) return;
        Sentence s;
        s.index = sentences.size();
        s.text = trimmed;
        sentences.push_back(std::move(s));
    };

    std::size_t start = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (c != '.' && c != '?' && c != '!') {
            ++i;
            continue;
        }
        std::size_t punct_end = i + 1;
        while (punct_end < text.size() &&
               (text[punct_end] == '.' || text[punct_end] == '?' ||
                text[punct_end] == '!')) {
            ++punct_end;
        }
        std::size_t after = punct_end;
        while (after < text.size() && detail::is_space(text[after])) ++after;
        const bool has_gap = after > punct_end;
        const bool upper_next = after < text.size() && text[after] >= 'A' &&
                                text[after] <= 'Z';
        if (has_gap && upper_next && !detail::ends_with_abbreviation(text, punct_end)) {
            emit(text.substr(start, punct_end - start));
            start = after;
            i = after;
        } else {
            i = punct_end;
        }
    }
    if (start < text.size()) emit(text.substr(start));
    return sentences;
}

inline std::vector<Sentence> preprocess_document(const std::string& text,
                                                 const PreprocessConfig& cfg) {
    std::vector<Sentence> sentences = split_sentences(text);
    for (auto& s : sentences) {
        s.tokens = tokenize_words(s.text, cfg);
    }
    return sentences;
}

template <typename Token>
inline std::vector<Token> pad_or_truncate(const std::vector<Token>& tokens,
                                          std::size_t length,
                                          const Token& pad_symbol) {
    if (length < 1) throw ConfigError("pad_or_truncate: length must be >= 1");
    std::vector<Token> out;
    out.reserve(length);
    for (std::size_t i = 0; i < length && i < tokens.size(); ++i) {
        out.push_back(tokens[i]);
    }
    while (out.size() < length) out.push_back(pad_symbol);
    return out;
}

}  // namespace lexsum
