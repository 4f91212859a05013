#pragma once

// Hand-written scanners equivalent to the split regexes used by byte-level BPE
// model families. Each pre-token is a byte span of the input; BPE merges never
// cross pre-token boundaries.
//
//   gpt2:   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
//   llama3: (?i:'s|'t|'re|'ve|'m|'ll|'d)|[^\r\n\p{L}\p{N}]?\p{L}+|\p{N}{1,3}|
//           ?[^\s\p{L}\p{N}]+[\r\n]*|\s*[\r\n]+|\s+(?!\S)|\s+
//   qwen2:  as llama3 with \p{N} in place of \p{N}{1,3}
//   whitespace: ' ?\S+|\s+'
//   none:   the whole text is one pre-token

#include <algorithm>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "elchat/error.hpp"
#include "elchat/unicode_tables.hpp"
#include "elchat/utf8.hpp"

namespace elchat {

enum class Pretokenizer { kGpt2, kLlama3, kQwen2, kWhitespace, kNone };

inline constexpr std::string_view kGpt2Pattern =
    R"('s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+)";
inline constexpr std::string_view kLlama3Pattern =
    R"((?i:'s|'t|'re|'ve|'m|'ll|'d)|[^\r\n\p{L}\p{N}]?\p{L}+|\p{N}{1,3}| ?[^\s\p{L}\p{N}]+[\r\n]*|\s*[\r\n]+|\s+(?!\S)|\s+)";
inline constexpr std::string_view kQwen2Pattern =
    R"((?i:'s|'t|'re|'ve|'m|'ll|'d)|[^\r\n\p{L}\p{N}]?\p{L}+|\p{N}| ?[^\s\p{L}\p{N}]+[\r\n]*|\s*[\r\n]+|\s+(?!\S)|\s+)";
inline constexpr std::string_view kWhitespacePattern = R"( ?\S+|\s+)";

inline std::string_view pretokenizer_name(Pretokenizer p) {
  switch (p) {
    case Pretokenizer::kGpt2: return "gpt2";
    case Pretokenizer::kLlama3: return "llama3";
    case Pretokenizer::kQwen2: return "qwen2";
    case Pretokenizer::kWhitespace: return "whitespace";
    case Pretokenizer::kNone: return "none";
  }
  return "?";
}

inline Pretokenizer parse_pretokenizer(std::string_view s) {
  for (auto p : {Pretokenizer::kGpt2, Pretokenizer::kLlama3, Pretokenizer::kQwen2, Pretokenizer::kWhitespace,
                 Pretokenizer::kNone}) {
    if (pretokenizer_name(p) == s) return p;
  }
  throw ValidationError("unknown pre-tokenizer '" + std::string(s) +
                        "' (expected gpt2, llama3, qwen2, whitespace or none)");
}

namespace unicode {

template <std::size_t N>
bool in_ranges(const CodepointRange (&table)[N], char32_t cp) {
  auto it = std::upper_bound(std::begin(table), std::end(table), cp,
                             [](char32_t v, const CodepointRange& r) { return v < r.first; });
  return it != std::begin(table) && cp <= std::prev(it)->last;
}

inline bool is_letter(char32_t cp) {
  if (cp < 0x80) return (cp | 0x20) >= 'a' && (cp | 0x20) <= 'z';
  return in_ranges(kLetterRanges, cp);
}

inline bool is_number(char32_t cp) {
  if (cp < 0x80) return cp >= '0' && cp <= '9';
  return in_ranges(kNumberRanges, cp);
}

// White_Space property.
inline bool is_space(char32_t cp) {
  return (cp >= 0x09 && cp <= 0x0D) || cp == 0x20 || cp == 0x85 || cp == 0xA0 || cp == 0x1680 ||
         (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 || cp == 0x2029 || cp == 0x202F || cp == 0x205F ||
         cp == 0x3000;
}

}  // namespace unicode

namespace detail {

enum class CharClass { kLetter, kNumber, kSpace, kOther };

struct Char {
  char32_t cp;
  std::size_t offset;  // byte offset
  CharClass cls;
};

// Invalid bytes become one-byte kOther characters.
inline std::vector<Char> classify(std::string_view text) {
  std::vector<Char> out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    const auto d = utf8::decode(text, i);
    CharClass cls = CharClass::kOther;
    if (d.valid) {
      if (unicode::is_letter(d.cp)) {
        cls = CharClass::kLetter;
      } else if (unicode::is_number(d.cp)) {
        cls = CharClass::kNumber;
      } else if (unicode::is_space(d.cp)) {
        cls = CharClass::kSpace;
      }
    }
    out.push_back({d.valid ? d.cp : char32_t{0xFFFD}, i, cls});
    i += d.len;
  }
  return out;
}

// Length in characters of a contraction at `i`, or 0.
inline std::size_t contraction(const std::vector<Char>& c, std::size_t i, bool ignore_case) {
  if (c[i].cp != U'\'' || i + 1 >= c.size()) return 0;
  auto lower = [&](std::size_t k) -> char32_t {
    char32_t cp = c[k].cp;
    if (ignore_case && cp >= 'A' && cp <= 'Z') cp += 32;
    return cp;
  };
  const char32_t a = lower(i + 1);
  if (i + 2 < c.size()) {
    const char32_t b = lower(i + 2);
    if ((a == 'r' && b == 'e') || (a == 'v' && b == 'e') || (a == 'l' && b == 'l')) return 3;
  }
  if (a == 's' || a == 't' || a == 'm' || a == 'd') return 2;
  return 0;
}

inline std::size_t run_of(const std::vector<Char>& c, std::size_t i, CharClass cls, std::size_t limit = SIZE_MAX) {
  std::size_t j = i;
  while (j < c.size() && c[j].cls == cls && j - i < limit) ++j;
  return j;
}

// Shared tail of both families: \s+(?!\S)|\s+ starting at a whitespace char.
inline std::size_t trailing_space_rule(const std::vector<Char>& c, std::size_t i) {
  const std::size_t j = run_of(c, i, CharClass::kSpace);
  if (j == c.size()) return j;
  if (j - i >= 2) return j - 1;
  return j;
}

inline std::size_t next_gpt2(const std::vector<Char>& c, std::size_t i) {
  if (auto n = contraction(c, i, false)) return i + n;
  const auto cls = c[i].cls;
  if (c[i].cp == U' ' && i + 1 < c.size() && c[i + 1].cls != CharClass::kSpace) {
    return run_of(c, i + 1, c[i + 1].cls);
  }
  if (cls != CharClass::kSpace) return run_of(c, i, cls);
  return trailing_space_rule(c, i);
}

inline bool is_newline(char32_t cp) { return cp == U'\r' || cp == U'\n'; }

inline std::size_t next_llama3(const std::vector<Char>& c, std::size_t i, std::size_t digit_limit) {
  if (auto n = contraction(c, i, true)) return i + n;
  const auto cls = c[i].cls;
  // [^\r\n\p{L}\p{N}]?\p{L}+
  if (cls == CharClass::kLetter) return run_of(c, i, CharClass::kLetter);
  if (cls != CharClass::kNumber && !is_newline(c[i].cp) && i + 1 < c.size() &&
      c[i + 1].cls == CharClass::kLetter) {
    return run_of(c, i + 1, CharClass::kLetter);
  }
  if (cls == CharClass::kNumber) return run_of(c, i, CharClass::kNumber, digit_limit);
  // ' ?[^\s\p{L}\p{N}]+[\r\n]*'
  std::size_t start = i;
  if (c[i].cp == U' ' && i + 1 < c.size() && c[i + 1].cls == CharClass::kOther) start = i + 1;
  if (c[start].cls == CharClass::kOther) {
    std::size_t j = run_of(c, start, CharClass::kOther);
    while (j < c.size() && is_newline(c[j].cp)) ++j;
    return j;
  }
  // \s*[\r\n]+ : ends after the last newline inside the whitespace run
  const std::size_t j = run_of(c, i, CharClass::kSpace);
  for (std::size_t k = j; k > i; --k) {
    if (is_newline(c[k - 1].cp)) return k;
  }
  return trailing_space_rule(c, i);
}

inline std::size_t next_whitespace(const std::vector<Char>& c, std::size_t i) {
  std::size_t start = i;
  if (c[i].cp == U' ' && i + 1 < c.size() && c[i + 1].cls != CharClass::kSpace) start = i + 1;
  if (c[start].cls != CharClass::kSpace) {
    std::size_t j = start;
    while (j < c.size() && c[j].cls != CharClass::kSpace) ++j;
    return j;
  }
  return run_of(c, i, CharClass::kSpace);
}

}  // namespace detail

/// Splits `text` into pre-tokens. Concatenating the result reproduces `text` exactly.
inline std::vector<std::string_view> pretokenize(std::string_view text, Pretokenizer kind) {
  std::vector<std::string_view> out;
  if (text.empty()) return out;
  if (kind == Pretokenizer::kNone) {
    out.push_back(text);
    return out;
  }
  const auto chars = detail::classify(text);
  auto byte_at = [&](std::size_t ci) { return ci < chars.size() ? chars[ci].offset : text.size(); };
  for (std::size_t i = 0; i < chars.size();) {
    std::size_t j = 0;
    switch (kind) {
      case Pretokenizer::kGpt2: j = detail::next_gpt2(chars, i); break;
      case Pretokenizer::kLlama3: j = detail::next_llama3(chars, i, 3); break;
      case Pretokenizer::kQwen2: j = detail::next_llama3(chars, i, 1); break;
      case Pretokenizer::kWhitespace: j = detail::next_whitespace(chars, i); break;
      case Pretokenizer::kNone: break;
    }
    out.push_back(text.substr(byte_at(i), byte_at(j) - byte_at(i)));
    i = j;
  }
  return out;
}

}  // namespace elchat
