#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace elchat::utf8 {

struct Decoded {
  char32_t cp;      // U+FFFD when invalid
  std::size_t len;  // bytes consumed, >= 1
  bool valid;
};

/// Strict decoder: rejects overlongs, surrogates, and values above U+10FFFF.
/// An invalid lead or truncated sequence consumes exactly one byte.
inline Decoded decode(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return {b0, 1, true};
  std::size_t len;
  char32_t cp;
  char32_t min;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2, cp = b0 & 0x1F, min = 0x80;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3, cp = b0 & 0x0F, min = 0x800;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4, cp = b0 & 0x07, min = 0x10000;
  } else {
    return {0xFFFD, 1, false};
  }
  if (i + len > s.size()) return {0xFFFD, 1, false};
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return {0xFFFD, 1, false};
    cp = (cp << 6) | (b & 0x3F);
  }
  if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return {0xFFFD, 1, false};
  return {cp, len, true};
}

inline void append(std::string& out, char32_t cp) {
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

/// Byte offset of the first invalid sequence, if any.
inline std::optional<std::size_t> find_invalid(std::string_view s) {
  for (std::size_t i = 0; i < s.size();) {
    const auto d = decode(s, i);
    if (!d.valid) return i;
    i += d.len;
  }
  return std::nullopt;
}

inline bool is_valid(std::string_view s) { return !find_invalid(s).has_value(); }

/// Replaces each invalid byte with U+FFFD.
inline std::string sanitize(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const auto d = decode(s, i);
    if (d.valid) {
      out.append(s.substr(i, d.len));
    } else {
      append(out, 0xFFFD);
    }
    i += d.len;
  }
  return out;
}

/// GPT-2 byte-to-unicode table: printable Latin-1 bytes map to themselves, the
/// remaining 68 bytes map to U+0100 onward in byte order.
class ByteMap {
 public:
  static const ByteMap& instance() {
    static const ByteMap map;
    return map;
  }

  /// UTF-8 encoding of the code point standing in for byte `b`.
  const std::string& encode(std::uint8_t b) const { return to_text_[b]; }

  std::string encode(std::string_view bytes) const {
    std::string out;
    out.reserve(bytes.size() * 2);
    for (char c : bytes) out += to_text_[static_cast<std::uint8_t>(c)];
    return out;
  }

  /// Inverse mapping; nullopt if `text` contains a code point outside the table.
  std::optional<std::string> decode(std::string_view text) const {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size();) {
      const auto d = utf8::decode(text, i);
      if (!d.valid || d.cp >= to_byte_.size() || to_byte_[d.cp] < 0) return std::nullopt;
      out.push_back(static_cast<char>(to_byte_[d.cp]));
      i += d.len;
    }
    return out;
  }

 private:
  ByteMap() {
    to_byte_.fill(-1);
    int next = 256;
    for (int b = 0; b < 256; ++b) {
      const bool printable = (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE && b <= 0xFF);
      const char32_t cp = printable ? static_cast<char32_t>(b) : static_cast<char32_t>(next++);
      append(to_text_[b], cp);
      to_byte_[cp] = b;
    }
  }

  std::array<std::string, 256> to_text_;
  std::array<int, 324> to_byte_{};
};

}  // namespace elchat::utf8
