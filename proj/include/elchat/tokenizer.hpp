#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "elchat/error.hpp"
#include "elchat/io.hpp"
#include "elchat/pretokenizer.hpp"
#include "elchat/utf8.hpp"

namespace elchat {

using TokenId = std::uint32_t;
using TokenIds = std::vector<TokenId>;

/// kNormal tokens come from the BPE vocabulary; kAdded tokens are whole-token
/// entries appended after training (vocabulary expansion); kSpecial tokens are
/// never split and never produced by BPE.
enum class TokenKind : std::uint8_t { kNormal, kAdded, kSpecial };

struct SpecialToken {
  std::string content;
  TokenId id;
  friend bool operator==(const SpecialToken&, const SpecialToken&) = default;
};

using MergeRule = std::pair<std::string, std::string>;

class TokenizerModel;

TokenizerModel load_tokenizer(const std::filesystem::path& path);

/// BPE tokenizer, byte-level by default.
///
/// In a byte-level model, normal and added tokens are stored in their
/// byte-mapped spelling (GPT-2 byte-to-unicode table, so a leading space
/// appears as "Ġ") and every byte has a token, so any input can be encoded.
/// A char-level model (byte_level = false) stores tokens verbatim, starts BPE
/// from single code points, and rejects characters it has no token for.
/// Special tokens are always stored verbatim. Ids are dense: 0 .. size()-1.
class TokenizerModel {
 public:
  struct Entry {
    std::string token;
    TokenKind kind = TokenKind::kNormal;
  };

  TokenizerModel() = default;

  /// 256 single-byte tokens with id == byte value, no merges.
  static TokenizerModel byte_alphabet(Pretokenizer pretokenizer = Pretokenizer::kGpt2) {
    std::vector<Entry> entries;
    entries.reserve(256);
    const auto& bytes = utf8::ByteMap::instance();
    for (int b = 0; b < 256; ++b) entries.push_back({bytes.encode(static_cast<std::uint8_t>(b)), TokenKind::kNormal});
    return TokenizerModel(std::move(entries), {}, pretokenizer);
  }

  /// Validates and indexes the parts. `entries[i]` is the token with id i.
  TokenizerModel(std::vector<Entry> entries, std::vector<MergeRule> merges, Pretokenizer pretokenizer,
                 bool byte_level = true)
      : entries_(std::move(entries)), merges_(std::move(merges)), pretokenizer_(pretokenizer),
        byte_level_(byte_level) {
    reindex();
  }

  std::size_t size() const { return entries_.size(); }
  Pretokenizer pretokenizer() const { return pretokenizer_; }
  bool byte_level() const { return byte_level_; }

  const std::string& token(TokenId id) const { return entry(id).token; }
  TokenKind kind(TokenId id) const { return entry(id).kind; }
  const std::vector<Entry>& entries() const { return entries_; }
  const std::vector<MergeRule>& merges() const { return merges_; }

  std::optional<TokenId> find(std::string_view token) const {
    auto it = by_token_.find(std::string(token));
    if (it == by_token_.end()) return std::nullopt;
    return it->second;
  }

  /// Vocabulary spelling of raw text (byte-mapped in byte-level models).
  std::string spell(std::string_view raw) const {
    return byte_level_ ? utf8::ByteMap::instance().encode(raw) : std::string(raw);
  }

  std::vector<SpecialToken> special_tokens() const {
    std::vector<SpecialToken> out;
    for (TokenId id = 0; id < entries_.size(); ++id) {
      if (entries_[id].kind == TokenKind::kSpecial) out.push_back({entries_[id].token, id});
    }
    return out;
  }

  /// Raw bytes this token stands for.
  std::string token_bytes(TokenId id) const {
    const auto& e = entry(id);
    if (e.kind == TokenKind::kSpecial || !byte_level_) return e.token;
    auto raw = utf8::ByteMap::instance().decode(e.token);
    if (!raw) throw IntegrityError("token " + std::to_string(id) + " is not in byte-mapped form");
    return *raw;
  }

  /// Tokenizes one pre-token (raw bytes). Added tokens are taken leftmost-longest
  /// with BPE filling the gaps; the result is used only when it is no longer than
  /// the plain BPE segmentation.
  TokenIds encode_word(std::string_view word) const {
    TokenIds plain = bpe(word);
    if (added_by_bytes_.empty() || plain.size() <= 1) return plain;
    TokenIds mixed;
    std::size_t gap = 0;
    bool used = false;
    for (std::size_t i = 0; i < word.size();) {
      std::optional<TokenId> hit;
      std::size_t hit_len = 0;
      for (std::size_t len = std::min(max_added_len_, word.size() - i); len > 0; --len) {
        auto it = added_by_bytes_.find(std::string(word.substr(i, len)));
        if (it != added_by_bytes_.end()) {
          hit = it->second;
          hit_len = len;
          break;
        }
      }
      if (!hit) {
        ++i;
        continue;
      }
      auto piece = bpe(word.substr(gap, i - gap));
      mixed.insert(mixed.end(), piece.begin(), piece.end());
      mixed.push_back(*hit);
      used = true;
      i += hit_len;
      gap = i;
    }
    if (!used) return plain;
    auto tail = bpe(word.substr(gap));
    mixed.insert(mixed.end(), tail.begin(), tail.end());
    return mixed.size() <= plain.size() ? mixed : plain;
  }

  /// Encodes text. With `allow_special`, special-token strings are matched
  /// leftmost-longest before pre-tokenization and emitted as single ids.
  TokenIds encode(std::string_view text, bool allow_special = true) const {
    TokenIds out;
    for_each_segment(text, allow_special, [&](std::string_view plain, std::optional<TokenId> special) {
      if (special) {
        out.push_back(*special);
        return;
      }
      for (auto word : pretokenize(plain, pretokenizer_)) {
        auto ids = encode_word(word);
        out.insert(out.end(), ids.begin(), ids.end());
      }
    });
    return out;
  }

  /// Splits text around special tokens; `fn(plain_text, nullopt)` or `fn({}, special_id)`.
  template <typename Fn>
  void for_each_segment(std::string_view text, bool allow_special, Fn&& fn) const {
    if (!allow_special || specials_by_len_.empty()) {
      if (!text.empty()) fn(text, std::nullopt);
      return;
    }
    std::size_t start = 0;
    for (std::size_t i = 0; i < text.size();) {
      std::optional<TokenId> hit;
      std::size_t hit_len = 0;
      for (const auto& [content, id] : specials_by_len_) {
        if (text.compare(i, content.size(), content) == 0) {
          hit = id;
          hit_len = content.size();
          break;
        }
      }
      if (!hit) {
        ++i;
        continue;
      }
      if (i > start) fn(text.substr(start, i - start), std::nullopt);
      fn(std::string_view{}, hit);
      i += hit_len;
      start = i;
    }
    if (start < text.size()) fn(text.substr(start), std::nullopt);
  }

  /// Concatenated token bytes, unvalidated.
  std::string decode_bytes(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
      if (id >= entries_.size()) {
        throw ValidationError("decode: token id " + std::to_string(id) + " out of range for vocabulary of " +
                              std::to_string(entries_.size()));
      }
      out += token_bytes(id);
    }
    return out;
  }

  /// Decodes to UTF-8; byte sequences that are not valid UTF-8 become U+FFFD.
  std::string decode(std::span<const TokenId> ids) const { return utf8::sanitize(decode_bytes(ids)); }

  /// Appends whole tokens (raw bytes) as kAdded entries with consecutive ids.
  TokenizerModel with_added_tokens(std::span<const std::string> raw_tokens) const {
    auto entries = entries_;
    for (const auto& raw : raw_tokens) {
      // tokenizer.json stores added tokens verbatim, so they must be text
      if (!utf8::is_valid(raw)) throw ValidationError("added token is not valid UTF-8");
      entries.push_back({spell(raw), TokenKind::kAdded});
    }
    return TokenizerModel(std::move(entries), merges_, pretokenizer_, byte_level_);
  }

  friend bool operator==(const TokenizerModel& a, const TokenizerModel& b) {
    return a.pretokenizer_ == b.pretokenizer_ && a.byte_level_ == b.byte_level_ && a.merges_ == b.merges_ &&
           std::equal(a.entries_.begin(), a.entries_.end(), b.entries_.begin(), b.entries_.end(),
                      [](const Entry& x, const Entry& y) { return x.token == y.token && x.kind == y.kind; });
  }

 private:
  const Entry& entry(TokenId id) const {
    if (id >= entries_.size()) {
      throw ValidationError("token id " + std::to_string(id) + " out of range for vocabulary of " +
                            std::to_string(entries_.size()));
    }
    return entries_[id];
  }

  static std::uint64_t pair_key(TokenId a, TokenId b) { return (static_cast<std::uint64_t>(a) << 32) | b; }

  void reindex() {
    by_token_.clear();
    for (TokenId id = 0; id < entries_.size(); ++id) {
      if (!by_token_.emplace(entries_[id].token, id).second) {
        throw ValidationError("token '" + entries_[id].token + "' appears twice in the vocabulary");
      }
    }
    const auto& bytes = utf8::ByteMap::instance();
    if (byte_level_) {
      for (int b = 0; b < 256; ++b) {
        auto it = by_token_.find(bytes.encode(static_cast<std::uint8_t>(b)));
        if (it == by_token_.end() || entries_[it->second].kind != TokenKind::kNormal) {
          throw ValidationError("byte-level vocabulary lacks the token for byte " + std::to_string(b));
        }
        byte_ids_[b] = it->second;
      }
    }
    merge_ranks_.clear();
    for (std::size_t r = 0; r < merges_.size(); ++r) {
      const auto& [l, rr] = merges_[r];
      auto li = by_token_.find(l);
      auto ri = by_token_.find(rr);
      auto oi = by_token_.find(l + rr);
      if (li == by_token_.end() || ri == by_token_.end() || oi == by_token_.end()) {
        throw ValidationError("merge rule '" + l + " " + rr + "' refers to a token missing from the vocabulary");
      }
      merge_ranks_.emplace(pair_key(li->second, ri->second), MergeTarget{static_cast<std::uint32_t>(r), oi->second});
    }
    added_by_bytes_.clear();
    specials_by_len_.clear();
    max_added_len_ = 0;
    for (TokenId id = 0; id < entries_.size(); ++id) {
      const auto& e = entries_[id];
      if (e.kind == TokenKind::kAdded) {
        auto raw = byte_level_ ? bytes.decode(e.token) : std::optional<std::string>(e.token);
        if (!raw || raw->empty()) throw ValidationError("added token " + std::to_string(id) + " is malformed");
        added_by_bytes_.emplace(*raw, id);
        max_added_len_ = std::max(max_added_len_, raw->size());
      } else if (e.kind == TokenKind::kSpecial) {
        if (e.token.empty()) throw ValidationError("special token " + std::to_string(id) + " is empty");
        specials_by_len_.emplace_back(e.token, id);
      } else if (byte_level_ && !bytes.decode(e.token)) {
        throw ValidationError("vocabulary token " + std::to_string(id) + " is not in byte-mapped form");
      } else if (e.token.empty()) {
        throw ValidationError("vocabulary token " + std::to_string(id) + " is empty");
      }
    }
    std::stable_sort(specials_by_len_.begin(), specials_by_len_.end(),
                     [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
  }

  TokenIds bpe(std::string_view word) const {
    TokenIds sym;
    sym.reserve(word.size());
    if (byte_level_) {
      for (char c : word) sym.push_back(byte_ids_[static_cast<std::uint8_t>(c)]);
    } else {
      for (std::size_t i = 0; i < word.size();) {
        const auto d = utf8::decode(word, i);
        auto it = by_token_.find(std::string(word.substr(i, d.len)));
        if (it == by_token_.end() || entries_[it->second].kind != TokenKind::kNormal) {
          throw ValidationError("character '" + std::string(word.substr(i, d.len)) +
                                "' has no token in this char-level vocabulary");
        }
        sym.push_back(it->second);
        i += d.len;
      }
    }
    while (sym.size() > 1) {
      std::uint32_t best_rank = std::numeric_limits<std::uint32_t>::max();
      TokenId best_out = 0;
      std::uint64_t best_key = 0;
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
        auto it = merge_ranks_.find(pair_key(sym[i], sym[i + 1]));
        if (it != merge_ranks_.end() && it->second.rank < best_rank) {
          best_rank = it->second.rank;
          best_out = it->second.output;
          best_key = it->first;
        }
      }
      if (best_rank == std::numeric_limits<std::uint32_t>::max()) break;
      TokenIds next;
      next.reserve(sym.size());
      for (std::size_t i = 0; i < sym.size(); ++i) {
        if (i + 1 < sym.size() && pair_key(sym[i], sym[i + 1]) == best_key) {
          next.push_back(best_out);
          ++i;
        } else {
          next.push_back(sym[i]);
        }
      }
      sym.swap(next);
    }
    return sym;
  }

  struct MergeTarget {
    std::uint32_t rank;
    TokenId output;
  };

  std::vector<Entry> entries_;
  std::vector<MergeRule> merges_;
  Pretokenizer pretokenizer_ = Pretokenizer::kGpt2;
  bool byte_level_ = true;

  std::unordered_map<std::string, TokenId> by_token_;
  std::unordered_map<std::uint64_t, MergeTarget> merge_ranks_;
  TokenId byte_ids_[256] = {};
  std::unordered_map<std::string, TokenId> added_by_bytes_;
  std::size_t max_added_len_ = 0;
  std::vector<std::pair<std::string, TokenId>> specials_by_len_;
};

/// Memoizes per-word encodings; for bulk encoding of corpora.
class CachedEncoder {
 public:
  explicit CachedEncoder(const TokenizerModel& tok) : tok_(tok) {}

  template <typename Sink>
  void encode(std::string_view text, Sink&& sink, bool allow_special = false) {
    tok_.for_each_segment(text, allow_special, [&](std::string_view plain, std::optional<TokenId> special) {
      if (special) {
        sink(*special);
        return;
      }
      for (auto word : pretokenize(plain, tok_.pretokenizer())) {
        auto it = cache_.find(word);
        if (it == cache_.end()) it = cache_.emplace(std::string(word), tok_.encode_word(word)).first;
        for (TokenId id : it->second) sink(id);
      }
    });
  }

  std::size_t count(std::string_view text, bool allow_special = false) {
    std::size_t n = 0;
    encode(text, [&](TokenId) { ++n; }, allow_special);
    return n;
  }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  const TokenizerModel& tok_;
  std::unordered_map<std::string, TokenIds, Hash, std::equal_to<>> cache_;
};

// ---------------------------------------------------------------------------
// tokenizer.json
//
// Reads the subset of the Hugging Face tokenizers schema that describes a
// byte-level BPE model: model.vocab, model.merges ("a b" strings or [a, b]
// pairs), added_tokens (id, content, special) and pre_tokenizer. Writes the
// same subset back.

namespace detail {

inline Pretokenizer pretokenizer_from_json(const nlohmann::json& pre) {
  if (pre.is_null()) return Pretokenizer::kNone;
  const auto type = pre.value("type", std::string{});
  if (type == "ByteLevel") return pre.value("use_regex", true) ? Pretokenizer::kGpt2 : Pretokenizer::kNone;
  if (type == "Split") {
    std::string pattern;
    if (pre.contains("pattern") && pre["pattern"].contains("Regex")) pattern = pre["pattern"]["Regex"];
    if (pattern == kLlama3Pattern) return Pretokenizer::kLlama3;
    if (pattern == kQwen2Pattern) return Pretokenizer::kQwen2;
    if (pattern == kWhitespacePattern) return Pretokenizer::kWhitespace;
    return Pretokenizer::kGpt2;
  }
  if (type == "Sequence" && pre.contains("pretokenizers")) {
    std::optional<Pretokenizer> found;
    for (const auto& p : pre["pretokenizers"]) {
      const auto kind = pretokenizer_from_json(p);
      if (p.value("type", std::string{}) == "Split" || (!found && kind != Pretokenizer::kNone)) found = kind;
    }
    return found.value_or(Pretokenizer::kNone);
  }
  return Pretokenizer::kGpt2;
}

inline nlohmann::json byte_level_json(bool use_regex) {
  return {{"type", "ByteLevel"}, {"add_prefix_space", false}, {"trim_offsets", true}, {"use_regex", use_regex}};
}

inline nlohmann::json pretokenizer_to_json(Pretokenizer p) {
  auto split = [](std::string_view pattern) {
    return nlohmann::json{{"type", "Sequence"},
                          {"pretokenizers",
                           {{{"type", "Split"},
                             {"pattern", {{"Regex", std::string(pattern)}}},
                             {"behavior", "Isolated"},
                             {"invert", false}},
                            byte_level_json(false)}}};
  };
  switch (p) {
    case Pretokenizer::kGpt2: return byte_level_json(true);
    case Pretokenizer::kLlama3: return split(kLlama3Pattern);
    case Pretokenizer::kQwen2: return split(kQwen2Pattern);
    case Pretokenizer::kWhitespace: return split(kWhitespacePattern);
    case Pretokenizer::kNone: return byte_level_json(false);
  }
  return nullptr;
}

}  // namespace detail

inline TokenizerModel tokenizer_from_json(const nlohmann::json& doc, Pretokenizer* override_pre = nullptr) {
  if (!doc.contains("model") || !doc["model"].is_object()) throw ValidationError("tokenizer JSON has no 'model'");
  const auto& model = doc["model"];
  if (model.value("type", std::string{"BPE"}) != "BPE") {
    throw ValidationError("only BPE tokenizer models are supported, got '" + model.value("type", std::string{}) + "'");
  }
  bool byte_level = true;
  if (doc.contains("decoder")) {
    const auto& dec = doc["decoder"];
    byte_level = dec.is_object() && dec.dump().find("\"ByteLevel\"") != std::string::npos;
  }

  std::map<TokenId, TokenizerModel::Entry> by_id;
  for (const auto& [token, id] : model.at("vocab").items()) {
    by_id[id.get<TokenId>()] = {token, TokenKind::kNormal};
  }
  if (doc.contains("added_tokens") && doc["added_tokens"].is_array()) {
    for (const auto& t : doc["added_tokens"]) {
      const auto id = t.at("id").get<TokenId>();
      const auto content = t.at("content").get<std::string>();
      const bool special = t.value("special", false);
      auto it = by_id.find(id);
      if (special) {
        by_id[id] = {content, TokenKind::kSpecial};
      } else if (it == by_id.end()) {
        by_id[id] = {byte_level ? utf8::ByteMap::instance().encode(content) : content, TokenKind::kAdded};
      }
    }
  }
  std::vector<TokenizerModel::Entry> entries;
  entries.reserve(by_id.size());
  for (auto& [id, e] : by_id) {
    if (id != entries.size()) throw ValidationError("token ids are not dense: id " + std::to_string(entries.size()) + " is missing");
    entries.push_back(std::move(e));
  }

  std::vector<MergeRule> merges;
  if (model.contains("merges")) {
    for (const auto& m : model["merges"]) {
      if (m.is_string()) {
        const auto s = m.get<std::string>();
        const auto sp = s.find(' ');
        if (sp == std::string::npos) throw ValidationError("merge rule '" + s + "' has no separator");
        merges.emplace_back(s.substr(0, sp), s.substr(sp + 1));
      } else {
        merges.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
      }
    }
  }
  const auto pre = override_pre ? *override_pre
                                : detail::pretokenizer_from_json(doc.contains("pre_tokenizer") ? doc["pre_tokenizer"]
                                                                                               : nlohmann::json());
  return TokenizerModel(std::move(entries), std::move(merges), pre, byte_level);
}

inline nlohmann::json tokenizer_to_json(const TokenizerModel& tok) {
  nlohmann::json vocab = nlohmann::json::object();
  nlohmann::json added = nlohmann::json::array();
  for (TokenId id = 0; id < tok.size(); ++id) {
    switch (tok.kind(id)) {
      case TokenKind::kNormal: vocab[tok.token(id)] = id; break;
      case TokenKind::kAdded:
      case TokenKind::kSpecial: {
        const bool special = tok.kind(id) == TokenKind::kSpecial;
        added.push_back({{"id", id},
                         {"content", special ? tok.token(id) : tok.token_bytes(id)},
                         {"single_word", false},
                         {"lstrip", false},
                         {"rstrip", false},
                         {"normalized", !special},
                         {"special", special}});
        break;
      }
    }
  }
  // "left right" strings unless a token contains a space, then [left, right] pairs
  const bool pairs = std::any_of(tok.merges().begin(), tok.merges().end(), [](const MergeRule& m) {
    return m.first.find(' ') != std::string::npos || m.second.find(' ') != std::string::npos;
  });
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [l, r] : tok.merges()) {
    if (pairs) {
      merges.push_back({l, r});
    } else {
      merges.push_back(l + " " + r);
    }
  }
  return {{"version", "1.0"},
          {"truncation", nullptr},
          {"padding", nullptr},
          {"added_tokens", added},
          {"normalizer", nullptr},
          {"pre_tokenizer", detail::pretokenizer_to_json(tok.pretokenizer())},
          {"post_processor", nullptr},
          {"decoder", tok.byte_level() ? detail::byte_level_json(true) : nlohmann::json(nullptr)},
          {"model",
           {{"type", "BPE"},
            {"dropout", nullptr},
            {"unk_token", nullptr},
            {"continuing_subword_prefix", nullptr},
            {"end_of_word_suffix", nullptr},
            {"fuse_unk", false},
            {"byte_fallback", false},
            {"vocab", vocab},
            {"merges", merges}}}};
}

inline constexpr const char* kTokenizerFile = "tokenizer.json";

/// Accepts a tokenizer.json path or a directory containing one.
inline TokenizerModel load_tokenizer(const std::filesystem::path& path) {
  auto file = std::filesystem::is_directory(path) ? path / kTokenizerFile : path;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(io::read_text(file));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(file.string() + ": malformed tokenizer JSON: " + e.what(), e.byte);
  }
  return tokenizer_from_json(doc);
}

inline void save_tokenizer(const std::filesystem::path& path, const TokenizerModel& tok) {
  io::write_text(path, tokenizer_to_json(tok).dump(2) + "\n");
}

}  // namespace elchat
