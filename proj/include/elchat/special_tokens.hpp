#pragma once

#include <algorithm>
#include <cstring>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elchat/archive.hpp"
#include "elchat/error.hpp"
#include "elchat/expansion.hpp"
#include "elchat/tokenizer.hpp"

namespace elchat {

enum class SpecialOrigin { kTokenizerConfig, kChatTemplate, kManual };

inline const char* origin_name(SpecialOrigin o) {
  switch (o) {
    case SpecialOrigin::kTokenizerConfig: return "tokenizer-config";
    case SpecialOrigin::kChatTemplate: return "chat-template-scan";
    case SpecialOrigin::kManual: return "manual";
  }
  return "?";
}

struct SpecialTokenEntry {
  std::string content;
  TokenId id;
  SpecialOrigin origin;
};

/// Token ids whose weights are carried over from the source chat model.
/// Sorted by id, no duplicates.
struct SpecialTokenSet {
  std::vector<SpecialTokenEntry> tokens;

  std::vector<TokenId> ids() const {
    std::vector<TokenId> out;
    for (const auto& t : tokens) out.push_back(t.id);
    return out;
  }
  bool empty() const { return tokens.empty(); }
  std::size_t size() const { return tokens.size(); }

  // First origin wins for an id seen twice.
  void add(SpecialTokenEntry e) {
    auto it = std::lower_bound(tokens.begin(), tokens.end(), e.id,
                               [](const SpecialTokenEntry& t, TokenId id) { return t.id < id; });
    if (it != tokens.end() && it->id == e.id) return;
    tokens.insert(it, std::move(e));
  }
};

/// Control-token spellings found in chat templates: <|...|>, <s>, </s>.
inline std::vector<std::string> scan_template(const std::string& template_text) {
  static const std::regex pattern(R"(<\|[^\s<>|]+\|>|</?s>)");
  std::vector<std::string> found;
  for (auto it = std::sregex_iterator(template_text.begin(), template_text.end(), pattern);
       it != std::sregex_iterator(); ++it) {
    auto s = it->str();
    if (std::find(found.begin(), found.end(), s) == found.end()) found.push_back(std::move(s));
  }
  return found;
}

inline std::optional<TokenId> resolve_token(const TokenizerModel& tok, const std::string& text) {
  for (const auto& s : tok.special_tokens()) {
    if (s.content == text) return s.id;
  }
  return tok.find(tok.spell(text));
}

/// Declared special tokens of `tok`, plus every control token spelled out in
/// `template_text` (which must resolve to a single vocabulary entry).
inline SpecialTokenSet identify_special_tokens(const TokenizerModel& tok,
                                               const std::optional<std::string>& template_text = std::nullopt) {
  SpecialTokenSet set;
  for (const auto& s : tok.special_tokens()) set.add({s.content, s.id, SpecialOrigin::kTokenizerConfig});
  if (!template_text) return set;

  std::vector<std::string> missing;
  auto consider = [&](const std::string& text) {
    if (auto id = resolve_token(tok, text)) {
      set.add({text, *id, SpecialOrigin::kChatTemplate});
    } else {
      missing.push_back(text);
    }
  };
  for (const auto& s : scan_template(*template_text)) consider(s);
  for (const auto& s : tok.special_tokens()) {
    if (template_text->find(s.content) != std::string::npos) consider(s.content);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ValidationError("chat template references tokens missing from the vocabulary: " + list);
  }
  return set;
}

/// Explicit override list.
inline SpecialTokenSet special_tokens_from_list(const TokenizerModel& tok, const std::vector<std::string>& texts) {
  SpecialTokenSet set;
  for (const auto& text : texts) {
    auto id = resolve_token(tok, text);
    if (!id) throw ValidationError("special token '" + text + "' is not in the vocabulary");
    set.add({text, *id, SpecialOrigin::kManual});
  }
  return set;
}

/// Chat template from a tokenizer_config.json ("chat_template" as a string, or
/// a list of {name, template} where "default" is preferred).
inline std::optional<std::string> chat_template_from_config(const nlohmann::json& config) {
  if (!config.contains("chat_template")) return std::nullopt;
  const auto& ct = config["chat_template"];
  if (ct.is_string()) return ct.get<std::string>();
  if (ct.is_array()) {
    std::optional<std::string> first;
    for (const auto& e : ct) {
      if (!e.contains("template")) continue;
      if (e.value("name", std::string{}) == "default") return e["template"].get<std::string>();
      if (!first) first = e["template"].get<std::string>();
    }
    return first;
  }
  return std::nullopt;
}

struct TransplantResult {
  TensorArchive archive;
  std::vector<std::string> notices;
};

namespace detail {

// Copies vocabulary vector `id` of `src` over the same vector of `dst`.
inline void copy_vocab_vector(const Tensor& src, HeadOrientation so, std::uint64_t src_vocab, Tensor& dst,
                              HeadOrientation dorient, std::uint64_t dst_vocab, std::uint64_t hidden, TokenId id) {
  for (std::uint64_t h = 0; h < hidden; ++h) {
    const auto si = so == HeadOrientation::kVocabMajor ? id * hidden + h : h * src_vocab + id;
    const auto di = dorient == HeadOrientation::kVocabMajor ? id * hidden + h : h * dst_vocab + id;
    if (src.dtype == dst.dtype) {
      const auto es = src.element_size();
      std::memcpy(dst.data.data() + di * es, src.data.data() + si * es, es);
    } else {
      dst.set(di, src.get(si));
    }
  }
}

}  // namespace detail

/// For every id x in `s`: target embedding row x <- source row x, and target
/// head vector x <- source head vector x (along the vocabulary axis). Nothing
/// else changes. With `tied` the head is not copied separately; a head tensor
/// that aliases the embedding is kept identical to it.
inline TransplantResult transplant(const TensorArchive& source, const TensorArchive& target, const SpecialTokenSet& s,
                                   const std::string& emb_name = kDefaultEmbeddingName,
                                   const std::string& head_name = kDefaultHeadName, bool tied = false) {
  const auto& se = source.at(emb_name);
  const auto& te = target.at(emb_name);
  if (se.shape.size() != 2 || te.shape.size() != 2) throw ShapeError("embeddings must be 2-D");
  const auto sv = se.shape[0], tv = te.shape[0], hidden = se.shape[1];
  if (te.shape[1] != hidden) throw ShapeError("source and target embeddings differ in hidden size");
  if (tv < sv) {
    throw ShapeError("target embedding has " + std::to_string(tv) + " rows, fewer than the source's " +
                     std::to_string(sv));
  }
  for (TokenId id : s.ids()) {
    if (id >= sv) {
      throw ValidationError("special token id " + std::to_string(id) + " is outside the source vocabulary of " +
                            std::to_string(sv));
    }
  }

  TransplantResult r{target, {}};
  Tensor emb = te;
  for (TokenId id : s.ids()) {
    detail::copy_vocab_vector(se, HeadOrientation::kVocabMajor, sv, emb, HeadOrientation::kVocabMajor, tv, hidden, id);
  }

  const bool has_heads = source.contains(head_name) && target.contains(head_name);
  if (tied || !has_heads) {
    r.notices.push_back("tied embeddings: head copy skipped");
    if (target.contains(head_name)) {
      const auto& th = target.at(head_name);
      if (th.shape == te.shape && th.dtype == te.dtype && th.data == te.data) {
        Tensor alias = emb;
        alias.name = head_name;
        r.archive.put(std::move(alias));
      }
    }
  } else {
    const auto& sh = source.at(head_name);
    const auto& th = target.at(head_name);
    const auto so = detect_head_orientation(sh, sv, hidden);
    const auto to = detect_head_orientation(th, tv, hidden);
    Tensor head = th;
    for (TokenId id : s.ids()) detail::copy_vocab_vector(sh, so, sv, head, to, tv, hidden, id);
    r.archive.put(std::move(head));
  }
  r.archive.put(std::move(emb));
  return r;
}

inline nlohmann::json special_set_to_json(const SpecialTokenSet& s) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& t : s.tokens) out.push_back({{"token", t.content}, {"id", t.id}, {"origin", origin_name(t.origin)}});
  return out;
}

}  // namespace elchat
