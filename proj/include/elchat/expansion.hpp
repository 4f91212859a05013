#pragma once

// Vocabulary expansion: choose novel tokens from an auxiliary tokenizer, append
// them to the source tokenizer, grow the embedding and LM head, and initialize
// each new row/column as the mean of its source-tokenizer decomposition.

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elchat/archive.hpp"
#include "elchat/bpe_trainer.hpp"
#include "elchat/corpus.hpp"
#include "elchat/error.hpp"
#include "elchat/layer_pattern.hpp"
#include "elchat/tokenizer.hpp"

namespace elchat {

/// Number of new target-language tokens added by default.
inline constexpr std::size_t kDefaultNewTokens = 10000;

inline constexpr const char* kDefaultEmbeddingName = "model.embed_tokens.weight";
inline constexpr const char* kDefaultHeadName = "lm_head.weight";
inline constexpr const char* kHeadOrientationKey = "elchat.head_orientation";

struct NewToken {
  std::string text;  // raw UTF-8
  TokenId id;
  std::uint64_t frequency;
  TokenIds decomposition;  // under the unexpanded source tokenizer

  friend bool operator==(const NewToken&, const NewToken&) = default;
};

struct ExpansionPlan {
  std::vector<NewToken> new_tokens;
  std::size_t source_vocab_size = 0;
  std::size_t k = 0;             // requested
  std::size_t available = 0;     // novel candidates found
  bool truncated = false;        // available < k

  friend bool operator==(const ExpansionPlan&, const ExpansionPlan&) = default;
};

/// Ranking of candidate tokens: frequency descending, then byte length
/// descending, then byte order.
inline bool new_token_before(const NewToken& a, const NewToken& b) {
  if (a.frequency != b.frequency) return a.frequency > b.frequency;
  if (a.text.size() != b.text.size()) return a.text.size() > b.text.size();
  return a.text < b.text;
}

/// Top-k auxiliary tokens absent from the source vocabulary, ranked by their
/// frequency under the auxiliary tokenizer on `corpus`. Candidates are the
/// auxiliary BPE vocabulary entries whose bytes are valid UTF-8.
inline ExpansionPlan select_new_tokens(const TokenizerModel& source, const TokenizerModel& aux, const Corpus& corpus,
                                       std::size_t k) {
  const auto freq = token_frequencies(aux, corpus);
  std::vector<NewToken> candidates;
  for (TokenId id = 0; id < aux.size(); ++id) {
    if (aux.kind(id) != TokenKind::kNormal) continue;
    auto text = aux.token_bytes(id);
    if (text.empty() || !utf8::is_valid(text) || source.find(source.spell(text))) continue;
    candidates.push_back({std::move(text), 0, freq[id], {}});
  }
  std::sort(candidates.begin(), candidates.end(), new_token_before);

  ExpansionPlan plan;
  plan.source_vocab_size = source.size();
  plan.k = k;
  plan.available = candidates.size();
  plan.truncated = candidates.size() < k;
  candidates.resize(std::min(k, candidates.size()));
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto& c = candidates[i];
    c.id = static_cast<TokenId>(source.size() + i);
    c.decomposition = source.encode(c.text, /*allow_special=*/false);
  }
  plan.new_tokens = std::move(candidates);
  return plan;
}

inline void check_plan(const TokenizerModel& source, const ExpansionPlan& plan) {
  if (plan.source_vocab_size != source.size()) {
    throw ValidationError("plan was built for a vocabulary of " + std::to_string(plan.source_vocab_size) +
                          " tokens but the source tokenizer has " + std::to_string(source.size()));
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < plan.new_tokens.size(); ++i) {
    const auto& t = plan.new_tokens[i];
    if (t.id != plan.source_vocab_size + i) {
      throw ValidationError("plan token '" + t.text + "' has id " + std::to_string(t.id) + ", expected " +
                            std::to_string(plan.source_vocab_size + i));
    }
    if (source.find(source.spell(t.text)) || !seen.insert(t.text).second) {
      throw ValidationError("plan token '" + t.text + "' collides with an existing token");
    }
  }
}

inline TokenizerModel expand_tokenizer(const TokenizerModel& source, const ExpansionPlan& plan) {
  check_plan(source, plan);
  std::vector<std::string> texts;
  texts.reserve(plan.new_tokens.size());
  for (const auto& t : plan.new_tokens) texts.push_back(t.text);
  return source.with_added_tokens(texts);
}

enum class HeadOrientation { kVocabMajor, kHiddenMajor };

inline const char* orientation_name(HeadOrientation o) {
  return o == HeadOrientation::kVocabMajor ? "vocab_major" : "hidden_major";
}

/// [V, H] is vocab-major (the usual nn.Linear storage); [H, V] is hidden-major.
/// A square head is taken as vocab-major.
inline HeadOrientation detect_head_orientation(const Tensor& head, std::uint64_t vocab, std::uint64_t hidden) {
  if (head.shape.size() == 2 && head.shape[0] == vocab && head.shape[1] == hidden) return HeadOrientation::kVocabMajor;
  if (head.shape.size() == 2 && head.shape[0] == hidden && head.shape[1] == vocab) return HeadOrientation::kHiddenMajor;
  throw ShapeError("head '" + head.name + "' has shape " + shape_str(head.shape) + ", expected [" +
                   std::to_string(vocab) + ", " + std::to_string(hidden) + "] or [" + std::to_string(hidden) + ", " +
                   std::to_string(vocab) + "]");
}

namespace detail {

// Mean of the selected vocabulary vectors of `t`, accumulated in f32.
inline std::vector<float> mean_of(const Tensor& t, HeadOrientation o, std::uint64_t vocab, std::uint64_t hidden,
                                  const TokenIds& ids) {
  std::vector<float> acc(hidden, 0.0f);
  for (TokenId id : ids) {
    for (std::uint64_t h = 0; h < hidden; ++h) {
      const auto idx = o == HeadOrientation::kVocabMajor ? id * hidden + h : h * vocab + id;
      acc[h] += t.get(idx);
    }
  }
  const auto m = static_cast<float>(ids.size());
  for (auto& v : acc) v /= m;
  return acc;
}

// Appends `rows` vocabulary vectors to `t`; existing payload bytes are carried over untouched.
inline Tensor grow_vocab(const Tensor& t, HeadOrientation o, std::uint64_t vocab, std::uint64_t hidden,
                         const std::vector<std::vector<float>>& rows) {
  const std::uint64_t k = rows.size();
  Tensor out;
  out.name = t.name;
  out.dtype = t.dtype;
  Tensor scratch{t.name, t.dtype, {hidden}, std::vector<std::uint8_t>(hidden * t.element_size())};
  auto encode_row = [&](const std::vector<float>& row) {
    for (std::uint64_t h = 0; h < hidden; ++h) scratch.set(h, row[h]);
    return scratch.data;
  };
  const auto es = t.element_size();
  if (o == HeadOrientation::kVocabMajor) {
    out.shape = {vocab + k, hidden};
    out.data = t.data;
    for (const auto& row : rows) {
      auto bytes = encode_row(row);
      out.data.insert(out.data.end(), bytes.begin(), bytes.end());
    }
  } else {
    out.shape = {hidden, vocab + k};
    out.data.resize((vocab + k) * hidden * es);
    std::vector<std::vector<std::uint8_t>> encoded;
    for (const auto& row : rows) encoded.push_back(encode_row(row));
    for (std::uint64_t h = 0; h < hidden; ++h) {
      auto* dst = out.data.data() + h * (vocab + k) * es;
      std::copy_n(t.data.data() + h * vocab * es, vocab * es, dst);
      for (std::uint64_t j = 0; j < k; ++j) std::copy_n(encoded[j].data() + h * es, es, dst + (vocab + j) * es);
    }
  }
  return out;
}

}  // namespace detail

/// Grows the embedding (and head) by plan.new_tokens.size() vocabulary entries.
/// Each new entry is the f32 mean of its decomposition's entries in the same
/// tensor. With `tied`, the expanded embedding is also stored under
/// `head_name` when that name exists. The head orientation is recorded in the
/// archive metadata under "elchat.head_orientation".
inline TensorArchive mean_initialize(const TensorArchive& archive, const ExpansionPlan& plan,
                                     const std::string& emb_name = kDefaultEmbeddingName,
                                     const std::string& head_name = kDefaultHeadName, bool tied = false) {
  const auto& emb = archive.at(emb_name);
  if (emb.shape.size() != 2) throw ShapeError("embedding '" + emb_name + "' must be 2-D, got " + shape_str(emb.shape));
  const auto vocab = emb.shape[0];
  const auto hidden = emb.shape[1];
  if (vocab != plan.source_vocab_size) {
    throw IntegrityError("embedding '" + emb_name + "' has " + std::to_string(vocab) + " rows but the plan expects " +
                         std::to_string(plan.source_vocab_size));
  }
  for (const auto& t : plan.new_tokens) {
    if (t.decomposition.empty()) throw IntegrityError("new token '" + t.text + "' has an empty decomposition");
    for (TokenId id : t.decomposition) {
      if (id >= vocab) {
        throw IntegrityError("decomposition of '" + t.text + "' references id " + std::to_string(id) +
                             " outside the source vocabulary of " + std::to_string(vocab));
      }
    }
  }

  auto expand = [&](const Tensor& t, HeadOrientation o) {
    std::vector<std::vector<float>> rows;
    rows.reserve(plan.new_tokens.size());
    for (const auto& nt : plan.new_tokens) rows.push_back(detail::mean_of(t, o, vocab, hidden, nt.decomposition));
    return detail::grow_vocab(t, o, vocab, hidden, rows);
  };

  TensorArchive out = archive;
  auto new_emb = expand(emb, HeadOrientation::kVocabMajor);
  if (tied) {
    if (archive.contains(head_name)) {
      const auto& head = archive.at(head_name);
      if (head.shape != emb.shape || head.dtype != emb.dtype) {
        throw ShapeError("tied head '" + head_name + "' differs from the embedding in shape or dtype");
      }
      Tensor alias = new_emb;
      alias.name = head_name;
      out.put(std::move(alias));
    }
    out.metadata()[kHeadOrientationKey] = "tied";
  } else {
    const auto& head = archive.at(head_name);
    const auto o = detect_head_orientation(head, vocab, hidden);
    out.put(expand(head, o));
    out.metadata()[kHeadOrientationKey] = orientation_name(o);
  }
  out.put(std::move(new_emb));
  return out;
}

// ---------------------------------------------------------------------------

struct FreezePlan {
  std::vector<std::string> trainable;
  std::vector<std::string> frozen;
  std::vector<std::size_t> layer_indices;
  std::size_t n_layers = 0;

  friend bool operator==(const FreezePlan&, const FreezePlan&) = default;
};

/// Continual pre-training parameter split: embedding, head, and the `n_outer`
/// bottom and top layers train; everything else is frozen.
inline FreezePlan emit_freeze_plan(const TensorArchive& archive, const LayerPattern& pattern,
                                   const std::string& emb_name = kDefaultEmbeddingName,
                                   const std::string& head_name = kDefaultHeadName, std::size_t n_outer = 2) {
  archive.at(emb_name);
  std::set<std::size_t> layers;
  for (const auto& name : archive.names()) {
    if (auto l = pattern.layer_of(name)) layers.insert(*l);
  }
  if (layers.empty()) throw ValidationError("layer pattern '" + pattern.str() + "' matches no tensor names");

  FreezePlan plan;
  plan.n_layers = *layers.rbegin() + 1;
  std::set<std::size_t> chosen;
  for (std::size_t i = 0; i < std::min(n_outer, plan.n_layers); ++i) {
    chosen.insert(i);
    chosen.insert(plan.n_layers - 1 - i);
  }
  plan.layer_indices.assign(chosen.begin(), chosen.end());
  for (const auto& name : archive.names()) {
    const auto l = pattern.layer_of(name);
    const bool train = name == emb_name || name == head_name || (l && chosen.count(*l));
    (train ? plan.trainable : plan.frozen).push_back(name);
  }
  return plan;
}

// ---------------------------------------------------------------------------
// JSON forms

inline nlohmann::json plan_to_json(const ExpansionPlan& plan) {
  nlohmann::json tokens = nlohmann::json::array();
  for (const auto& t : plan.new_tokens) {
    tokens.push_back({{"token", t.text}, {"id", t.id}, {"frequency", t.frequency}, {"decomposition", t.decomposition}});
  }
  return {{"source_vocab_size", plan.source_vocab_size},
          {"k", plan.k},
          {"available", plan.available},
          {"truncated", plan.truncated},
          {"decomposed_with", "source tokenizer before expansion"},
          {"new_tokens", tokens}};
}

inline ExpansionPlan plan_from_json(const nlohmann::json& j) {
  ExpansionPlan plan;
  plan.source_vocab_size = j.at("source_vocab_size").get<std::size_t>();
  plan.k = j.at("k").get<std::size_t>();
  plan.available = j.value("available", std::size_t{0});
  plan.truncated = j.value("truncated", false);
  for (const auto& t : j.at("new_tokens")) {
    plan.new_tokens.push_back({t.at("token").get<std::string>(), t.at("id").get<TokenId>(),
                               t.at("frequency").get<std::uint64_t>(), t.at("decomposition").get<TokenIds>()});
  }
  return plan;
}

inline nlohmann::json freeze_plan_to_json(const FreezePlan& plan) {
  return {{"n_layers", plan.n_layers},
          {"layer_indices", plan.layer_indices},
          {"trainable", plan.trainable},
          {"frozen", plan.frozen}};
}

}  // namespace elchat
