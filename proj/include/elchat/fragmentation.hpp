#pragma once

// Token-count statistics for comparing tokenizers on the same text. Fewer
// tokens for the same text means fewer decode steps, so the ratio of token
// totals is used as an idealized decode-step speedup.

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "elchat/corpus.hpp"
#include "elchat/error.hpp"
#include "elchat/io.hpp"
#include "elchat/tokenizer.hpp"

namespace elchat {

struct Fertility {
  std::uint64_t tokens_total = 0;
  double tokens_per_byte = 0.0;
  double tokens_per_doc_mean = 0.0;
  std::uint64_t documents = 0;
  std::uint64_t bytes = 0;
};

/// Per-document token counts, each document encoded independently.
inline std::vector<std::uint64_t> document_token_counts(const TokenizerModel& tok, const Corpus& corpus) {
  std::vector<std::uint64_t> out;
  out.reserve(corpus.doc_count());
  CachedEncoder enc(tok);
  for (const auto& doc : corpus.documents()) out.push_back(enc.count(doc));
  return out;
}

inline Fertility fertility(const TokenizerModel& tok, const Corpus& corpus) {
  if (corpus.empty()) throw ValidationError("fertility needs a non-empty corpus");
  Fertility f;
  f.documents = corpus.doc_count();
  f.bytes = corpus.byte_count();
  for (auto n : document_token_counts(tok, corpus)) f.tokens_total += n;
  f.tokens_per_byte = f.bytes ? static_cast<double>(f.tokens_total) / static_cast<double>(f.bytes) : 0.0;
  f.tokens_per_doc_mean = static_cast<double>(f.tokens_total) / static_cast<double>(f.documents);
  return f;
}

/// tokens_total(a) / tokens_total(b) on the same corpus.
inline double fragmentation_ratio(const TokenizerModel& a, const TokenizerModel& b, const Corpus& corpus) {
  const auto ta = fertility(a, corpus).tokens_total;
  const auto tb = fertility(b, corpus).tokens_total;
  if (tb == 0) throw ValidationError("denominator tokenizer produced no tokens on the corpus");
  return static_cast<double>(ta) / static_cast<double>(tb);
}

/// True when every token of `base` exists in `extended` with the same id.
inline bool is_vocab_superset(const TokenizerModel& base, const TokenizerModel& extended) {
  if (extended.size() < base.size()) return false;
  for (TokenId id = 0; id < base.size(); ++id) {
    if (base.token(id) != extended.token(id) || base.kind(id) != extended.kind(id)) return false;
  }
  return true;
}

struct SpeedupEstimate {
  double ratio = 1.0;
  std::uint64_t source_tokens = 0;
  std::uint64_t expanded_tokens = 0;
  bool superset = true;  // false: warn, the ratio is still computed
};

inline constexpr const char* kSpeedupLabel = "idealized decode-step ratio";

/// Decode steps needed to emit `reference_outputs` with the source tokenizer
/// divided by the steps needed with the expanded one.
inline SpeedupEstimate estimate_speedup(const TokenizerModel& source, const TokenizerModel& expanded,
                                        const Corpus& reference_outputs) {
  SpeedupEstimate e;
  e.superset = is_vocab_superset(source, expanded);
  e.source_tokens = fertility(source, reference_outputs).tokens_total;
  e.expanded_tokens = fertility(expanded, reference_outputs).tokens_total;
  if (e.expanded_tokens == 0) throw ValidationError("expanded tokenizer produced no tokens");
  e.ratio = static_cast<double>(e.source_tokens) / static_cast<double>(e.expanded_tokens);
  return e;
}

struct FragReport {
  std::string corpus_id;
  std::map<std::string, Fertility> per_tokenizer;
  std::map<std::pair<std::string, std::string>, double> ratios;  // (a, b) -> total(a) / total(b)
};

/// Content digest of a corpus: sha256 over the documents joined by '\n'.
inline std::string corpus_digest(const Corpus& corpus) {
  std::string joined;
  joined.reserve(corpus.byte_count() + corpus.doc_count());
  for (const auto& d : corpus.documents()) {
    joined += d;
    joined += '\n';
  }
  return io::sha256_hex(joined);
}

inline FragReport build_report(const std::vector<std::pair<std::string, const TokenizerModel*>>& tokenizers,
                               const Corpus& corpus, std::string corpus_id = {}) {
  FragReport r;
  r.corpus_id = corpus_id.empty() ? "sha256:" + corpus_digest(corpus) : std::move(corpus_id);
  for (const auto& [label, tok] : tokenizers) {
    if (!r.per_tokenizer.emplace(label, fertility(*tok, corpus)).second) {
      throw ValidationError("duplicate tokenizer label '" + label + "'");
    }
  }
  for (const auto& [a, fa] : r.per_tokenizer) {
    for (const auto& [b, fb] : r.per_tokenizer) {
      r.ratios[{a, b}] = static_cast<double>(fa.tokens_total) / static_cast<double>(fb.tokens_total);
    }
  }
  return r;
}

/// Largest |r(a,b) * r(b,a) - 1| over all pairs.
inline double reciprocity_error(const FragReport& r) {
  double worst = 0.0;
  for (const auto& [key, v] : r.ratios) {
    const auto back = r.ratios.at({key.second, key.first});
    worst = std::max(worst, std::abs(v * back - 1.0));
  }
  return worst;
}

inline nlohmann::json report_to_json(const FragReport& r) {
  const double recip = reciprocity_error(r);
  if (recip > 1e-9) throw IntegrityError("fragmentation ratios are not reciprocal");
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [label, f] : r.per_tokenizer) {
    per[label] = {{"tokens_total", f.tokens_total},
                  {"tokens_per_byte", f.tokens_per_byte},
                  {"tokens_per_doc_mean", f.tokens_per_doc_mean}};
  }
  nlohmann::json ratios = nlohmann::json::object();
  for (const auto& [key, v] : r.ratios) ratios[key.first][key.second] = v;
  std::uint64_t docs = 0, bytes = 0;
  if (!r.per_tokenizer.empty()) {
    docs = r.per_tokenizer.begin()->second.documents;
    bytes = r.per_tokenizer.begin()->second.bytes;
  }
  return {{"corpus_id", r.corpus_id},
          {"corpus", {{"documents", docs}, {"bytes", bytes}}},
          {"per_tokenizer", per},
          {"ratios", ratios},
          {"ratio_definition", "ratios[a][b] = tokens_total(a) / tokens_total(b)"},
          {"reciprocity_max_error", recip}};
}

inline void emit_report(const FragReport& r, const std::filesystem::path& path) {
  io::write_text(path, report_to_json(r).dump(2) + "\n");
}

inline std::string report_csv(const FragReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "tokenizer,tokens_total,tokens_per_byte,tokens_per_doc_mean\n";
  for (const auto& [label, f] : r.per_tokenizer) {
    out << label << ',' << f.tokens_total << ',' << f.tokens_per_byte << ',' << f.tokens_per_doc_mean << '\n';
  }
  return out.str();
}

}  // namespace elchat
