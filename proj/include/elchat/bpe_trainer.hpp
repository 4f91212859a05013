#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "elchat/corpus.hpp"
#include "elchat/error.hpp"
#include "elchat/tokenizer.hpp"

namespace elchat {

/// Auxiliary tokenizer vocabulary size used across target languages.
inline constexpr std::size_t kDefaultAuxVocabSize = 50000;

struct BpeTrainOptions {
  std::size_t vocab_size = kDefaultAuxVocabSize;
  std::uint64_t seed = 0;
  // 0 = train on every document; otherwise a seeded uniform sample of this many.
  std::size_t max_documents = 0;
  Pretokenizer pretokenizer = Pretokenizer::kGpt2;
  // false: the alphabet is the set of code points seen in the training text
  bool byte_level = true;
};

/// Indices of the documents used for training, in corpus order.
inline std::vector<std::size_t> sample_documents(std::size_t doc_count, std::size_t max_documents,
                                                 std::uint64_t seed) {
  std::vector<std::size_t> idx(doc_count);
  for (std::size_t i = 0; i < doc_count; ++i) idx[i] = i;
  if (max_documents == 0 || max_documents >= doc_count) return idx;
  // explicit Fisher-Yates: std::shuffle's output is implementation-defined
  std::mt19937_64 rng(seed);
  for (std::size_t i = doc_count - 1; i > 0; --i) std::swap(idx[i], idx[rng() % (i + 1)]);
  idx.resize(max_documents);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// BPE training. A byte-level model starts from the 256 byte tokens (id = byte
/// value); a char-level model starts from the code points of the training
/// text in code-point order. Each step merges the most frequent adjacent pair,
/// ties going to the smaller left id and then the smaller right id. Stops at
/// `vocab_size` tokens or when no pair remains.
inline TokenizerModel train_bpe(const Corpus& corpus, const BpeTrainOptions& opts = {}) {
  if (opts.byte_level && opts.vocab_size < 256) {
    throw ValidationError("vocab_size " + std::to_string(opts.vocab_size) +
                          " is smaller than the 256-symbol byte alphabet");
  }
  if (corpus.empty()) throw ValidationError("cannot train a tokenizer on an empty corpus");

  std::map<std::string, std::uint64_t> word_counts;
  for (std::size_t d : sample_documents(corpus.doc_count(), opts.max_documents, opts.seed)) {
    for (auto w : pretokenize(corpus.documents()[d], opts.pretokenizer)) ++word_counts[std::string(w)];
  }

  std::vector<TokenizerModel::Entry> entries;
  if (opts.byte_level) {
    entries = TokenizerModel::byte_alphabet(opts.pretokenizer).entries();
  } else {
    std::set<char32_t> alphabet;
    for (const auto& [w, _] : word_counts) {
      for (std::size_t i = 0; i < w.size();) {
        const auto d = utf8::decode(w, i);
        alphabet.insert(d.cp);
        i += d.len;
      }
    }
    if (alphabet.size() > opts.vocab_size) {
      throw ValidationError("vocab_size " + std::to_string(opts.vocab_size) + " is smaller than the " +
                            std::to_string(alphabet.size()) + "-character alphabet");
    }
    for (char32_t cp : alphabet) {
      std::string s;
      utf8::append(s, cp);
      entries.push_back({s, TokenKind::kNormal});
    }
  }
  std::unordered_map<std::string, TokenId> known;
  for (TokenId id = 0; id < entries.size(); ++id) known.emplace(entries[id].token, id);
  std::vector<MergeRule> merges;

  struct Word {
    std::vector<TokenId> sym;
    std::int64_t count;
  };
  std::vector<Word> words;
  words.reserve(word_counts.size());
  for (const auto& [w, n] : word_counts) {
    Word word{{}, static_cast<std::int64_t>(n)};
    if (opts.byte_level) {
      for (char c : w) word.sym.push_back(static_cast<std::uint8_t>(c));
    } else {
      for (std::size_t i = 0; i < w.size();) {
        const auto d = utf8::decode(w, i);
        word.sym.push_back(known.at(w.substr(i, d.len)));
        i += d.len;
      }
    }
    words.push_back(std::move(word));
  }

  auto key_of = [](TokenId a, TokenId b) { return (static_cast<std::uint64_t>(a) << 32) | b; };
  std::unordered_map<std::uint64_t, std::int64_t> pair_count;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> pair_words;
  // ordered by (-count, left, right): begin() is the next merge
  std::set<std::tuple<std::int64_t, TokenId, TokenId>> queue;

  auto bump = [&](TokenId a, TokenId b, std::int64_t delta, std::uint32_t w) {
    const auto key = key_of(a, b);
    auto& c = pair_count[key];
    if (c > 0) queue.erase({-c, a, b});
    c += delta;
    if (c > 0) queue.insert({-c, a, b});
    if (delta > 0) pair_words[key].push_back(w);
  };
  auto account = [&](std::uint32_t w, std::int64_t sign) {
    const auto& word = words[w];
    for (std::size_t i = 0; i + 1 < word.sym.size(); ++i) bump(word.sym[i], word.sym[i + 1], sign * word.count, w);
  };

  for (std::uint32_t w = 0; w < words.size(); ++w) account(w, +1);

  while (entries.size() < opts.vocab_size && !queue.empty()) {
    const auto [neg, left, right] = *queue.begin();
    const auto key = key_of(left, right);
    std::string merged = entries[left].token + entries[right].token;
    TokenId out;
    if (auto it = known.find(merged); it != known.end()) {
      out = it->second;
    } else {
      out = static_cast<TokenId>(entries.size());
      entries.push_back({merged, TokenKind::kNormal});
      known.emplace(merged, out);
    }
    merges.emplace_back(entries[left].token, entries[right].token);

    auto affected = std::move(pair_words[key]);
    pair_words.erase(key);
    std::sort(affected.begin(), affected.end());
    affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
    for (std::uint32_t w : affected) {
      auto& sym = words[w].sym;
      bool present = false;
      for (std::size_t i = 0; i + 1 < sym.size() && !present; ++i) present = sym[i] == left && sym[i + 1] == right;
      if (!present) continue;
      account(w, -1);
      std::vector<TokenId> next;
      next.reserve(sym.size());
      for (std::size_t i = 0; i < sym.size(); ++i) {
        if (i + 1 < sym.size() && sym[i] == left && sym[i + 1] == right) {
          next.push_back(out);
          ++i;
        } else {
          next.push_back(sym[i]);
        }
      }
      sym.swap(next);
      account(w, +1);
    }
    if (auto it = pair_count.find(key); it != pair_count.end() && it->second > 0) {
      queue.erase({-it->second, left, right});
      it->second = 0;
    }
  }
  return TokenizerModel(std::move(entries), std::move(merges), opts.pretokenizer, opts.byte_level);
}

/// Occurrence count of every token id when each document is encoded on its own.
/// Index = token id.
inline std::vector<std::uint64_t> token_frequencies(const TokenizerModel& tok, const Corpus& corpus) {
  std::vector<std::uint64_t> counts(tok.size(), 0);
  CachedEncoder enc(tok);
  for (const auto& doc : corpus.documents()) enc.encode(doc, [&](TokenId id) { ++counts[id]; });
  return counts;
}

}  // namespace elchat
