#pragma once

// Fixtures shared by the unit tests and the acceptance binary: random
// tensors and text, toy model directories, and small independent oracles.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elchat/archive.hpp"
#include "elchat/commands.hpp"
#include "elchat/tokenizer.hpp"
#include "elchat/utf8.hpp"

namespace elchat::testing {

namespace fs = std::filesystem;

inline Tensor random_tensor(std::mt19937_64& rng, const std::string& name, DType dtype, Shape shape,
                            float scale = 1.0f) {
  std::normal_distribution<float> dist(0.0f, scale);
  std::vector<float> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::from_f32(name, dtype, std::move(shape), values);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "elchat") {
    std::random_device rd;
    path_ = fs::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

// ---------------------------------------------------------------------------
// Random text

struct ScriptRange {
  char32_t first, last;
};

// ASCII, Latin-1, Ethiopic, Bengali, Myanmar, CJK, and a few astral emoji.
inline const std::vector<ScriptRange>& text_ranges() {
  static const std::vector<ScriptRange> r{{0x20, 0x7E},     {0xA0, 0xFF},     {0x1200, 0x137F},
                                          {0x0980, 0x09FF}, {0x1000, 0x109F}, {0x4E00, 0x4FFF},
                                          {0x1F300, 0x1F64F}};
  return r;
}

inline std::string random_utf8(std::mt19937_64& rng, std::size_t max_len) {
  const auto& ranges = text_ranges();
  std::uniform_int_distribution<std::size_t> len_dist(0, max_len);
  std::uniform_int_distribution<std::size_t> range_dist(0, ranges.size() - 1);
  std::string out;
  const auto n = len_dist(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = ranges[range_dist(rng)];
    char32_t cp = std::uniform_int_distribution<std::uint32_t>(r.first, r.last)(rng);
    if (rng() % 8 == 0) cp = U" \n\t"[rng() % 3];
    utf8::append(out, cp);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Toy models

inline const std::vector<std::string>& toy_specials() {
  static const std::vector<std::string> s{"<|endoftext|>", "<|im_start|>", "<|im_end|>"};
  return s;
}

inline const char* toy_chat_template() {
  return "{% for m in messages %}<|im_start|>{{ m.role }}\n{{ m.content }}<|im_end|>\n{% endfor %}";
}

inline std::vector<std::string> toy_documents() {
  return {"the cat sat on the mat", "the dog sat on the log", "a cat and a dog",
          "cats and dogs and mats", "the mat is on the log", "ሰላም ለዓለም ሰላም",
          "ሰላም ሰላም ለሁሉም", "বাংলা ভাষা বাংলা", "মিয়ানမာ စာ မြန်မာ", "the end"};
}

/// Byte-level tokenizer trained on the toy documents, with the toy specials appended.
inline TokenizerModel toy_tokenizer(std::size_t vocab = 300) {
  BpeTrainOptions o;
  o.vocab_size = vocab;
  auto base = train_bpe(Corpus(toy_documents()), o);
  auto entries = base.entries();
  for (const auto& s : toy_specials()) entries.push_back({s, TokenKind::kSpecial});
  return TokenizerModel(std::move(entries), base.merges(), base.pretokenizer());
}

struct ToyModel {
  std::size_t vocab = 64;
  std::size_t hidden = 8;
  std::size_t layers = 2;
  DType dtype = DType::kF32;
  bool tied = false;
  bool hidden_major_head = false;
  std::uint64_t seed = 1;
};

inline std::string layer_name(std::size_t l, const std::string& leaf) {
  return "model.layers." + std::to_string(l) + "." + leaf;
}

inline TensorArchive toy_weights(const ToyModel& m) {
  std::mt19937_64 rng(m.seed);
  const auto h = m.hidden;
  std::vector<Tensor> ts;
  ts.push_back(random_tensor(rng, kDefaultEmbeddingName, m.dtype, {m.vocab, h}));
  if (!m.tied) {
    ts.push_back(random_tensor(rng, kDefaultHeadName, m.dtype, m.hidden_major_head ? Shape{h, m.vocab} : Shape{m.vocab, h}));
  }
  for (std::size_t l = 0; l < m.layers; ++l) {
    ts.push_back(random_tensor(rng, layer_name(l, "self_attn.q_proj.weight"), m.dtype, {h, h}, 0.1f));
    ts.push_back(random_tensor(rng, layer_name(l, "mlp.up_proj.weight"), m.dtype, {2 * h, h}, 0.1f));
    ts.push_back(random_tensor(rng, layer_name(l, "input_layernorm.weight"), m.dtype, {h}));
  }
  ts.push_back(random_tensor(rng, "model.norm.weight", m.dtype, {h}));
  return TensorArchive::from_tensors(std::move(ts));
}

/// Writes weights, tokenizer.json, tokenizer_config.json (with the toy chat
/// template) and config.json into `dir`.
inline void write_model_dir(const fs::path& dir, const TensorArchive& weights, const TokenizerModel& tok,
                            bool tied = false) {
  fs::create_directories(dir);
  write_archive(dir / kCheckpointFile, weights);
  save_tokenizer(dir / kTokenizerFile, tok);
  io::write_text(dir / cmd::kTokenizerConfigFile,
                 nlohmann::json{{"chat_template", toy_chat_template()}, {"eos_token", "<|im_end|>"}}.dump(2));
  io::write_text(dir / cmd::kModelConfigFile,
                 nlohmann::json{{"vocab_size", tok.size()}, {"tie_word_embeddings", tied}}.dump(2));
}

// ---------------------------------------------------------------------------
// Oracles

/// Applies BPE merges by spelling, one rule at a time in rank order, with no
/// reference to token ids. Input: the initial symbols of one pre-token.
inline std::vector<std::string> naive_bpe(std::vector<std::string> symbols, const std::vector<MergeRule>& merges) {
  for (const auto& [a, b] : merges) {
    std::vector<std::string> next;
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (i + 1 < symbols.size() && symbols[i] == a && symbols[i + 1] == b) {
        next.push_back(a + b);
        ++i;
      } else {
        next.push_back(symbols[i]);
      }
    }
    symbols.swap(next);
  }
  return symbols;
}

/// Code points of `s` as separate strings.
inline std::vector<std::string> split_chars(const std::string& s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto d = utf8::decode(s, i);
    out.push_back(s.substr(i, d.len));
    i += d.len;
  }
  return out;
}

/// Bytes of `s` as separate byte-mapped strings.
inline std::vector<std::string> split_bytes(const std::string& s) {
  std::vector<std::string> out;
  for (unsigned char c : s) out.push_back(utf8::ByteMap::instance().encode(c));
  return out;
}

/// Ids of the naive segmentation of `text` (no specials, no added tokens).
inline TokenIds naive_encode(const TokenizerModel& tok, const std::string& text) {
  TokenIds ids;
  for (auto w : pretokenize(text, tok.pretokenizer())) {
    const std::string word(w);
    auto symbols = tok.byte_level() ? split_bytes(word) : split_chars(word);
    for (const auto& piece : naive_bpe(std::move(symbols), tok.merges())) ids.push_back(*tok.find(piece));
  }
  return ids;
}

inline double l2_norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace elchat::testing
