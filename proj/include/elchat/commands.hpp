#pragma once

// The work behind each CLI subcommand. Every command writes its artifacts into
// an output directory together with manifest.json, which records the content
// hash of every input (by role) and every output (by file name). Manifests
// hold no absolute paths or timestamps, so identical inputs give identical
// manifests.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "elchat/archive.hpp"
#include "elchat/bpe_trainer.hpp"
#include "elchat/corpus.hpp"
#include "elchat/error.hpp"
#include "elchat/expansion.hpp"
#include "elchat/fragmentation.hpp"
#include "elchat/io.hpp"
#include "elchat/layer_pattern.hpp"
#include "elchat/merge.hpp"
#include "elchat/special_tokens.hpp"
#include "elchat/tokenizer.hpp"

namespace elchat::cmd {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kPlanFile = "expansion_plan.json";
inline constexpr const char* kFreezePlanFile = "freeze_plan.json";
inline constexpr const char* kMergeReportFile = "merge_report.json";
inline constexpr const char* kSpecialTokensFile = "special_tokens.json";
inline constexpr const char* kFragReportFile = "frag_report.json";
inline constexpr const char* kTokenizerConfigFile = "tokenizer_config.json";
inline constexpr const char* kModelConfigFile = "config.json";

// Files next to the weights that are carried from the input model to the output.
inline const std::vector<std::string>& side_files() {
  static const std::vector<std::string> names{kTokenizerFile, kTokenizerConfigFile, kModelConfigFile,
                                              "generation_config.json", "special_tokens_map.json"};
  return names;
}

struct Manifest {
  explicit Manifest(std::string cmd) : command(std::move(cmd)) {}

  std::string command;
  nlohmann::json parameters = nlohmann::json::object();
  std::map<std::string, std::string> inputs;   // role -> sha256
  std::map<std::string, std::string> outputs;  // file name -> sha256
  std::vector<std::string> warnings;

  nlohmann::json to_json() const {
    return {{"tool", "elchat"},
            {"version", kToolVersion},
            {"command", command},
            {"parameters", parameters},
            {"inputs", inputs},
            {"outputs", outputs},
            {"warnings", warnings}};
  }
};

/// Hashes `path` under `role`. A directory contributes one entry per regular
/// file, keyed "role/relative/path".
inline void record_input(Manifest& m, const std::string& role, const fs::path& path) {
  if (!fs::exists(path)) throw IoError("input '" + path.string() + "' does not exist");
  if (!fs::is_directory(path)) {
    m.inputs[role] = io::sha256_file(path);
    return;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) m.inputs[role + "/" + fs::relative(f, path).generic_string()] = io::sha256_file(f);
}

inline void write_output(Manifest& m, const fs::path& dir, const std::string& name,
                         std::span<const std::uint8_t> bytes) {
  io::write_file(dir / name, bytes);
  m.outputs[name] = io::sha256_hex(bytes);
}

inline void write_output(Manifest& m, const fs::path& dir, const std::string& name, std::string_view text) {
  write_output(m, dir, name, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline void write_json_output(Manifest& m, const fs::path& dir, const std::string& name, const nlohmann::json& j) {
  write_output(m, dir, name, j.dump(2) + "\n");
}

inline void finish(const Manifest& m, const fs::path& dir) {
  io::write_text(dir / kManifestFile, m.to_json().dump(2) + "\n");
}

// Output directories may not coincide with an input.
inline void check_distinct(const fs::path& out, const std::vector<fs::path>& inputs) {
  const auto o = fs::weakly_canonical(out);
  for (const auto& in : inputs) {
    if (!in.empty() && fs::weakly_canonical(in) == o) {
      throw ValidationError("output path '" + out.string() + "' is also an input");
    }
  }
}

// ---------------------------------------------------------------------------
// Model directories

struct ModelDir {
  fs::path dir;
  TensorArchive weights;
  std::optional<TokenizerModel> tokenizer;
  std::map<std::string, std::vector<std::uint8_t>> side;  // raw bytes of side_files() present

  const TokenizerModel& tok() const {
    if (!tokenizer) throw IoError("model '" + dir.string() + "' has no " + kTokenizerFile);
    return *tokenizer;
  }

  std::optional<nlohmann::json> side_json(const std::string& name) const {
    auto it = side.find(name);
    if (it == side.end()) return std::nullopt;
    try {
      return nlohmann::json::parse(it->second.begin(), it->second.end());
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(name + " in '" + dir.string() + "' is not valid JSON: " + e.what(), e.byte);
    }
  }

  /// Tied when config.json says so, or when there is no separate head tensor.
  bool tied(const std::string& head_name) const {
    if (auto cfg = side_json(kModelConfigFile); cfg && cfg->contains("tie_word_embeddings") &&
                                                (*cfg)["tie_word_embeddings"].is_boolean()) {
      return (*cfg)["tie_word_embeddings"].get<bool>();
    }
    return !weights.contains(head_name);
  }

  std::optional<std::string> chat_template() const {
    auto cfg = side_json(kTokenizerConfigFile);
    return cfg ? chat_template_from_config(*cfg) : std::nullopt;
  }
};

/// A checkpoint directory (single file or shard index) or a bare .safetensors
/// file, whose siblings are then taken as the side files.
inline ModelDir load_model_dir(const fs::path& path, const std::string& role) {
  if (!fs::exists(path)) throw IoError(role + " model '" + path.string() + "' does not exist");
  ModelDir m;
  m.dir = fs::is_directory(path) ? path : path.parent_path();
  m.weights = open_checkpoint(path);
  for (const auto& name : side_files()) {
    const auto p = m.dir / name;
    if (fs::is_regular_file(p)) m.side[name] = io::read_file(p);
  }
  if (m.side.count(kTokenizerFile)) m.tokenizer = load_tokenizer(m.dir / kTokenizerFile);
  return m;
}

inline void copy_side_files(Manifest& m, const ModelDir& from, const fs::path& out) {
  for (const auto& [name, bytes] : from.side) write_output(m, out, name, bytes);
}

inline void write_weights(Manifest& m, const fs::path& out, const TensorArchive& archive) {
  write_output(m, out, kCheckpointFile, serialize_archive(archive));
}

// ---------------------------------------------------------------------------
// tokenizer-train

struct TokenizerTrainOptions {
  fs::path corpus;
  fs::path out;
  std::size_t vocab_size = kDefaultAuxVocabSize;
  std::uint64_t seed = 0;
  std::size_t max_documents = 0;
  std::string pretokenizer = "gpt2";
  std::string text_field = "text";
  bool char_level = false;
};

inline Manifest tokenizer_train(const TokenizerTrainOptions& o) {
  Manifest m("tokenizer-train");
  m.parameters = {{"vocab_size", o.vocab_size},   {"seed", o.seed},
                  {"max_documents", o.max_documents}, {"pretokenizer", o.pretokenizer},
                  {"text_field", o.text_field},   {"char_level", o.char_level}};
  check_distinct(o.out, {o.corpus});
  record_input(m, "corpus", o.corpus);
  const auto corpus = load_corpus(o.corpus, o.text_field);
  BpeTrainOptions t;
  t.vocab_size = o.vocab_size;
  t.seed = o.seed;
  t.max_documents = o.max_documents;
  t.pretokenizer = parse_pretokenizer(o.pretokenizer);
  t.byte_level = !o.char_level;
  const auto tok = train_bpe(corpus, t);
  if (tok.size() < o.vocab_size) {
    m.warnings.push_back("corpus ran out of pairs: trained " + std::to_string(tok.size()) + " of " +
                         std::to_string(o.vocab_size) + " tokens");
  }
  m.parameters["trained_vocab_size"] = tok.size();
  write_output(m, o.out, kTokenizerFile, tokenizer_to_json(tok).dump(2) + "\n");
  finish(m, o.out);
  return m;
}

// ---------------------------------------------------------------------------
// expand

struct TensorNames {
  std::string embedding = kDefaultEmbeddingName;
  std::string head = kDefaultHeadName;
};

struct ExpandOptions {
  fs::path source_model;
  fs::path aux_tokenizer;
  fs::path corpus;
  fs::path out;
  std::size_t k = kDefaultNewTokens;
  std::string text_field = "text";
  TensorNames names;
};

inline Manifest expand(const ExpandOptions& o) {
  Manifest m("expand");
  m.parameters = {{"k", o.k}, {"text_field", o.text_field}, {"embedding", o.names.embedding}, {"head", o.names.head}};
  check_distinct(o.out, {o.source_model, o.aux_tokenizer, o.corpus});
  record_input(m, "source_model", o.source_model);
  record_input(m, "aux_tokenizer", o.aux_tokenizer);
  record_input(m, "corpus", o.corpus);

  const auto src = load_model_dir(o.source_model, "source");
  const auto aux = load_tokenizer(o.aux_tokenizer);
  const auto corpus = load_corpus(o.corpus, o.text_field);

  const auto plan = select_new_tokens(src.tok(), aux, corpus, o.k);
  if (plan.truncated) {
    m.warnings.push_back("requested k=" + std::to_string(o.k) + " new tokens but only " +
                         std::to_string(plan.available) + " novel tokens are available");
  }
  const auto expanded_tok = expand_tokenizer(src.tok(), plan);
  const bool tied = src.tied(o.names.head);
  const auto weights = mean_initialize(src.weights, plan, o.names.embedding, o.names.head, tied);
  m.parameters["tied"] = tied;
  m.parameters["new_tokens"] = plan.new_tokens.size();

  write_weights(m, o.out, weights);
  write_output(m, o.out, kTokenizerFile, tokenizer_to_json(expanded_tok).dump(2) + "\n");
  write_json_output(m, o.out, kPlanFile, plan_to_json(plan));
  for (const auto& [name, bytes] : src.side) {
    if (name == kTokenizerFile) continue;
    if (name == kModelConfigFile) {
      auto cfg = *src.side_json(name);
      if (cfg.contains("vocab_size")) cfg["vocab_size"] = expanded_tok.size();
      write_json_output(m, o.out, name, cfg);
      continue;
    }
    write_output(m, o.out, name, bytes);
  }
  finish(m, o.out);
  return m;
}

// ---------------------------------------------------------------------------
// freeze-plan

struct FreezePlanOptions {
  fs::path model;
  fs::path out;
  std::string layer_pattern = kDefaultLayerPattern;
  std::size_t n_outer = 2;
  TensorNames names;
};

inline Manifest freeze_plan(const FreezePlanOptions& o) {
  Manifest m("freeze-plan");
  m.parameters = {{"layer_pattern", o.layer_pattern},
                  {"n_outer", o.n_outer},
                  {"embedding", o.names.embedding},
                  {"head", o.names.head}};
  check_distinct(o.out, {o.model});
  record_input(m, "model", o.model);
  const auto weights = open_checkpoint(o.model);
  const auto plan = emit_freeze_plan(weights, LayerPattern(o.layer_pattern), o.names.embedding, o.names.head, o.n_outer);
  write_json_output(m, o.out, kFreezePlanFile, freeze_plan_to_json(plan));
  finish(m, o.out);
  return m;
}

// ---------------------------------------------------------------------------
// merge

struct MergeSettings {
  std::string preset = "elchat-default";
  std::string method = "slerp";
  double alpha = 0.5;                        // default_alpha
  std::map<std::size_t, double> layer_alpha;  // overrides on top of the preset
  std::vector<std::string> exclude;           // empty: embedding and head
  std::string layer_pattern = kDefaultLayerPattern;
  double parallel_eps = kDefaultParallelEps;
  std::string output_dtype;  // empty: keep each tensor's dtype
};

inline MergeSchedule make_schedule(const MergeSettings& s, const TensorArchive& target, const TensorNames& names) {
  const LayerPattern pattern(s.layer_pattern);
  const auto n_layers = count_layers(target, pattern);
  if (n_layers == 0) throw ValidationError("layer pattern '" + s.layer_pattern + "' matches no tensor names");
  auto schedule = build_schedule(parse_preset(s.preset), n_layers, s.alpha);
  for (const auto& [layer, a] : s.layer_alpha) {
    if (layer >= n_layers) {
      throw ValidationError("alpha given for layer " + std::to_string(layer) + " but the model has " +
                            std::to_string(n_layers) + " layers");
    }
    schedule.per_layer[layer] = a;
  }
  schedule.method = parse_method(s.method);
  schedule.excluded = s.exclude.empty() ? std::vector<std::string>{names.embedding, names.head} : s.exclude;
  schedule.layer_pattern = s.layer_pattern;
  schedule.parallel_eps = s.parallel_eps;
  schedule.validate();
  return schedule;
}

inline std::optional<DType> output_dtype(const MergeSettings& s) {
  if (s.output_dtype.empty()) return std::nullopt;
  return parse_dtype_flag(s.output_dtype);
}

inline nlohmann::json settings_json(const MergeSettings& s) {
  nlohmann::json overrides = nlohmann::json::object();
  for (const auto& [l, a] : s.layer_alpha) overrides[std::to_string(l)] = a;
  return {{"preset", s.preset},
          {"method", s.method},
          {"alpha", s.alpha},
          {"layer_alpha", overrides},
          {"exclude", s.exclude},
          {"layer_pattern", s.layer_pattern},
          {"parallel_eps", s.parallel_eps},
          {"output_dtype", s.output_dtype}};
}

struct MergeOptions {
  fs::path source_model;  // the original chat model
  fs::path target_model;  // the adapted model
  fs::path out;
  MergeSettings merge;
  TensorNames names;
};

inline Manifest merge(const MergeOptions& o) {
  Manifest m("merge");
  m.parameters = settings_json(o.merge);
  check_distinct(o.out, {o.source_model, o.target_model});
  record_input(m, "source_model", o.source_model);
  record_input(m, "target_model", o.target_model);
  const auto src = load_model_dir(o.source_model, "source");
  const auto tgt = load_model_dir(o.target_model, "target");
  const auto schedule = make_schedule(o.merge, tgt.weights, o.names);
  const auto result = merge_archives(src.weights, tgt.weights, schedule, output_dtype(o.merge));
  write_weights(m, o.out, result.archive);
  write_json_output(m, o.out, kMergeReportFile, merge_report_json(schedule, result));
  copy_side_files(m, tgt, o.out);
  finish(m, o.out);
  return m;
}

// ---------------------------------------------------------------------------
// copy-special

struct SpecialSettings {
  std::vector<std::string> tokens;  // empty: declared specials plus chat-template scan
  fs::path chat_template;           // empty: taken from the source tokenizer_config.json
};

// The special-token set of `source`, checked against the target vocabulary.
inline SpecialTokenSet resolve_special_set(const SpecialSettings& s, const ModelDir& source, const ModelDir& target) {
  SpecialTokenSet set;
  if (!s.tokens.empty()) {
    set = special_tokens_from_list(source.tok(), s.tokens);
  } else {
    auto tmpl = s.chat_template.empty() ? source.chat_template() : std::optional(io::read_text(s.chat_template));
    set = identify_special_tokens(source.tok(), tmpl);
  }
  if (target.tokenizer) {
    for (const auto& t : set.tokens) {
      if (t.id >= target.tokenizer->size() || target.tokenizer->token(t.id) != source.tok().token(t.id)) {
        throw ValidationError("special token '" + t.content + "' (id " + std::to_string(t.id) +
                              ") does not have the same id in the target tokenizer");
      }
    }
  }
  return set;
}

struct CopySpecialOptions {
  fs::path source_model;
  fs::path target_model;
  fs::path out;
  SpecialSettings special;
  TensorNames names;
};

inline Manifest copy_special(const CopySpecialOptions& o) {
  Manifest m("copy-special");
  m.parameters = {{"tokens", o.special.tokens}, {"embedding", o.names.embedding}, {"head", o.names.head}};
  check_distinct(o.out, {o.source_model, o.target_model});
  record_input(m, "source_model", o.source_model);
  record_input(m, "target_model", o.target_model);
  if (!o.special.chat_template.empty()) record_input(m, "chat_template", o.special.chat_template);
  const auto src = load_model_dir(o.source_model, "source");
  const auto tgt = load_model_dir(o.target_model, "target");
  const auto set = resolve_special_set(o.special, src, tgt);
  const auto result = transplant(src.weights, tgt.weights, set, o.names.embedding, o.names.head, tgt.tied(o.names.head));
  m.warnings.insert(m.warnings.end(), result.notices.begin(), result.notices.end());
  if (set.empty()) m.warnings.push_back("no special tokens found; weights copied unchanged");
  write_weights(m, o.out, result.archive);
  write_json_output(m, o.out, kSpecialTokensFile, special_set_to_json(set));
  copy_side_files(m, tgt, o.out);
  finish(m, o.out);
  return m;
}

// ---------------------------------------------------------------------------
// chat-vector

struct ChatVectorOptions {
  fs::path base_model;
  fs::path chat_model;
  fs::path adapted_model;
  fs::path out;
  double scale = 1.0;
};

inline Manifest chat_vector(const ChatVectorOptions& o) {
  Manifest m("chat-vector");
  m.parameters = {{"scale", o.scale}};
  check_distinct(o.out, {o.base_model, o.chat_model, o.adapted_model});
  record_input(m, "base_model", o.base_model);
  record_input(m, "chat_model", o.chat_model);
  record_input(m, "adapted_model", o.adapted_model);
  const auto base = load_model_dir(o.base_model, "base");
  const auto chat = load_model_dir(o.chat_model, "chat");
  const auto adapted = load_model_dir(o.adapted_model, "adapted");
  write_weights(m, o.out, chat_vector_apply(base.weights, chat.weights, adapted.weights, o.scale));
  copy_side_files(m, adapted, o.out);
  finish(m, o.out);
  return m;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOptions {
  std::vector<std::pair<std::string, fs::path>> tokenizers;  // label, tokenizer file or model dir
  fs::path corpus;
  fs::path out;
  std::string text_field = "text";
  std::string corpus_id;                                    // empty: content digest
  std::optional<std::pair<std::string, std::string>> speedup;  // (source label, expanded label)
};

inline nlohmann::json speedup_json(const SpeedupEstimate& e, const std::string& from, const std::string& to) {
  return {{"source", from},
          {"expanded", to},
          {"label", kSpeedupLabel},
          {"ratio", e.ratio},
          {"source_tokens", e.source_tokens},
          {"expanded_tokens", e.expanded_tokens},
          {"vocab_superset", e.superset}};
}

inline void check_superset(Manifest& m, const SpeedupEstimate& e, const std::string& from, const std::string& to) {
  if (!e.superset) m.warnings.push_back("'" + to + "' is not a vocabulary superset of '" + from + "'");
}

inline Manifest analyze(const AnalyzeOptions& o) {
  Manifest m("analyze");
  if (o.tokenizers.empty()) throw ValidationError("analyze needs at least one tokenizer");
  nlohmann::json labels = nlohmann::json::array();
  std::vector<fs::path> inputs{o.corpus};
  for (const auto& [label, path] : o.tokenizers) {
    labels.push_back(label);
    inputs.push_back(path);
  }
  m.parameters = {{"tokenizers", labels}, {"text_field", o.text_field}, {"corpus_id", o.corpus_id}};
  check_distinct(o.out, inputs);
  record_input(m, "corpus", o.corpus);
  std::vector<TokenizerModel> toks;
  toks.reserve(o.tokenizers.size());
  for (const auto& [label, path] : o.tokenizers) {
    const auto file = fs::is_directory(path) ? path / kTokenizerFile : path;
    record_input(m, "tokenizer." + label, file);
    toks.push_back(load_tokenizer(file));
  }
  const auto corpus = load_corpus(o.corpus, o.text_field);
  std::vector<std::pair<std::string, const TokenizerModel*>> named;
  for (std::size_t i = 0; i < toks.size(); ++i) named.emplace_back(o.tokenizers[i].first, &toks[i]);
  auto report = report_to_json(build_report(named, corpus, o.corpus_id));
  if (o.speedup) {
    const auto& [from, to] = *o.speedup;
    auto find = [&](const std::string& label) -> const TokenizerModel& {
      for (const auto& [l, t] : named) {
        if (l == label) return *t;
      }
      throw ValidationError("speedup label '" + label + "' is not one of the analyzed tokenizers");
    };
    const auto e = estimate_speedup(find(from), find(to), corpus);
    check_superset(m, e, from, to);
    report["speedup"] = speedup_json(e, from, to);
  }
  write_json_output(m, o.out, kFragReportFile, report);
  finish(m, o.out);
  return m;
}

// ---------------------------------------------------------------------------
// pipeline

struct PipelineOptions {
  fs::path source_model;
  fs::path adapted_model;
  fs::path corpus;
  fs::path out;
  std::string text_field = "text";
  std::size_t k = kDefaultNewTokens;
  std::size_t aux_vocab_size = kDefaultAuxVocabSize;
  std::uint64_t seed = 0;
  std::size_t n_outer = 2;
  MergeSettings merge;
  SpecialSettings special;
  TensorNames names;
};

inline void validate(const PipelineOptions& o) {
  if (o.k > o.aux_vocab_size) {
    throw ValidationError("k=" + std::to_string(o.k) + " exceeds aux_vocab_size=" + std::to_string(o.aux_vocab_size));
  }
  if (o.source_model.empty() || o.adapted_model.empty() || o.corpus.empty() || o.out.empty()) {
    throw ValidationError("pipeline needs source_model, adapted_model, corpus and out");
  }
}

/// Merge the adapted model with the source chat model, then transplant the
/// source's special-token weights into the result. Also writes the freeze plan
/// of the adapted model and a source-vs-adapted fragmentation report.
inline Manifest pipeline(const PipelineOptions& o) {
  validate(o);
  if (!fs::exists(o.adapted_model)) {
    throw IoError("adapted checkpoint '" + o.adapted_model.string() +
                  "' not found. Continual pre-training happens outside elchat: run `elchat expand` on the source "
                  "model, train the tensors listed by `elchat freeze-plan` with your own trainer, then pass the "
                  "trained checkpoint directory as the adapted model");
  }
  Manifest m("pipeline");
  m.parameters = {{"k", o.k},
                  {"aux_vocab_size", o.aux_vocab_size},
                  {"seed", o.seed},
                  {"n_outer", o.n_outer},
                  {"text_field", o.text_field},
                  {"merge", settings_json(o.merge)},
                  {"special_tokens", o.special.tokens},
                  {"embedding", o.names.embedding},
                  {"head", o.names.head}};
  check_distinct(o.out, {o.source_model, o.adapted_model, o.corpus});
  record_input(m, "source_model", o.source_model);
  record_input(m, "adapted_model", o.adapted_model);
  record_input(m, "corpus", o.corpus);
  if (!o.special.chat_template.empty()) record_input(m, "chat_template", o.special.chat_template);

  const auto src = load_model_dir(o.source_model, "source");
  const auto adapted = load_model_dir(o.adapted_model, "adapted");
  const auto corpus = load_corpus(o.corpus, o.text_field);

  const auto schedule = make_schedule(o.merge, adapted.weights, o.names);
  const auto merged = merge_archives(src.weights, adapted.weights, schedule, output_dtype(o.merge));
  const auto set = resolve_special_set(o.special, src, adapted);
  const auto patched =
      transplant(src.weights, merged.archive, set, o.names.embedding, o.names.head, adapted.tied(o.names.head));
  m.warnings.insert(m.warnings.end(), patched.notices.begin(), patched.notices.end());
  if (set.empty()) m.warnings.push_back("no special tokens found; nothing transplanted");

  const auto freeze = emit_freeze_plan(adapted.weights, LayerPattern(o.merge.layer_pattern), o.names.embedding,
                                       o.names.head, o.n_outer);

  std::vector<std::pair<std::string, const TokenizerModel*>> named{{"source", &src.tok()}, {"adapted", &adapted.tok()}};
  auto frag = report_to_json(build_report(named, corpus));
  const auto e = estimate_speedup(src.tok(), adapted.tok(), corpus);
  check_superset(m, e, "source", "adapted");
  frag["speedup"] = speedup_json(e, "source", "adapted");

  write_weights(m, o.out, patched.archive);
  copy_side_files(m, adapted, o.out);
  write_json_output(m, o.out, kFreezePlanFile, freeze_plan_to_json(freeze));
  write_json_output(m, o.out, kMergeReportFile, merge_report_json(schedule, merged));
  write_json_output(m, o.out, kSpecialTokensFile, special_set_to_json(set));
  write_json_output(m, o.out, kFragReportFile, frag);
  finish(m, o.out);
  return m;
}

}  // namespace elchat::cmd
