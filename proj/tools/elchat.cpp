// elchat command-line front end.

#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "elchat/commands.hpp"

namespace {

using namespace elchat;
namespace fs = std::filesystem;

// Reads TOML (CLI11's own reader) or JSON, chosen by the first non-blank
// character. Keys may use '_' or '-'. Top-level keys that are not subcommand
// sections apply to the subcommand being run.
class ConfigAny : public CLI::ConfigTOML {
 public:
  ConfigAny(std::vector<std::string> subcommands, std::string active)
      : subcommands_(std::move(subcommands)), active_(std::move(active)) {}

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    std::string text((std::istreambuf_iterator<char>(input)), std::istreambuf_iterator<char>());
    const auto first = text.find_first_not_of(" \t\r\n");
    std::vector<CLI::ConfigItem> items;
    if (first != std::string::npos && text[first] == '{') {
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(text);
      } catch (const nlohmann::json::parse_error& e) {
        throw CLI::ConversionError("config is not valid JSON: " + std::string(e.what()));
      }
      flatten_top(doc, items);
    } else {
      std::istringstream in(text);
      items = CLI::ConfigTOML::from_config(in);
    }
    for (auto& item : items) {
      if (item.name != "++" && item.name != "--") std::replace(item.name.begin(), item.name.end(), '_', '-');
      if (item.parents.empty() && !active_.empty() && item.name != "++" && item.name != "--" &&
          !is_subcommand(item.name)) {
        item.parents = {active_};
      }
    }
    return items;
  }

 private:
  bool is_subcommand(const std::string& s) const {
    return std::find(subcommands_.begin(), subcommands_.end(), s) != subcommands_.end();
  }

  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  }

  static void add_value(const std::vector<std::string>& parents, const std::string& key, const nlohmann::json& v,
                        std::vector<CLI::ConfigItem>& items) {
    CLI::ConfigItem item;
    item.parents = parents;
    item.name = key;
    if (v.is_array()) {
      for (const auto& e : v) item.inputs.push_back(scalar(e));
    } else if (v.is_object()) {
      for (const auto& [k, e] : v.items()) item.inputs.push_back(k + "=" + scalar(e));
    } else {
      item.inputs.push_back(scalar(v));
    }
    items.push_back(std::move(item));
  }

  // Members of a section. Nested objects other than key=value maps are
  // inlined into the same section.
  static void flatten_section(const std::vector<std::string>& parents, const nlohmann::json& obj,
                              std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, v] : obj.items()) {
      if (v.is_object() && key != "layer_alpha" && key != "layer-alpha") {
        flatten_section(parents, v, items);
      } else {
        add_value(parents, key, v, items);
      }
    }
  }

  void flatten_top(const nlohmann::json& doc, std::vector<CLI::ConfigItem>& items) const {
    if (!doc.is_object()) throw CLI::ConversionError("config JSON must be an object");
    for (const auto& [key, v] : doc.items()) {
      const bool pipeline_merge = active_ == "pipeline" && key == "merge";
      if (v.is_object() && is_subcommand(key) && !pipeline_merge) {
        flatten_section({key}, v, items);
      } else if (v.is_object() && key != "layer_alpha" && key != "layer-alpha") {
        flatten_section(active_.empty() ? std::vector<std::string>{} : std::vector<std::string>{active_}, v, items);
      } else {
        add_value({}, key, v, items);
      }
    }
  }

  std::vector<std::string> subcommands_;
  std::string active_;
};

std::map<std::size_t, double> parse_layer_alphas(const std::vector<std::string>& specs) {
  std::map<std::size_t, double> out;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    std::size_t layer = 0;
    double alpha = 0.0;
    try {
      if (eq == std::string::npos) throw std::invalid_argument(s);
      std::size_t used = 0;
      layer = std::stoul(s.substr(0, eq), &used);
      if (used != eq) throw std::invalid_argument(s);
      alpha = std::stod(s.substr(eq + 1), &used);
      if (used != s.size() - eq - 1) throw std::invalid_argument(s);
    } catch (const std::logic_error&) {
      throw ValidationError("--layer-alpha expects LAYER=ALPHA, got '" + s + "'");
    }
    out[layer] = alpha;
  }
  return out;
}

struct MergeFlags {
  std::vector<std::string> layer_alpha;
};

void add_names(CLI::App* sub, cmd::TensorNames& names) {
  sub->add_option("--embedding-name", names.embedding, "Embedding tensor name")->capture_default_str();
  sub->add_option("--head-name", names.head, "Output head tensor name")->capture_default_str();
}

void add_merge_settings(CLI::App* sub, cmd::MergeSettings& s, MergeFlags& flags) {
  sub->add_option("--preset", s.preset, "Schedule preset: elchat-default, qwen3 or uniform")->capture_default_str();
  sub->add_option("--method", s.method, "slerp or linear")->capture_default_str();
  sub->add_option("--alpha,--default-alpha", s.alpha, "Weight on the target for layers the preset leaves open")
      ->capture_default_str();
  sub->add_option("--layer-alpha", flags.layer_alpha, "Per-layer override LAYER=ALPHA (repeatable)");
  sub->add_option("--exclude", s.exclude, "Tensors copied from the target (default: embedding and head)");
  sub->add_option("--layer-pattern", s.layer_pattern, "Tensor-name template with one {layer}")->capture_default_str();
  sub->add_option("--parallel-eps", s.parallel_eps, "SLERP linear-fallback threshold")->capture_default_str();
  sub->add_option("--output-dtype", s.output_dtype, "Cast merged tensors to f32, f16 or bf16");
}

void report(const cmd::Manifest& m, const fs::path& out) {
  for (const auto& w : m.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << m.command << ": wrote " << m.outputs.size() << " file(s) to " << out.string() << '\n';
}

std::string active_subcommand(int argc, char** argv, const std::vector<std::string>& names) {
  for (int i = 1; i < argc; ++i) {
    if (std::find(names.begin(), names.end(), argv[i]) != names.end()) return argv[i];
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vocabulary expansion, model merging and special-token transplant for language adaptation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", cmd::kToolVersion);
  app.set_config("--config", "", "TOML or JSON config file (flags take precedence)");
  app.allow_config_extras(CLI::config_extras_mode::error);

  cmd::TokenizerTrainOptions train;
  auto* s_train = app.add_subcommand("tokenizer-train", "Train a byte-level BPE tokenizer");
  s_train->add_option("--corpus,--corpus-path", train.corpus, "Training text (.txt or .jsonl)")->required();
  s_train->add_option("--out,--output-dir", train.out, "Output directory")->required();
  s_train->add_option("--vocab-size,--aux-vocab-size", train.vocab_size, "Target vocabulary size")
      ->capture_default_str();
  s_train->add_option("--seed", train.seed, "Document sampling seed")->capture_default_str();
  s_train->add_option("--max-documents", train.max_documents, "Train on a seeded sample of this many documents");
  s_train->add_option("--pretokenizer", train.pretokenizer, "gpt2, llama3, qwen2, whitespace or none")
      ->capture_default_str();
  s_train->add_option("--text-field", train.text_field, "JSONL field holding the text")->capture_default_str();
  s_train->add_flag("--char-level", train.char_level, "Use a character alphabet instead of bytes");

  cmd::ExpandOptions exp;
  auto* s_exp = app.add_subcommand("expand", "Add new tokens and mean-initialize their weights");
  s_exp->add_option("--source-model,--source-model-dir", exp.source_model, "Source model directory")->required();
  s_exp->add_option("--aux-tokenizer", exp.aux_tokenizer, "Tokenizer trained on target-language text")->required();
  s_exp->add_option("--corpus,--corpus-path", exp.corpus, "Text used to rank candidate tokens")->required();
  s_exp->add_option("--out,--output-dir", exp.out, "Output directory")->required();
  s_exp->add_option("-k,--k", exp.k, "Number of new tokens")->capture_default_str();
  s_exp->add_option("--text-field", exp.text_field, "JSONL field holding the text")->capture_default_str();
  add_names(s_exp, exp.names);

  cmd::FreezePlanOptions fz;
  auto* s_fz = app.add_subcommand("freeze-plan", "List trainable and frozen tensors for continual pre-training");
  s_fz->add_option("--model,--model-dir", fz.model, "Model directory or checkpoint")->required();
  s_fz->add_option("--out,--output-dir", fz.out, "Output directory")->required();
  s_fz->add_option("--layer-pattern", fz.layer_pattern, "Tensor-name template with one {layer}")->capture_default_str();
  s_fz->add_option("--n-outer", fz.n_outer, "Trainable layers at each end")->capture_default_str();
  add_names(s_fz, fz.names);

  cmd::MergeOptions mg;
  MergeFlags mg_flags;
  auto* s_mg = app.add_subcommand("merge", "Interpolate an adapted model with the source chat model");
  s_mg->add_option("--source-model,--source-model-dir", mg.source_model, "Source chat model directory")->required();
  s_mg->add_option("--target-model,--adapted-model,--adapted-model-dir", mg.target_model, "Adapted model directory")
      ->required();
  s_mg->add_option("--out,--output-dir", mg.out, "Output directory")->required();
  add_merge_settings(s_mg, mg.merge, mg_flags);
  add_names(s_mg, mg.names);

  cmd::CopySpecialOptions cs;
  auto* s_cs = app.add_subcommand("copy-special", "Copy special-token weights from the source chat model");
  s_cs->add_option("--source-model,--source-model-dir", cs.source_model, "Source chat model directory")->required();
  s_cs->add_option("--target-model,--adapted-model,--adapted-model-dir", cs.target_model, "Model to patch")
      ->required();
  s_cs->add_option("--out,--output-dir", cs.out, "Output directory")->required();
  s_cs->add_option("--tokens,--special-tokens", cs.special.tokens, "Explicit special-token list");
  s_cs->add_option("--chat-template", cs.special.chat_template, "Chat template file to scan");
  add_names(s_cs, cs.names);

  cmd::ChatVectorOptions cv;
  auto* s_cv = app.add_subcommand("chat-vector", "Add chat minus base to an adapted model");
  s_cv->add_option("--base-model", cv.base_model, "Base model directory")->required();
  s_cv->add_option("--chat-model", cv.chat_model, "Chat model directory")->required();
  s_cv->add_option("--adapted-model,--adapted-model-dir", cv.adapted_model, "Adapted model directory")->required();
  s_cv->add_option("--out,--output-dir", cv.out, "Output directory")->required();
  s_cv->add_option("--scale", cv.scale, "Multiplier on the difference")->capture_default_str();

  cmd::AnalyzeOptions an;
  std::vector<std::string> an_tokenizers;
  std::string an_speedup;
  auto* s_an = app.add_subcommand("analyze", "Token counts and fragmentation ratios on a corpus");
  s_an->add_option("--tokenizer", an_tokenizers, "LABEL=PATH to a tokenizer file or model directory (repeatable)")
      ->required();
  s_an->add_option("--corpus,--corpus-path", an.corpus, "Text to analyze")->required();
  s_an->add_option("--out,--output-dir", an.out, "Output directory")->required();
  s_an->add_option("--text-field", an.text_field, "JSONL field holding the text")->capture_default_str();
  s_an->add_option("--corpus-id", an.corpus_id, "Corpus identifier (default: content hash)");
  s_an->add_option("--speedup", an_speedup, "SOURCE:EXPANDED labels for the decode-step ratio");

  cmd::PipelineOptions pl;
  MergeFlags pl_flags;
  auto* s_pl = app.add_subcommand("pipeline", "Merge then copy special tokens, with plans and reports");
  s_pl->add_option("--source-model,--source-model-dir", pl.source_model, "Source chat model directory");
  s_pl->add_option("--adapted-model,--adapted-model-dir", pl.adapted_model, "Continually pre-trained model directory");
  s_pl->add_option("--corpus,--corpus-path", pl.corpus, "Text for the fragmentation report");
  s_pl->add_option("--out,--output-dir", pl.out, "Output directory");
  s_pl->add_option("--text-field", pl.text_field, "JSONL field holding the text")->capture_default_str();
  s_pl->add_option("-k,--k", pl.k, "New-token count used for the adapted model")->capture_default_str();
  s_pl->add_option("--aux-vocab-size", pl.aux_vocab_size, "Auxiliary tokenizer size")->capture_default_str();
  s_pl->add_option("--seed", pl.seed, "Seed")->capture_default_str();
  s_pl->add_option("--n-outer", pl.n_outer, "Trainable layers at each end in the freeze plan")->capture_default_str();
  s_pl->add_option("--tokens,--special-tokens", pl.special.tokens, "Explicit special-token list");
  s_pl->add_option("--chat-template", pl.special.chat_template, "Chat template file to scan");
  add_merge_settings(s_pl, pl.merge, pl_flags);
  add_names(s_pl, pl.names);

  std::vector<std::string> names;
  for (const auto* sub : app.get_subcommands([](CLI::App*) { return true; })) names.push_back(sub->get_name());
  app.config_formatter(std::make_shared<ConfigAny>(names, active_subcommand(argc, argv, names)));

  try {
    app.parse(argc, argv);
  } catch (const CLI::FileError& e) {
    app.exit(e);
    return static_cast<int>(ErrorKind::kIo);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorKind::kValidation);
  }

  try {
    if (*s_train) {
      report(cmd::tokenizer_train(train), train.out);
    } else if (*s_exp) {
      report(cmd::expand(exp), exp.out);
    } else if (*s_fz) {
      report(cmd::freeze_plan(fz), fz.out);
    } else if (*s_mg) {
      mg.merge.layer_alpha = parse_layer_alphas(mg_flags.layer_alpha);
      report(cmd::merge(mg), mg.out);
    } else if (*s_cs) {
      report(cmd::copy_special(cs), cs.out);
    } else if (*s_cv) {
      report(cmd::chat_vector(cv), cv.out);
    } else if (*s_an) {
      for (const auto& spec : an_tokenizers) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) throw ValidationError("--tokenizer expects LABEL=PATH, got '" + spec + "'");
        an.tokenizers.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
      }
      if (!an_speedup.empty()) {
        const auto colon = an_speedup.find(':');
        if (colon == std::string::npos) throw ValidationError("--speedup expects SOURCE:EXPANDED");
        an.speedup = std::pair(an_speedup.substr(0, colon), an_speedup.substr(colon + 1));
      }
      report(cmd::analyze(an), an.out);
    } else if (*s_pl) {
      pl.merge.layer_alpha = parse_layer_alphas(pl_flags.layer_alpha);
      report(cmd::pipeline(pl), pl.out);
    }
  } catch (const Error& e) {
    std::cerr << "elchat: error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "elchat: error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::kIo);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "elchat: error: malformed JSON input: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::kIntegrity);
  } catch (const std::exception& e) {
    std::cerr << "elchat: error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::kValidation);
  }
  return 0;
}
