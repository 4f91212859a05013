#pragma once

#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elchat/error.hpp"
#include "elchat/io.hpp"
#include "elchat/utf8.hpp"

namespace elchat {

/// In-memory collection of UTF-8 documents, in file order.
class Corpus {
 public:
  Corpus() = default;

  explicit Corpus(std::vector<std::string> documents) : documents_(std::move(documents)) {
    for (std::size_t i = 0; i < documents_.size(); ++i) {
      if (auto bad = utf8::find_invalid(documents_[i])) {
        throw ValidationError("document " + std::to_string(i) + " is not valid UTF-8 (byte " +
                              std::to_string(*bad) + ")");
      }
      byte_count_ += documents_[i].size();
    }
  }

  const std::vector<std::string>& documents() const { return documents_; }
  std::size_t doc_count() const { return documents_.size(); }
  std::uint64_t byte_count() const { return byte_count_; }
  bool empty() const { return documents_.empty(); }

 private:
  std::vector<std::string> documents_;
  std::uint64_t byte_count_ = 0;
};

/// `.jsonl` / `.json` files are read as JSON lines and `text_field` is extracted;
/// anything else is one document per line. Blank lines are skipped.
inline Corpus load_corpus(const std::filesystem::path& path, const std::string& text_field = "text") {
  if (!std::filesystem::exists(path)) throw IoError("corpus '" + path.string() + "' does not exist");
  const auto text = io::read_text(path);
  const auto ext = path.extension().string();
  const bool jsonl = ext == ".jsonl" || ext == ".json";

  std::vector<std::string> docs;
  std::size_t line_no = 0;
  for (std::size_t pos = 0; pos <= text.size();) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (auto bad = utf8::find_invalid(line)) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": invalid UTF-8 at byte " +
                            std::to_string(*bad));
    }
    if (!jsonl) {
      docs.push_back(std::move(line));
      continue;
    }
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!rec.is_object() || !rec.contains(text_field) || !rec[text_field].is_string()) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": no string field '" + text_field + "'");
    }
    docs.push_back(rec[text_field].get<std::string>());
  }
  return Corpus(std::move(docs));
}

}  // namespace elchat
