#pragma once

// safetensors reader/writer.
//
// Layout: u64 little-endian header length N, N bytes of UTF-8 JSON, then the
// payload. The header maps each tensor name to {"dtype", "shape",
// "data_offsets": [begin, end]} with offsets relative to the payload start, and
// may carry a "__metadata__" object of string values.
//
// Output is canonical: tensors are laid out in lexicographic name order, the
// header is compact JSON with sorted keys padded with spaces to a multiple of 8.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "elchat/error.hpp"
#include "elchat/io.hpp"
#include "elchat/tensor.hpp"

namespace elchat {

class TensorArchive {
 public:
  using Map = std::map<std::string, Tensor>;

  TensorArchive() = default;

  /// Fails on duplicate names.
  static TensorArchive from_tensors(std::vector<Tensor> tensors,
                                    std::map<std::string, std::string> metadata = {}) {
    TensorArchive a;
    for (auto& t : tensors) a.insert(std::move(t));
    a.metadata_ = std::move(metadata);
    return a;
  }

  void insert(Tensor t) {
    t.validate();
    auto name = t.name;
    if (!entries_.emplace(name, std::move(t)).second) {
      throw ValidationError("duplicate tensor name '" + name + "'");
    }
  }

  /// Insert or replace.
  void put(Tensor t) {
    t.validate();
    auto name = t.name;
    entries_.insert_or_assign(std::move(name), std::move(t));
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Tensor& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw NameError("tensor '" + name + "' not found in archive");
    return it->second;
  }

  const Map& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }

  const std::map<std::string, std::string>& metadata() const { return metadata_; }
  std::map<std::string, std::string>& metadata() { return metadata_; }

  friend bool operator==(const TensorArchive&, const TensorArchive&) = default;

 private:
  Map entries_;
  std::map<std::string, std::string> metadata_;
};

inline std::vector<std::uint8_t> serialize_archive(const TensorArchive& archive) {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : archive.entries()) {
    if (t.name != name) throw ValidationError("tensor keyed '" + name + "' is named '" + t.name + "'");
    t.validate();
    const std::uint64_t end = offset + t.data.size();
    header[name] = {{"dtype", std::string(dtype_name(t.dtype))},
                    {"shape", t.shape},
                    {"data_offsets", {offset, end}}};
    offset = end;
  }
  if (!archive.metadata().empty()) header["__metadata__"] = archive.metadata();

  std::string text = header.dump();
  text.append((8 - text.size() % 8) % 8, ' ');

  std::vector<std::uint8_t> out;
  out.reserve(8 + text.size() + offset);
  const std::uint64_t n = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [_, t] : archive.entries()) out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

inline TensorArchive parse_archive(std::span<const std::uint8_t> bytes, const std::string& label = "<memory>") {
  if (bytes.size() < 8) throw FormatError(label + ": file shorter than the 8-byte header length", 0);
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) header_len |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if (header_len > bytes.size() - 8) {
    throw FormatError(label + ": header length " + std::to_string(header_len) + " exceeds file size", 0);
  }
  const auto header_bytes = bytes.subspan(8, header_len);
  const auto payload = bytes.subspan(8 + header_len);

  std::set<std::string> seen;
  std::string duplicate;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(
        header_bytes.begin(), header_bytes.end(),
        [&](int depth, nlohmann::json::parse_event_t event, nlohmann::json& parsed) {
          if (depth == 1 && event == nlohmann::json::parse_event_t::key) {
            auto key = parsed.get<std::string>();
            if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
          }
          return true;
        });
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(label + ": malformed header JSON: " + e.what(), 8 + e.byte);
  }
  if (!header.is_object()) throw FormatError(label + ": header is not a JSON object", 8);
  if (!duplicate.empty()) throw FormatError(label + ": duplicate header key '" + duplicate + "'", 8);

  TensorArchive archive;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (const auto& [key, info] : header.items()) {
    if (key == "__metadata__") {
      if (!info.is_object()) throw FormatError(label + ": __metadata__ is not an object", 8);
      for (const auto& [mk, mv] : info.items()) {
        if (!mv.is_string()) throw FormatError(label + ": metadata value for '" + mk + "' is not a string", 8);
        archive.metadata()[mk] = mv.get<std::string>();
      }
      continue;
    }
    if (!info.is_object() || !info.contains("dtype") || !info.contains("shape") || !info.contains("data_offsets") ||
        !info["dtype"].is_string() || !info["shape"].is_array() || !info["data_offsets"].is_array() ||
        info["data_offsets"].size() != 2) {
      throw FormatError(label + ": entry '" + key + "' lacks dtype/shape/data_offsets", 8);
    }
    Tensor t;
    t.name = key;
    try {
      t.dtype = parse_dtype(info["dtype"].get<std::string>());
    } catch (const ValidationError& e) {
      throw FormatError(label + ": entry '" + key + "': " + e.what(), 8);
    }
    for (const auto& d : info["shape"]) {
      if (!d.is_number_unsigned()) throw FormatError(label + ": entry '" + key + "' has a bad shape", 8);
      t.shape.push_back(d.get<std::uint64_t>());
    }
    const auto& offs = info["data_offsets"];
    if (!offs[0].is_number_unsigned() || !offs[1].is_number_unsigned()) {
      throw FormatError(label + ": entry '" + key + "' has bad data_offsets", 8);
    }
    const auto begin = offs[0].get<std::uint64_t>();
    const auto end = offs[1].get<std::uint64_t>();
    if (end < begin || end > payload.size()) {
      throw IntegrityError(label + ": tensor '" + key + "' offsets [" + std::to_string(begin) + ", " +
                           std::to_string(end) + ") fall outside the " + std::to_string(payload.size()) +
                           "-byte payload");
    }
    if (end - begin != t.numel() * t.element_size()) {
      throw IntegrityError(label + ": tensor '" + key + "' spans " + std::to_string(end - begin) +
                           " bytes but shape " + shape_str(t.shape) + " needs " +
                           std::to_string(t.numel() * t.element_size()));
    }
    t.data.assign(payload.begin() + static_cast<std::ptrdiff_t>(begin),
                  payload.begin() + static_cast<std::ptrdiff_t>(end));
    spans.emplace_back(begin, end);
    archive.insert(std::move(t));
  }

  std::sort(spans.begin(), spans.end());
  std::uint64_t cursor = 0;
  for (const auto& [begin, end] : spans) {
    if (begin != cursor) {
      throw IntegrityError(label + ": payload " + (begin < cursor ? "overlap" : "gap") + " at payload offset " +
                           std::to_string(std::min(begin, cursor)));
    }
    cursor = end;
  }
  if (cursor != payload.size()) {
    throw IntegrityError(label + ": " + std::to_string(payload.size() - cursor) + " trailing payload bytes");
  }
  return archive;
}

inline TensorArchive open_archive(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_archive(bytes, path.string());
}

inline void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  const auto bytes = serialize_archive(archive);
  io::write_file(path, bytes);
}

inline constexpr const char* kCheckpointFile = "model.safetensors";
inline constexpr const char* kShardIndexFile = "model.safetensors.index.json";

/// Reads a sharded checkpoint through its index ({"weight_map": {tensor: shard-file}}).
inline TensorArchive open_sharded(const std::filesystem::path& index_path) {
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(io::read_text(index_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(index_path.string() + ": malformed index JSON: " + e.what(), e.byte);
  }
  if (!index.contains("weight_map") || !index["weight_map"].is_object()) {
    throw IntegrityError(index_path.string() + ": index has no weight_map object");
  }
  std::map<std::string, std::vector<std::string>> by_shard;
  for (const auto& [name, shard] : index["weight_map"].items()) {
    by_shard[shard.get<std::string>()].push_back(name);
  }
  TensorArchive out;
  for (const auto& [shard, names] : by_shard) {
    auto part = open_archive(index_path.parent_path() / shard);
    for (const auto& [k, v] : part.metadata()) out.metadata().emplace(k, v);
    for (const auto& name : names) {
      if (!part.contains(name)) {
        throw IntegrityError(index_path.string() + ": '" + name + "' is mapped to " + shard +
                             " but that shard does not contain it");
      }
      out.insert(part.at(name));
    }
  }
  return out;
}

/// Accepts a single archive file, an index file, or a model directory holding either.
inline TensorArchive open_checkpoint(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    if (fs::exists(path / kCheckpointFile)) return open_archive(path / kCheckpointFile);
    if (fs::exists(path / kShardIndexFile)) return open_sharded(path / kShardIndexFile);
    throw IoError("'" + path.string() + "' contains neither " + kCheckpointFile + " nor " + kShardIndexFile);
  }
  if (!fs::exists(path)) throw IoError("checkpoint '" + path.string() + "' does not exist");
  if (path.extension() == ".json") return open_sharded(path);
  return open_archive(path);
}

}  // namespace elchat
