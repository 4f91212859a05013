#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "elchat/error.hpp"

namespace elchat::io {

namespace fs = std::filesystem;

inline std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  if (size && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw IoError("short read on '" + path.string() + "'");
  }
  return bytes;
}

inline std::string read_text(const fs::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

/// Staging directory for partial writes: $ELCHAT_TMPDIR if set, else the destination's directory.
inline fs::path staging_dir(const fs::path& dest) {
  if (const char* env = std::getenv("ELCHAT_TMPDIR"); env && *env) return fs::path(env);
  auto parent = dest.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

/// Writes to a staging file then renames over `dest`, so readers never observe a partial file.
inline void write_file(const fs::path& dest, std::span<const std::uint8_t> bytes) {
  if (auto parent = dest.parent_path(); !parent.empty()) {
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) throw IoError("cannot create directory '" + parent.string() + "': " + ec.message());
  }
  const fs::path tmp = staging_dir(dest) / ("." + dest.filename().string() + ".partial");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) throw IoError("write failed on '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, dest, ec);
  if (ec) {
    // staging dir on another filesystem
    fs::copy_file(tmp, dest, fs::copy_options::overwrite_existing, ec);
    fs::remove(tmp);
    if (ec) throw IoError("cannot move output into '" + dest.string() + "': " + ec.message());
  }
}

inline void write_text(const fs::path& dest, std::string_view text) {
  write_file(dest, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw IoError("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

inline std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

}  // namespace elchat::io
