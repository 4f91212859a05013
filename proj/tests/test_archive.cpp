#include <gtest/gtest.h>

#include <random>

#include "elchat/archive.hpp"
#include "support.hpp"

using namespace elchat;
using elchat::testing::random_tensor;
using elchat::testing::TempDir;

namespace {

TensorArchive sample_archive(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TensorArchive a;
  a.insert(random_tensor(rng, "b.weight", DType::kBF16, {3, 5}));
  a.insert(random_tensor(rng, "a.weight", DType::kF16, {7}));
  a.insert(random_tensor(rng, "c.bias", DType::kF32, {2, 2, 2}));
  a.insert(Tensor{"empty", DType::kF32, {0, 4}, {}});
  a.metadata()["format"] = "pt";
  return a;
}

std::vector<std::uint8_t> header_with(const std::string& json, std::size_t payload = 0) {
  std::vector<std::uint8_t> out(8);
  const std::uint64_t n = json.size();
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(n >> (8 * i));
  out.insert(out.end(), json.begin(), json.end());
  out.resize(out.size() + payload);
  return out;
}

}  // namespace

TEST(Archive, RoundTripIsExact) {
  const auto a = sample_archive(1);
  const auto back = parse_archive(serialize_archive(a));
  EXPECT_EQ(back, a);
  EXPECT_EQ(back.metadata().at("format"), "pt");
}

TEST(Archive, SerializationIsCanonical) {
  const auto a = sample_archive(2);
  std::vector<Tensor> reversed;
  for (const auto& [_, t] : a.entries()) reversed.insert(reversed.begin(), t);
  const auto b = TensorArchive::from_tensors(reversed, a.metadata());
  const auto bytes = serialize_archive(a);
  EXPECT_EQ(serialize_archive(b), bytes);
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  EXPECT_EQ(n % 8, 0u);
}

TEST(Archive, EmptyArchive) {
  const TensorArchive empty;
  EXPECT_EQ(parse_archive(serialize_archive(empty)), empty);
}

TEST(Archive, DuplicateNamesRejected) {
  TensorArchive a;
  a.insert(Tensor{"x", DType::kF32, {1}, std::vector<std::uint8_t>(4)});
  EXPECT_THROW(a.insert(Tensor{"x", DType::kF32, {1}, std::vector<std::uint8_t>(4)}), ValidationError);
  EXPECT_THROW(a.at("y"), NameError);
}

TEST(Archive, MalformedInputsReportOffsets) {
  EXPECT_THROW(parse_archive(std::vector<std::uint8_t>{1, 2, 3}), FormatError);
  try {
    parse_archive(header_with("{\"x\": [}"));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_GT(e.offset(), 8u);
  }
  auto too_long = header_with("{}");
  too_long[0] = 200;
  EXPECT_THROW(parse_archive(too_long), FormatError);
  EXPECT_THROW(parse_archive(header_with(R"({"x":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
                                         R"("x":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})",
                                         8)),
               FormatError);
  EXPECT_THROW(parse_archive(header_with(R"({"x":{"dtype":"I8","shape":[1],"data_offsets":[0,1]}})", 1)),
               FormatError);
}

TEST(Archive, PayloadInconsistenciesAreIntegrityErrors) {
  // size mismatch
  EXPECT_THROW(parse_archive(header_with(R"({"x":{"dtype":"F32","shape":[2],"data_offsets":[0,4]}})", 4)),
               IntegrityError);
  // out of range
  EXPECT_THROW(parse_archive(header_with(R"({"x":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})", 2)),
               IntegrityError);
  // gap
  EXPECT_THROW(parse_archive(header_with(R"({"x":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})", 8)),
               IntegrityError);
  // trailing bytes
  EXPECT_THROW(parse_archive(header_with(R"({"x":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})", 6)),
               IntegrityError);
}

TEST(Archive, FilesAndShards) {
  TempDir dir;
  const auto a = sample_archive(3);
  write_archive(dir / "one.safetensors", a);
  EXPECT_EQ(open_checkpoint(dir / "one.safetensors"), a);

  TensorArchive s1, s2;
  nlohmann::json map = nlohmann::json::object();
  bool first = true;
  for (const auto& [name, t] : a.entries()) {
    (first ? s1 : s2).insert(t);
    map[name] = first ? "model-00001-of-00002.safetensors" : "model-00002-of-00002.safetensors";
    first = !first;
  }
  const auto shards = dir / "sharded";
  write_archive(shards / "model-00001-of-00002.safetensors", s1);
  write_archive(shards / "model-00002-of-00002.safetensors", s2);
  io::write_text(shards / kShardIndexFile, nlohmann::json{{"weight_map", map}}.dump());
  const auto joined = open_checkpoint(shards);
  EXPECT_EQ(joined.entries(), a.entries());
}

TEST(Archive, MissingFileIsIoError) {
  EXPECT_THROW(open_archive("/nonexistent/elchat/x.safetensors"), IoError);
}

TEST(Io, AtomicWriteHonoursStagingOverride) {
  TempDir dir;
  const auto staging = dir / "staging";
  std::filesystem::create_directories(staging);
  ::setenv("ELCHAT_TMPDIR", staging.c_str(), 1);
  io::write_text(dir / "out" / "x.txt", "hello");
  ::unsetenv("ELCHAT_TMPDIR");
  EXPECT_EQ(io::read_text(dir / "out" / "x.txt"), "hello");
  EXPECT_TRUE(std::filesystem::is_empty(staging));
}

TEST(Io, Sha256KnownVector) {
  EXPECT_EQ(io::sha256_hex(std::string_view("abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
