// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "skullnet/error.hpp"
#include "skullnet/serialize.hpp"

using namespace skullnet;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> bytes_of(const char* s) {
  return {reinterpret_cast<const std::uint8_t*>(s), reinterpret_cast<const std::uint8_t*>(s) + std::strlen(s)};
}

ModelParams small_model(std::uint64_t seed) {
  Rng rng(seed);
  Architecture arch;
  arch.input_shape = {8, 8, 3};
  arch.conv_channels = {4, 4, 8, 8};
  ModelParams m = build_model(rng, arch);
  for (auto& layer : m.conv)
    for (auto& b : layer.bias) b = static_cast<float>(rng.normal());
  return m;
}

MlknnModel small_knn(std::uint64_t seed) {
  Rng rng(seed);
  FeatureMatrix x(30, 6);
  LabelMatrix y(30, 7);
  for (auto& v : x.data()) v = static_cast<float>(rng.normal());
  for (auto& v : y.data()) v = rng.below(2);
  return fit_mlknn(x, y, 3, 1.0);
}

}  // namespace

TEST(Fnv1a, ReferenceVectors) {
  EXPECT_EQ(fnv1a64({}), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64(bytes_of("a")), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64(bytes_of("foobar")), 0x85944171f73967e8ULL);
}

TEST(ModelFile, RoundTripIsBitExact) {
  const auto m = small_model(1);
  const auto bytes = encode_model(m);
  EXPECT_EQ(std::memcmp(bytes.data(), "SKN1", 4), 0);
  const auto back = decode_model(bytes);
  EXPECT_EQ(back, m);
  EXPECT_EQ(encode_model(back), bytes);
}

TEST(ModelFile, FullExtractorThroughDisk) {
  Rng rng(2);
  const auto m = build_extractor(rng);
  const auto dir = fs::temp_directory_path() / "skullnet_serialize_test";
  fs::create_directories(dir);
  save_model(dir / "a.skn", m);
  const auto back = load_model(dir / "a.skn");
  EXPECT_EQ(back, m);
  save_model(dir / "b.skn", back);
  EXPECT_EQ(read_file_bytes(dir / "a.skn"), read_file_bytes(dir / "b.skn"));
  fs::remove_all(dir);
}

TEST(ModelFile, CorruptionIsDetected) {
  const auto bytes = encode_model(small_model(3));
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  EXPECT_THROW(decode_model(flipped), ValidationError);

  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_model(magic), ValidationError);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 9);
  EXPECT_THROW(decode_model(truncated), ValidationError);
  EXPECT_THROW(decode_model(std::vector<std::uint8_t>{}), ValidationError);

  const auto knn = encode_knn(small_knn(4));
  EXPECT_THROW(decode_model(knn), ValidationError);
}

TEST(ModelFile, MissingFileIsIoError) {
  EXPECT_THROW(load_model(fs::temp_directory_path() / "skullnet_no_such_model.skn"), IoError);
}

TEST(KnnFile, RoundTripIsBitExact) {
  const auto m = small_knn(5);
  const auto bytes = encode_knn(m);
  EXPECT_EQ(std::memcmp(bytes.data(), "SKK1", 4), 0);
  const auto back = decode_knn(bytes);
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.k, 3u);
  EXPECT_EQ(encode_knn(back), bytes);
}

TEST(KnnFile, CorruptionIsDetected) {
  const auto bytes = encode_knn(small_knn(6));
  auto flipped = bytes;
  flipped[40] ^= 0x80;
  EXPECT_THROW(decode_knn(flipped), ValidationError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_knn(truncated), ValidationError);
}

TEST(KnnFile, InvariantsCheckedOnLoad) {
  // A file with a valid checksum but broken tables is still rejected.
  auto m = small_knn(7);
  m.prior1[0] = 0.9;
  const auto bytes = encode_knn(m);
  EXPECT_THROW(decode_knn(bytes), ValidationError);
}
