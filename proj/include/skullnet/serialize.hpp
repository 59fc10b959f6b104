// SPDX-License-Identifier: Apache-2.0
//
// Binary model files. All integers and floats are little-endian; every file
// ends with the 64-bit FNV-1a hash of all preceding bytes.
//
// Model file (.skn):
//   "SKN1" | u32 version | f32 leaky_slope | u32 rank | u32 dims[rank]
//   | u32 block_count | block_count x (u32 kind, u64 offset)
//   | blocks: u32 kind | u32 rank | u32 dims[rank] | u64 count | f32[count]
//   | u64 checksum
// Block kinds: 1 conv kernels, 2 conv bias, 3 dense weights, 4 dense bias,
// stored in ModelParams::parameter_blocks order. Offsets are from the start
// of the file.
//
// ML-KNN file (.skk):
//   "SKK1" | u32 version | u32 k | f64 s | u8 l2_normalize | u64 m | u64 d
//   | u32 labels | f32 features[m*d] | u8 labels[m*L] | f64 prior1[L]
//   | f64 prior0[L] | u32 counts1[L*(k+1)] | u32 counts0[L*(k+1)]
//   | f64 post1[L*(k+1)] | f64 post0[L*(k+1)] | u64 checksum
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "skullnet/mlknn.hpp"
#include "skullnet/nn.hpp"

namespace skullnet {

inline constexpr std::uint32_t kModelFileVersion = 1;
inline constexpr std::uint32_t kKnnFileVersion = 1;

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_model(const ModelParams& params);
/// Throws ValidationError on a bad magic, version, checksum or layout.
ModelParams decode_model(std::span<const std::uint8_t> bytes, const std::string& source = "model");
void save_model(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_knn(const MlknnModel& model);
/// Also checks the fitted-model invariants.
MlknnModel decode_knn(std::span<const std::uint8_t> bytes, const std::string& source = "knn");
void save_knn(const std::filesystem::path& path, const MlknnModel& model);
MlknnModel load_knn(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace skullnet
