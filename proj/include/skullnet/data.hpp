// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "skullnet/image_io.hpp"
#include "skullnet/matrix.hpp"
#include "skullnet/nn.hpp"
#include "skullnet/tensor.hpp"

namespace skullnet {

/// Label column order used everywhere (CSV files, matrices, reports).
inline constexpr std::array<std::string_view, kNumLabels> kLabelNames = {
    "fracture", "not_fractured", "linear", "depressed", "linear_non_depressed", "facial",
    "comminuted"};

enum LabelIndex : std::size_t {
  kFracture = 0,
  kNotFractured = 1,
  kLinear = 2,
  kDepressed = 3,
  kLinearNonDepressed = 4,
  kFacial = 5,
  kComminuted = 6,
};

std::vector<std::string> label_names();

/// Bilinear resize (half-pixel centres, edge clamped) to target x target,
/// scaled by 1/255, grayscale replicated to three channels.
Tensor preprocess_image(const Raster& raw, std::size_t target = kImageSize);

/// read_image + preprocess_image.
Tensor load_image(const std::filesystem::path& path);

struct LabelTable {
  std::vector<std::string> filenames;
  std::vector<std::string> study_ids;  // filename when the CSV has no study_id column
  LabelMatrix labels{0, kNumLabels};

  std::size_t size() const { return filenames.size(); }
  /// Rows selected by `indices`, in that order.
  LabelTable select(std::span<const std::size_t> indices) const;
};

/// Header: filename,<the seven label names>[,study_id]. Values must be 0 or
/// 1 and filenames unique; violations raise ValidationError naming the line
/// and column.
LabelTable parse_labels_csv(const std::string& text, const std::string& source = "labels.csv");
LabelTable load_labels_csv(const std::filesystem::path& path);
/// Always writes the study_id column.
void write_labels_csv(const std::filesystem::path& path, const LabelTable& table);

struct LabelViolation {
  std::size_t row = 0;
  /// 'a': fracture == not_fractured; 'b': a fracture type together with
  /// not_fractured; 'c': fracture without any type (warning only).
  char rule = 'a';
  bool warning = false;
  std::string message;
};

std::vector<LabelViolation> validate_consistency(const LabelMatrix& labels);

/// Loads and preprocesses dir/filename for every name, in parallel.
std::vector<Tensor> load_images(const std::filesystem::path& dir,
                                std::span<const std::string> filenames);

/// Image files directly inside `dir`, sorted by name.
std::vector<std::string> list_image_files(const std::filesystem::path& dir);

/// One feature vector per image, keyed by filename.
struct FeatureTable {
  std::vector<std::string> filenames;
  FeatureMatrix features;
};

/// Header filename,f0,...,f{d-1}; values in shortest round-trip form.
void write_features_csv(const std::filesystem::path& path, const FeatureTable& table);
FeatureTable read_features_csv(const std::filesystem::path& path);

}  // namespace skullnet
