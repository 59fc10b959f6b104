// SPDX-License-Identifier: Apache-2.0
#include "skullnet/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "skullnet/error.hpp"
#include "skullnet/tensor.hpp"

namespace skullnet {

namespace {

constexpr double kCenter = 99.5;
constexpr double kOuter = 80.0;
constexpr double kInner = 70.0;
constexpr double kBackground = 20.0;
constexpr double kBone = 210.0;
constexpr double kNoise = 6.0;

constexpr std::array<std::size_t, 5> kTypes = {kLinear, kDepressed, kLinearNonDepressed, kFacial,
                                               kComminuted};

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

/// Signed angular difference a - b folded into (-180, 180].
double angle_diff(double a, double b) {
  double d = std::fmod(a - b, 360.0);
  if (d <= -180.0) d += 360.0;
  if (d > 180.0) d -= 360.0;
  return d;
}

/// Inside a straight radial band of the given width along direction `phi`.
bool in_radial_gap(double rho, double theta, double phi, double width) {
  const double d = deg2rad(angle_diff(theta, phi));
  return std::cos(d) > 0.0 && rho * std::abs(std::sin(d)) < width / 2.0;
}

}  // namespace

LabelTable synthetic_labels(std::size_t n, std::uint64_t seed) {
  LabelTable table;
  Rng rng(seed);
  std::size_t fractured = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::array<std::uint8_t, kNumLabels> row{};
    if (i % 4 == 3) {
      row[kNotFractured] = 1;
    } else {
      const std::size_t primary = fractured++ % kTypes.size();
      row[kFracture] = 1;
      row[kTypes[primary]] = 1;
      if (rng.uniform() < 0.5) {
        const std::size_t offset = 1 + static_cast<std::size_t>(rng.below(kTypes.size() - 1));
        row[kTypes[(primary + offset) % kTypes.size()]] = 1;
      }
    }
    char name[32];
    std::snprintf(name, sizeof name, "img_%04zu.png", i);
    char study[32];
    std::snprintf(study, sizeof study, "study_%04zu", i / kSyntheticSlicesPerStudy);
    table.filenames.emplace_back(name);
    table.study_ids.emplace_back(study);
    table.labels.append_row(row);
  }
  return table;
}

Raster render_synthetic(std::span<const std::uint8_t> labels, std::uint64_t seed) {
  if (labels.size() != kNumLabels) throw ShapeError("render_synthetic: expected 7 labels");
  Rng rng(seed);
  const double bone = kBone + rng.uniform(-8.0, 8.0);
  auto jitter = [&] { return rng.uniform(-1.5, 1.5); };
  const double linear_at = 90.0 + jitter();
  const double lnd_at = 0.0 + jitter();
  const double comminuted_at = 140.0 + jitter();
  const double depressed_at = 180.0 + jitter();
  const double facial_at = 270.0 + jitter();

  Raster img{kSyntheticSize, kSyntheticSize, 1, std::vector<std::uint8_t>(kSyntheticSize * kSyntheticSize)};
  for (std::size_t y = 0; y < kSyntheticSize; ++y) {
    for (std::size_t x = 0; x < kSyntheticSize; ++x) {
      const double dx = static_cast<double>(x) - kCenter;
      const double dy = kCenter - static_cast<double>(y);
      const double rho = std::hypot(dx, dy);
      double theta = std::atan2(dy, dx) * 180.0 / std::numbers::pi;
      if (theta < 0.0) theta += 360.0;

      double inner = kInner, outer = kOuter;
      if (labels[kDepressed]) {
        constexpr double span = 18.0, depth = 9.0;
        const double d = std::abs(angle_diff(theta, depressed_at));
        if (d < span) {
          const double dent = depth * 0.5 * (1.0 + std::cos(std::numbers::pi * d / span));
          inner -= dent;
          outer -= dent;
        }
      }
      bool on_bone = rho >= inner && rho <= outer;
      if (on_bone && labels[kLinear] && in_radial_gap(rho, theta, linear_at, 4.0)) on_bone = false;
      if (on_bone && labels[kLinearNonDepressed] && in_radial_gap(rho, theta, lnd_at, 4.0)) {
        on_bone = false;
      }
      if (on_bone && labels[kComminuted]) {
        for (double offset : {-15.0, 0.0, 15.0}) {
          if (in_radial_gap(rho, theta, comminuted_at + offset, 3.0)) on_bone = false;
        }
      }
      if (labels[kFacial]) {
        if (on_bone && std::abs(angle_diff(theta, facial_at)) < 7.0) on_bone = false;
        const double fx = kCenter + 62.0 * std::cos(deg2rad(facial_at + 3.0));
        const double fy = kCenter - 62.0 * std::sin(deg2rad(facial_at + 3.0));
        if (std::hypot(static_cast<double>(x) - fx, static_cast<double>(y) - fy) < 4.0) {
          on_bone = true;
        }
      }

      const double v = (on_bone ? bone : kBackground) + kNoise * rng.normal();
      img.pixels[y * kSyntheticSize + x] =
          static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return img;
}

LabelTable generate_synthetic(std::size_t n, std::uint64_t seed,
                              const std::filesystem::path& out_dir) {
  if (n == 0) throw InvalidArgument("generate_synthetic: n must be at least 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw IoError("cannot create output directory " + out_dir.string());
  }
  auto table = synthetic_labels(n, seed);
  const Rng root(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto image_seed = root.derive(i + 1).next_u64();
    write_image(out_dir / table.filenames[i], render_synthetic(table.labels.row(i), image_seed));
  }
  write_labels_csv(out_dir / "labels.csv", table);
  return table;
}

}  // namespace skullnet
