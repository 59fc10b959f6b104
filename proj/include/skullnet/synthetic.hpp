// SPDX-License-Identifier: Apache-2.0
//
// Seeded stand-in dataset: 200x200 grayscale images of a bright ring
// ("skull") on a dark noisy background, with each fracture type drawn as a
// defect at its own fixed position on the ring:
//
//   linear                thin radial gap at the top
//   linear_non_depressed  thin radial gap at the right
//   depressed             ring segment pushed inward on the left
//   comminuted            three radiating gaps on the upper left
//   facial                wide gap plus a loose fragment at the bottom
//
// Every fourth image is intact (not_fractured). The others get a primary
// type chosen round-robin and, with probability 1/2, one more distinct type.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>

#include "skullnet/data.hpp"
#include "skullnet/image_io.hpp"

namespace skullnet {

inline constexpr std::size_t kSyntheticSize = 200;
/// Consecutive images share a study id in pairs.
inline constexpr std::size_t kSyntheticSlicesPerStudy = 2;

/// The label schedule for n images: filenames img_0000.png, ..., study ids,
/// and the label matrix. Depends only on (n, seed).
LabelTable synthetic_labels(std::size_t n, std::uint64_t seed);

/// Renders one image for a label row; `seed` drives the noise.
Raster render_synthetic(std::span<const std::uint8_t> labels, std::uint64_t seed);

/// Writes n PNG images plus labels.csv into out_dir (created if missing)
/// and returns the table that was written.
LabelTable generate_synthetic(std::size_t n, std::uint64_t seed,
                              const std::filesystem::path& out_dir);

}  // namespace skullnet
