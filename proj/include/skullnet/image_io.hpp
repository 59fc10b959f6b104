// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace skullnet {

/// Decoded 8-bit raster, interleaved row-major. channels is 1 (gray) or 3 (RGB).
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool operator==(const Raster&) const = default;
};

/// Decodes PNG, JPEG or binary 8-bit PGM (P5), chosen by file signature.
/// Alpha is dropped and palette images are expanded to RGB. Throws IoError
/// (missing/unreadable file) or ValidationError (undecodable content), both
/// naming the path.
Raster read_image(const std::filesystem::path& path);

/// Encodes by extension: .png, .jpg/.jpeg (quality 95) or .pgm (gray only).
void write_image(const std::filesystem::path& path, const Raster& raster);

bool is_image_file(const std::filesystem::path& path);

}  // namespace skullnet
