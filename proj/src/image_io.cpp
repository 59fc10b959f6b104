// SPDX-License-Identifier: Apache-2.0
#include "skullnet/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include <jpeglib.h>
#include <png.h>

#include "skullnet/error.hpp"

namespace skullnet {

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("cannot read image " + path.string());
  return bytes;
}

[[noreturn]] void bad_image(const std::filesystem::path& path, const std::string& why) {
  throw ValidationError("cannot decode image " + path.string() + ": " + why);
}

Raster decode_png(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    bad_image(path, img.message);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Raster r{img.width, img.height, color ? 3u : 1u, {}};
  r.pixels.assign(PNG_IMAGE_SIZE(img), 0);
  if (!png_image_finish_read(&img, nullptr, r.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    bad_image(path, msg);
  }
  return r;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_fail(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Raster decode_jpeg(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_fail;
  Raster r;
  std::string failure;
  if (setjmp(err.jump)) {
    failure = err.message;
  } else {
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);
    r.width = cinfo.output_width;
    r.height = cinfo.output_height;
    r.channels = static_cast<std::size_t>(cinfo.output_components);
    r.pixels.resize(r.width * r.height * r.channels);
    while (cinfo.output_scanline < cinfo.output_height) {
      JSAMPROW row = r.pixels.data() + std::size_t{cinfo.output_scanline} * r.width * r.channels;
      jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
  }
  jpeg_destroy_decompress(&cinfo);
  if (!failure.empty()) bad_image(path, failure);
  return r;
}

Raster decode_pgm(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::size_t pos = 2;
  auto next_token = [&]() -> long {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    long v = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (++digits > 9) bad_image(path, "PGM header value too large");
    }
    if (digits == 0) bad_image(path, "malformed PGM header");
    return v;
  };
  const long w = next_token(), h = next_token(), maxval = next_token();
  if (w <= 0 || h <= 0) bad_image(path, "PGM has zero dimension");
  if (maxval <= 0 || maxval > 255) bad_image(path, "only 8-bit PGM (maxval <= 255) is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) bad_image(path, "malformed PGM header");
  ++pos;
  Raster r{static_cast<std::size_t>(w), static_cast<std::size_t>(h), 1, {}};
  const std::size_t n = r.width * r.height;
  if (bytes.size() - pos < n) bad_image(path, "truncated PGM data");
  r.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                  bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  if (maxval != 255) {
    for (auto& p : r.pixels) {
      p = static_cast<std::uint8_t>(std::min<long>(255, (p * 255L + maxval / 2) / maxval));
    }
  }
  return r;
}

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

void check_raster(const Raster& r, const std::filesystem::path& path) {
  if (r.width == 0 || r.height == 0 || (r.channels != 1 && r.channels != 3) ||
      r.pixels.size() != r.width * r.height * r.channels) {
    throw InvalidArgument("write_image " + path.string() + ": inconsistent raster");
  }
}

void write_png(const std::filesystem::path& path, const Raster& r) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(r.width);
  img.height = static_cast<png_uint_32>(r.height);
  img.format = r.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, r.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write " + path.string() + ": " + img.message);
  }
}

void write_jpeg(const std::filesystem::path& path, const Raster& r) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot write " + path.string());
  jpeg_compress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_fail;
  std::string failure;
  if (setjmp(err.jump)) {
    failure = err.message;
  } else {
    jpeg_create_compress(&cinfo);
    jpeg_stdio_dest(&cinfo, f);
    cinfo.image_width = static_cast<JDIMENSION>(r.width);
    cinfo.image_height = static_cast<JDIMENSION>(r.height);
    cinfo.input_components = static_cast<int>(r.channels);
    cinfo.in_color_space = r.channels == 3 ? JCS_RGB : JCS_GRAYSCALE;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, 95, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
      auto* row = const_cast<JSAMPLE*>(r.pixels.data() +
                                       std::size_t{cinfo.next_scanline} * r.width * r.channels);
      jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
  }
  jpeg_destroy_compress(&cinfo);
  const bool closed = std::fclose(f) == 0;
  if (!failure.empty()) throw IoError("cannot encode " + path.string() + ": " + failure);
  if (!closed) throw IoError("cannot write " + path.string());
}

void write_pgm(const std::filesystem::path& path, const Raster& r) {
  if (r.channels != 1) throw InvalidArgument("PGM output requires a grayscale raster");
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << r.width << ' ' << r.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(r.pixels.data()),
            static_cast<std::streamsize>(r.pixels.size()));
  out.flush();
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace

Raster read_image(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.empty()) bad_image(path, "file is empty");
  static const std::uint8_t kPngSig[] = {0x89, 'P', 'N', 'G'};
  Raster r;
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kPngSig, 4) == 0) {
    r = decode_png(bytes, path);
  } else if (bytes.size() >= 2 && bytes[0] == 0xFF && bytes[1] == 0xD8) {
    r = decode_jpeg(bytes, path);
  } else if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') {
    r = decode_pgm(bytes, path);
  } else {
    bad_image(path, "unrecognized format (expected PNG, JPEG or binary PGM)");
  }
  if (r.width == 0 || r.height == 0) bad_image(path, "image has zero size");
  return r;
}

void write_image(const std::filesystem::path& path, const Raster& raster) {
  check_raster(raster, path);
  const auto ext = lower_extension(path);
  if (ext == ".png") {
    write_png(path, raster);
  } else if (ext == ".jpg" || ext == ".jpeg") {
    write_jpeg(path, raster);
  } else if (ext == ".pgm") {
    write_pgm(path, raster);
  } else {
    throw InvalidArgument("unsupported image extension '" + ext + "'");
  }
}

bool is_image_file(const std::filesystem::path& path) {
  const auto ext = lower_extension(path);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".pgm";
}

}  // namespace skullnet
