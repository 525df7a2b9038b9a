// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The bvqa Authors

#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bvqa/error.hpp"
#include "bvqa/util.hpp"

namespace bvqa {

/// 8-bit interleaved RGB raster, row-major.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  static constexpr std::size_t kChannels = 3;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(h * w * kChannels, fill) {}

  bool empty() const { return height == 0 || width == 0; }

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * kChannels + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * kChannels + c];
  }

  bool operator==(const Image&) const = default;
};

namespace detail {

inline std::size_t ppm_read_token(const std::string& bytes, std::size_t& pos,
                                  const std::string& origin) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::size_t value = 0;
  std::size_t digits = 0;
  while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
    ++pos;
    ++digits;
  }
  if (digits == 0) throw DataError(origin + ": malformed PPM header");
  return value;
}

}  // namespace detail

/// Decodes a binary PPM (P6, maxval 255). Grayscale PGM input is rejected.
inline Image decode_ppm(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw DataError(origin + ": not a PPM/PGM file");
  if (bytes[1] == '5' || bytes[1] == '2') {
    throw DataError(origin + ": grayscale frames are not supported (expected 3-channel RGB)");
  }
  if (bytes[1] != '6') throw DataError(origin + ": unsupported PNM variant P" + bytes.substr(1, 1));
  std::size_t pos = 2;
  const std::size_t width = detail::ppm_read_token(bytes, pos, origin);
  const std::size_t height = detail::ppm_read_token(bytes, pos, origin);
  const std::size_t maxval = detail::ppm_read_token(bytes, pos, origin);
  if (maxval != 255) throw DataError(origin + ": only 8-bit PPM (maxval 255) is supported");
  if (width == 0 || height == 0) throw DataError(origin + ": zero-sized image");
  ++pos;  // single whitespace byte before the raster
  const std::size_t need = width * height * Image::kChannels;
  if (bytes.size() < pos + need) throw DataError(origin + ": truncated PPM raster");
  Image img;
  img.height = height;
  img.width = width;
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

inline std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

inline Image read_ppm(const std::filesystem::path& path) {
  return decode_ppm(read_file(path), path.string());
}

inline void write_ppm(const Image& img, const std::filesystem::path& path) {
  write_file_atomic(path, encode_ppm(img));
}

}  // namespace bvqa
