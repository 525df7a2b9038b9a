// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The bvqa Authors

#pragma once

#include <algorithm>
#include <cstddef>
#include <utility>
#include <vector>

#include "bvqa/error.hpp"
#include "bvqa/image.hpp"

namespace bvqa {

struct PatchConfig {
  std::size_t patch_size = 224;
  std::size_t stride = 196;
};

struct PatchPosition {
  std::size_t x = 0;
  std::size_t y = 0;
  bool operator==(const PatchPosition&) const = default;
};

struct PatchGrid {
  std::vector<Image> patches;           // raster order
  std::vector<PatchPosition> positions; // top-left corners in the (padded) frame
  std::size_t patch_size = 0;
  std::size_t stride = 0;

  std::size_t size() const { return patches.size(); }
};

/// Window offsets along one axis: 0, S, 2S, ... while the window fits, then
/// the edge-aligned offset dim - patch if it is not already present.
inline std::vector<std::size_t> patch_positions(std::size_t dim, std::size_t patch, std::size_t stride) {
  if (patch == 0) throw UsageError("patch size must be >= 1");
  if (stride == 0 || stride > patch) throw UsageError("stride must lie in [1, patch size]");
  if (dim < patch) {
    throw UsageError("dimension " + std::to_string(dim) + " is smaller than the patch size " +
                     std::to_string(patch) + "; padding required");
  }
  std::vector<std::size_t> out;
  for (std::size_t off = 0; off + patch <= dim; off += stride) out.push_back(off);
  if (out.back() != dim - patch) out.push_back(dim - patch);
  return out;
}

/// Grows the frame to at least `min_h` x `min_w` by repeating border pixels
/// on the bottom and right. The original pixels keep their coordinates.
inline Image edge_replicate(const Image& frame, std::size_t min_h, std::size_t min_w) {
  const std::size_t h = std::max(frame.height, min_h);
  const std::size_t w = std::max(frame.width, min_w);
  if (h == frame.height && w == frame.width) return frame;
  Image out(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t sy = std::min(y, frame.height - 1);
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sx = std::min(x, frame.width - 1);
      for (std::size_t c = 0; c < Image::kChannels; ++c) out.at(y, x, c) = frame.at(sy, sx, c);
    }
  }
  return out;
}

inline Image crop(const Image& frame, std::size_t x, std::size_t y, std::size_t size) {
  Image out(size, size);
  for (std::size_t r = 0; r < size; ++r) {
    const auto* src = &frame.pixels[((y + r) * frame.width + x) * Image::kChannels];
    std::copy(src, src + size * Image::kChannels, &out.pixels[r * size * Image::kChannels]);
  }
  return out;
}

/// Number of patches a frame of the given size decomposes into.
inline std::size_t patch_count(std::size_t height, std::size_t width, const PatchConfig& cfg) {
  const std::size_t h = std::max(height, cfg.patch_size);
  const std::size_t w = std::max(width, cfg.patch_size);
  return patch_positions(w, cfg.patch_size, cfg.stride).size() *
         patch_positions(h, cfg.patch_size, cfg.stride).size();
}

inline PatchGrid extract_patches(const Image& frame, const PatchConfig& cfg = {}) {
  if (frame.empty()) throw DataError("cannot patch a zero-sized frame");
  if (frame.pixels.size() != frame.height * frame.width * Image::kChannels) {
    throw DataError("frame must have 3 channels");
  }
  const Image padded = edge_replicate(frame, cfg.patch_size, cfg.patch_size);
  const auto xs = patch_positions(padded.width, cfg.patch_size, cfg.stride);
  const auto ys = patch_positions(padded.height, cfg.patch_size, cfg.stride);
  PatchGrid grid;
  grid.patch_size = cfg.patch_size;
  grid.stride = cfg.stride;
  grid.patches.reserve(xs.size() * ys.size());
  for (std::size_t y : ys) {
    for (std::size_t x : xs) {
      grid.patches.push_back(crop(padded, x, y, cfg.patch_size));
      grid.positions.push_back({x, y});
    }
  }
  return grid;
}

}  // namespace bvqa
