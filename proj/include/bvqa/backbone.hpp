// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The bvqa Authors

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bvqa/error.hpp"
#include "bvqa/ingest.hpp"
#include "bvqa/patcher.hpp"
#include "bvqa/util.hpp"

namespace bvqa {

/// Per-video patch features, T x N x d, row-major (frame, patch, channel).
struct FeatureTensor {
  std::string video_id;
  std::size_t frames = 0;
  std::size_t patches = 0;
  std::size_t dim = 0;
  std::vector<float> data;

  FeatureTensor() = default;
  FeatureTensor(std::size_t t, std::size_t n, std::size_t d)
      : frames(t), patches(n), dim(d), data(t * n * d, 0.0f) {}

  float& at(std::size_t t, std::size_t n, std::size_t c) { return data[(t * patches + n) * dim + c]; }
  float at(std::size_t t, std::size_t n, std::size_t c) const { return data[(t * patches + n) * dim + c]; }

  std::span<const float> frame(std::size_t t) const {
    return std::span<const float>(data).subspan(t * patches * dim, patches * dim);
  }

  bool operator==(const FeatureTensor&) const = default;
};

inline void validate_features(const FeatureTensor& f, const std::string& where) {
  if (f.frames == 0 || f.patches == 0 || f.dim == 0) {
    throw DataError(where + ": feature dimensions must be >= 1 (T=" + std::to_string(f.frames) +
                    ", N=" + std::to_string(f.patches) + ", d=" + std::to_string(f.dim) + ")");
  }
  if (f.data.size() != f.frames * f.patches * f.dim) {
    throw DataError(where + ": payload length does not match T*N*d");
  }
  for (float v : f.data) {
    if (!std::isfinite(v)) throw DataError(where + ": non-finite feature value");
  }
}

// ---------------------------------------------------------------------------
// Feature files
//
//   bytes  field
//   4      magic "BVQF"
//   4      u32 format version (1)
//   12     u32 T, u32 N, u32 d
//   4*TNd  f32 payload, (frame, patch, channel) row-major
//   8      u64 FNV-1a checksum of the payload bytes
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kFeatureFileVersion = 1;

inline std::string encode_features(const FeatureTensor& f) {
  validate_features(f, "feature tensor " + f.video_id);
  ByteWriter w;
  w.put_bytes("BVQF");
  w.put<std::uint32_t>(kFeatureFileVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.frames));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.patches));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.dim));
  const std::size_t payload_start = w.bytes().size();
  w.put_array(std::span<const float>(f.data));
  const auto payload = std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(w.bytes().data()) + payload_start, f.data.size() * sizeof(float));
  w.put<std::uint64_t>(fnv1a64(payload));
  return w.bytes();
}

inline FeatureTensor decode_features(const std::string& bytes, const std::string& origin) {
  ByteReader r(bytes, origin);
  if (bytes.size() < 4 || bytes.compare(0, 4, "BVQF") != 0) throw DataError(origin + ": bad magic (expected BVQF)");
  r.get_bytes(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kFeatureFileVersion) {
    throw DataError(origin + ": unsupported feature file version " + std::to_string(version));
  }
  FeatureTensor f;
  f.frames = r.get<std::uint32_t>();
  f.patches = r.get<std::uint32_t>();
  f.dim = r.get<std::uint32_t>();
  if (f.frames == 0 || f.patches == 0 || f.dim == 0) {
    throw DataError(origin + ": dimension error, header has T=" + std::to_string(f.frames) +
                    " N=" + std::to_string(f.patches) + " d=" + std::to_string(f.dim));
  }
  const std::uint64_t count = static_cast<std::uint64_t>(f.frames) * f.patches * f.dim;
  const std::uint64_t expected = count * sizeof(float) + sizeof(std::uint64_t);
  if (r.remaining() != expected) {
    throw DataError(origin + ": payload length mismatch (header implies " + std::to_string(expected) +
                    " bytes, file has " + std::to_string(r.remaining()) + ")");
  }
  f.data.resize(count);
  const std::size_t payload_start = r.position();
  r.get_array(std::span<float>(f.data));
  const auto stored = r.get<std::uint64_t>();
  const auto actual = fnv1a64(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(bytes.data()) + payload_start, count * sizeof(float)));
  if (stored != actual) throw DataError(origin + ": payload checksum mismatch");
  for (float v : f.data) {
    if (!std::isfinite(v)) throw DataError(origin + ": non-finite feature value");
  }
  f.video_id = std::filesystem::path(origin).stem().string();
  return f;
}

inline FeatureTensor load_features(const std::filesystem::path& path) {
  return decode_features(read_file(path), path.string());
}

inline void save_features(const FeatureTensor& f, const std::filesystem::path& path, bool overwrite = false) {
  if (path.empty()) throw DataError("filesystem error: empty feature file path");
  if (!overwrite && std::filesystem::exists(path)) {
    throw DataError("refusing to overwrite existing feature file " + path.string());
  }
  write_file_atomic(path, encode_features(f));
}

// ---------------------------------------------------------------------------
// Built-in extractor: three frozen random 3x3 stride-2 convolutions with
// ReLU, then global average pooling. A stand-in for a pretrained CNN.
// ---------------------------------------------------------------------------

enum class ExtractorKind { kPrecomputed, kTinyBuiltin };

struct FeatureExtractorSpec {
  ExtractorKind kind = ExtractorKind::kTinyBuiltin;
  std::size_t dim = 16;
  std::uint64_t seed = 0;
};

class TinyExtractor {
 public:
  static constexpr std::size_t kKernel = 3;
  static constexpr std::size_t kStride = 2;
  /// Smallest patch that survives three valid convolutions.
  static constexpr std::size_t kMinPatch = 15;

  explicit TinyExtractor(const FeatureExtractorSpec& spec) : dim_(spec.dim) {
    if (spec.kind != ExtractorKind::kTinyBuiltin) throw UsageError("TinyExtractor requires the tiny-builtin kind");
    if (spec.dim == 0) throw UsageError("feature dimension must be >= 1");
    const std::array<std::size_t, 4> ch = {3, 8, 16, spec.dim};
    Rng rng(derive_seed(spec.seed, "tiny-extractor"));
    for (std::size_t l = 0; l < 3; ++l) {
      Conv c;
      c.in = ch[l];
      c.out = ch[l + 1];
      const double fan_in = static_cast<double>(c.in * kKernel * kKernel);
      const double fan_out = static_cast<double>(c.out * kKernel * kKernel);
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      c.weights.resize(c.out * c.in * kKernel * kKernel);
      for (auto& w : c.weights) w = rng.uniform(-bound, bound);
      c.bias.resize(c.out);
      for (auto& b : c.bias) b = rng.uniform(-0.05, 0.05);
      layers_[l] = std::move(c);
    }
  }

  std::size_t dim() const { return dim_; }

  /// Feature vector of one square patch.
  std::vector<float> operator()(const Image& patch) const {
    if (patch.height < kMinPatch || patch.width < kMinPatch) {
      throw UsageError("patch size " + std::to_string(patch.height) + " is below the tiny extractor minimum of " +
                       std::to_string(kMinPatch));
    }
    Plane x{patch.height, patch.width, 3, std::vector<double>(patch.pixels.size())};
    for (std::size_t i = 0; i < patch.pixels.size(); ++i) x.values[i] = patch.pixels[i] / 255.0 - 0.5;
    for (const auto& layer : layers_) x = conv_relu(layer, x);
    std::vector<float> out(dim_, 0.0f);
    const double area = static_cast<double>(x.height * x.width);
    for (std::size_t c = 0; c < dim_; ++c) {
      double acc = 0.0;
      for (std::size_t p = 0; p < x.height * x.width; ++p) acc += x.values[p * dim_ + c];
      out[c] = static_cast<float>(acc / area);
    }
    return out;
  }

  /// Checksum over every weight; training never touches these.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (const auto& l : layers_) {
      h = fnv1a64(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(l.weights.data()),
                                                 l.weights.size() * sizeof(double)), h);
      h = fnv1a64(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(l.bias.data()),
                                                 l.bias.size() * sizeof(double)), h);
    }
    return h;
  }

 private:
  struct Conv {
    std::size_t in = 0, out = 0;
    std::vector<double> weights;  // [out][in][ky][kx]
    std::vector<double> bias;
  };
  struct Plane {
    std::size_t height, width, channels;
    std::vector<double> values;  // interleaved (y, x, c)
  };

  static Plane conv_relu(const Conv& c, const Plane& x) {
    Plane y;
    y.height = (x.height - kKernel) / kStride + 1;
    y.width = (x.width - kKernel) / kStride + 1;
    y.channels = c.out;
    y.values.assign(y.height * y.width * c.out, 0.0);
    for (std::size_t oy = 0; oy < y.height; ++oy) {
      for (std::size_t ox = 0; ox < y.width; ++ox) {
        for (std::size_t o = 0; o < c.out; ++o) {
          double acc = c.bias[o];
          for (std::size_t ky = 0; ky < kKernel; ++ky) {
            for (std::size_t kx = 0; kx < kKernel; ++kx) {
              const double* src = &x.values[((oy * kStride + ky) * x.width + ox * kStride + kx) * x.channels];
              const double* w = &c.weights[((o * c.in) * kKernel + ky) * kKernel + kx];
              for (std::size_t i = 0; i < c.in; ++i) acc += w[i * kKernel * kKernel] * src[i];
            }
          }
          y.values[(oy * y.width + ox) * c.out + o] = acc > 0.0 ? acc : 0.0;
        }
      }
    }
    return y;
  }

  std::size_t dim_;
  std::array<Conv, 3> layers_;
};

/// Patches every frame and runs the extractor on each patch.
inline FeatureTensor extract_features(const FrameSequence& video, const PatchConfig& patch_cfg,
                                      const TinyExtractor& extractor, std::string video_id = {}) {
  if (video.frames.empty()) throw DataError("video has no frames");
  FeatureTensor out;
  out.video_id = std::move(video_id);
  out.frames = video.frames.size();
  out.dim = extractor.dim();
  for (std::size_t t = 0; t < video.frames.size(); ++t) {
    const PatchGrid grid = extract_patches(video.frames[t], patch_cfg);
    if (t == 0) {
      out.patches = grid.size();
      out.data.reserve(out.frames * out.patches * out.dim);
    } else if (grid.size() != out.patches) {
      throw DataError("patch count changed between frames");
    }
    for (const auto& patch : grid.patches) {
      const auto v = extractor(patch);
      out.data.insert(out.data.end(), v.begin(), v.end());
    }
  }
  return out;
}

inline FeatureTensor extract_features(const FrameSequence& video, const PatchConfig& patch_cfg,
                                      const FeatureExtractorSpec& spec, std::string video_id = {}) {
  if (spec.kind == ExtractorKind::kPrecomputed) {
    throw UsageError("precomputed features are loaded with load_features, not extracted");
  }
  return extract_features(video, patch_cfg, TinyExtractor(spec), std::move(video_id));
}

}  // namespace bvqa
