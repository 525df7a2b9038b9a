// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The bvqa Authors

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "bvqa/error.hpp"
#include "bvqa/image.hpp"
#include "bvqa/util.hpp"

namespace bvqa {

namespace fs = std::filesystem;

struct MosScale {
  double lo = 1.0;
  double hi = 5.0;
  bool operator==(const MosScale&) const = default;
};

struct VideoRecord {
  std::string id;
  std::string source;  // frame directory or feature file, relative to the manifest
  double mos = 0.0;
  MosScale scale;
  std::string dataset_tag;
};

struct DatasetManifest {
  std::string name;
  std::vector<VideoRecord> records;
  fs::path base_dir;  // relative sources resolve against this

  fs::path resolve(const VideoRecord& r) const {
    fs::path p(r.source);
    return p.is_absolute() ? p : base_dir / p;
  }

  const VideoRecord* find(const std::string& id) const {
    for (const auto& r : records) {
      if (r.id == id) return &r;
    }
    return nullptr;
  }
};

struct FrameSequence {
  std::vector<Image> frames;
  std::optional<double> frame_rate;
};

struct Fold {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  bool operator==(const Fold&) const = default;
};

struct SplitPlan {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<Fold> folds;
  bool operator==(const SplitPlan&) const = default;
};

// ---------------------------------------------------------------------------
// Manifest I/O
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

inline std::optional<double> parse_real(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

/// Checks one record; `where` prefixes every message.
inline void validate_record(const VideoRecord& r, const std::string& where) {
  if (r.id.empty()) throw DataError(where + ": empty id");
  if (!(r.scale.lo < r.scale.hi)) {
    throw DataError(where + ": scale_lo " + format_double(r.scale.lo) +
                    " must be below scale_hi " + format_double(r.scale.hi));
  }
  if (r.mos < r.scale.lo || r.mos > r.scale.hi) {
    throw DataError(where + ": mos " + format_double(r.mos) + " outside declared scale [" +
                    format_double(r.scale.lo) + ", " + format_double(r.scale.hi) + "]");
  }
}

inline DatasetManifest parse_manifest(const std::string& text, const std::string& origin,
                                      fs::path base_dir = {}) {
  DatasetManifest m;
  m.name = fs::path(origin).stem().string();
  m.base_dir = std::move(base_dir);
  std::set<std::string> seen;
  std::size_t row = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    start = end + 1;
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    const std::string where = origin + ": row " + std::to_string(row);
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 6) {
      throw DataError(where + ": expected 6 tab-separated fields, found " +
                      std::to_string(fields.size()));
    }
    VideoRecord r;
    r.id = trim(fields[0]);
    r.source = trim(fields[1]);
    const auto mos = detail::parse_real(fields[2]);
    const auto lo = detail::parse_real(fields[3]);
    const auto hi = detail::parse_real(fields[4]);
    if (!mos) throw DataError(where + ": mos is not a finite number: '" + fields[2] + "'");
    if (!lo || !hi) throw DataError(where + ": scale bounds are not finite numbers");
    r.mos = *mos;
    r.scale = {*lo, *hi};
    r.dataset_tag = trim(fields[5]);
    if (r.source.empty()) throw DataError(where + ": empty source path");
    validate_record(r, where);
    if (!seen.insert(r.id).second) throw DataError(where + ": duplicate id '" + r.id + "'");
    m.records.push_back(std::move(r));
  }
  if (m.records.empty()) throw DataError(origin + ": manifest has no records");
  return m;
}

inline DatasetManifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("manifest not found: " + path.string());
  return parse_manifest(read_file(path), path.string(), path.parent_path());
}

inline std::string format_manifest(const DatasetManifest& m) {
  std::string out = "# id\tsource\tmos\tscale_lo\tscale_hi\tdataset_tag\n";
  for (const auto& r : m.records) {
    out += r.id + "\t" + r.source + "\t" + format_double(r.mos) + "\t" + format_double(r.scale.lo) +
           "\t" + format_double(r.scale.hi) + "\t" + r.dataset_tag + "\n";
  }
  return out;
}

inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
  write_file_atomic(path, format_manifest(m));
}

// ---------------------------------------------------------------------------
// Frame directories: frames named %06d.<ext>, ordered numerically.
// ---------------------------------------------------------------------------

inline std::string frame_file_name(std::size_t index, const std::string& ext = ".ppm") {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf + ext;
}

/// Frame files of a directory in numeric order. Only `.ppm` rasters decode;
/// other raster extensions are listed so the caller gets a clear error.
inline std::vector<fs::path> list_frame_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("frame directory not found: " + dir.string());
  std::vector<std::pair<std::uint64_t, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string stem = entry.path().stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; }))
      continue;
    std::uint64_t index = 0;
    std::from_chars(stem.data(), stem.data() + stem.size(), index);
    found.emplace_back(index, entry.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [i, p] : found) out.push_back(std::move(p));
  return out;
}

/// Loads every `frame_stride`-th frame of a frame directory.
inline FrameSequence load_frames(const fs::path& dir, std::size_t frame_stride = 1) {
  if (frame_stride == 0) throw UsageError("frame stride must be >= 1");
  const auto files = list_frame_files(dir);
  if (files.empty()) throw DataError(dir.string() + ": no frame files");
  FrameSequence seq;
  for (std::size_t i = 0; i < files.size(); i += frame_stride) {
    const auto& f = files[i];
    if (f.extension() != ".ppm") {
      throw DataError(f.string() + ": unsupported raster format (frames must be binary PPM)");
    }
    Image img = read_ppm(f);
    if (!seq.frames.empty() &&
        (img.height != seq.frames.front().height || img.width != seq.frames.front().width)) {
      throw DataError(f.string() + ": frame dimensions differ from the first frame");
    }
    seq.frames.push_back(std::move(img));
  }
  return seq;
}

inline void save_frames(const FrameSequence& seq, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    write_ppm(seq.frames[t], dir / frame_file_name(t));
  }
}

// ---------------------------------------------------------------------------
// Train/test splits
// ---------------------------------------------------------------------------

/// Train-set size for n records: round(train_frac * n), kept inside [1, n-1]
/// so both sides of every fold are non-empty.
inline std::size_t train_count(std::size_t n, double train_frac) {
  const auto raw = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  return std::clamp<std::size_t>(raw, 1, n - 1);
}

/// k independent random train/test partitions, each from its own derived seed.
inline SplitPlan split_dataset(const DatasetManifest& manifest, double train_frac = 0.8, int k = 10,
                               std::uint64_t seed = 0) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw UsageError("train_frac must lie in (0, 1)");
  if (k < 1) throw UsageError("k must be >= 1");
  const std::size_t n = manifest.records.size();
  if (n < 2) {
    throw DataError("dataset too small for a non-empty test set (" + std::to_string(n) + " records)");
  }
  const std::size_t n_train = train_count(n, train_frac);
  SplitPlan plan;
  plan.k = k;
  plan.seed = seed;
  for (int fold = 0; fold < k; ++fold) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(seed, "split", static_cast<std::uint64_t>(fold)));
    rng.shuffle(order);
    Fold f;
    for (std::size_t i = 0; i < n; ++i) {
      (i < n_train ? f.train_ids : f.test_ids).push_back(manifest.records[order[i]].id);
    }
    plan.folds.push_back(std::move(f));
  }
  return plan;
}

/// True when every record declares the same MOS scale. Mixed scales are
/// only meaningful after calibration.
inline bool uniform_scale(const DatasetManifest& m) {
  return std::all_of(m.records.begin(), m.records.end(),
                     [&](const VideoRecord& r) { return r.scale == m.records.front().scale; });
}

/// Sub-manifest holding the given ids, in the given order.
inline DatasetManifest select_records(const DatasetManifest& m, const std::vector<std::string>& ids) {
  DatasetManifest out;
  out.name = m.name;
  out.base_dir = m.base_dir;
  for (const auto& id : ids) {
    const auto* r = m.find(id);
    if (!r) throw DataError("unknown record id '" + id + "' in manifest " + m.name);
    out.records.push_back(*r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data with a known quality axis
// ---------------------------------------------------------------------------

inline double synth_mos(double level) { return 5.0 - 4.0 * level; }

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;
  return k;
}

/// Separable blur over a planar float buffer (H x W x 3) with clamped borders.
inline void blur_planes(std::vector<double>& buf, std::size_t h, std::size_t w, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(buf.size());
  auto idx = [w](std::size_t y, std::size_t x, std::size_t c) { return (y * w + x) * 3 + c; };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const auto xx = static_cast<std::size_t>(
              std::clamp<long>(static_cast<long>(x) + i, 0, static_cast<long>(w) - 1));
          acc += k[static_cast<std::size_t>(i + radius)] * buf[idx(y, xx, c)];
        }
        tmp[idx(y, x, c)] = acc;
      }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const auto yy = static_cast<std::size_t>(
              std::clamp<long>(static_cast<long>(y) + i, 0, static_cast<long>(h) - 1));
          acc += k[static_cast<std::size_t>(i + radius)] * tmp[idx(yy, x, c)];
        }
        buf[idx(y, x, c)] = acc;
      }
}

}  // namespace detail

/// One synthetic video: drifting sinusoid gratings over fine grain, then a
/// Gaussian blur (sigma = 2.5 * level) and additive uniform noise
/// (amplitude 40 * level). level = 0 leaves the content untouched.
inline FrameSequence synth_video(double level, std::size_t frames, std::size_t height,
                                 std::size_t width, std::uint64_t seed) {
  if (frames == 0 || height == 0 || width == 0) throw UsageError("synthetic video dimensions must be positive");
  if (!(level >= 0.0 && level <= 1.0)) throw UsageError("distortion level must lie in [0, 1]");
  Rng rng(seed);
  struct Grating {
    double fx, fy, phase, amp;
    double color[3];
  };
  std::vector<Grating> gratings(6);
  for (auto& g : gratings) {
    const double freq = rng.uniform(0.04, 0.45);
    const double angle = rng.uniform(0.0, 3.14159265358979323846);
    g.fx = freq * std::cos(angle);
    g.fy = freq * std::sin(angle);
    g.phase = rng.uniform(0.0, 6.283185307179586);
    g.amp = rng.uniform(10.0, 30.0);
    for (double& c : g.color) c = rng.uniform(0.4, 1.0);
  }
  std::vector<double> grain(height * width * 3);
  for (auto& v : grain) v = rng.uniform(-25.0, 25.0);
  const double base[3] = {rng.uniform(90, 160), rng.uniform(90, 160), rng.uniform(90, 160)};
  const double drift_x = rng.uniform(-1.5, 1.5);
  const double drift_y = rng.uniform(-1.5, 1.5);

  FrameSequence seq;
  seq.frame_rate = 30.0;
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> buf(height * width * 3);
    const double ox = drift_x * static_cast<double>(t);
    const double oy = drift_y * static_cast<double>(t);
    const auto gx = static_cast<long>(std::lround(ox));
    const auto gy = static_cast<long>(std::lround(oy));
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const auto sy = static_cast<std::size_t>(((static_cast<long>(y) + gy) % static_cast<long>(height) +
                                                  static_cast<long>(height)) % static_cast<long>(height));
        const auto sx = static_cast<std::size_t>(((static_cast<long>(x) + gx) % static_cast<long>(width) +
                                                  static_cast<long>(width)) % static_cast<long>(width));
        for (std::size_t c = 0; c < 3; ++c) {
          double v = base[c] + grain[(sy * width + sx) * 3 + c];
          for (const auto& g : gratings) {
            v += g.amp * g.color[c] *
                 std::sin(6.283185307179586 * (g.fx * (static_cast<double>(x) + ox) +
                                               g.fy * (static_cast<double>(y) + oy)) + g.phase);
          }
          buf[(y * width + x) * 3 + c] = v;
        }
      }
    }
    if (level > 0.0) {
      detail::blur_planes(buf, height, width, 2.5 * level);
      const double amp = 40.0 * level;
      for (auto& v : buf) v += rng.uniform(-amp, amp);
    }
    Image img(height, width);
    for (std::size_t i = 0; i < buf.size(); ++i) {
      img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(buf[i]), 0L, 255L));
    }
    seq.frames.push_back(std::move(img));
  }
  return seq;
}

struct SynthOptions {
  std::size_t n_videos = 8;
  std::size_t frames_per_video = 6;
  std::size_t height = 64;
  std::size_t width = 64;
  std::vector<double> levels;  // empty: evenly spaced over [0, 1]
  std::uint64_t seed = 1;
  std::string tag = "synthetic";
  std::string id_prefix = "synth";
};

struct SynthDataset {
  DatasetManifest manifest;
  std::vector<FrameSequence> videos;  // aligned with manifest.records
};

inline std::vector<double> synth_levels(const SynthOptions& o) {
  if (!o.levels.empty()) {
    if (o.levels.size() != o.n_videos) {
      throw UsageError("expected " + std::to_string(o.n_videos) + " distortion levels, got " +
                       std::to_string(o.levels.size()));
    }
    return o.levels;
  }
  std::vector<double> levels(o.n_videos);
  for (std::size_t i = 0; i < o.n_videos; ++i) {
    levels[i] = o.n_videos == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(o.n_videos - 1);
  }
  return levels;
}

/// Generates the dataset in memory. Sources point at `frames/<id>`.
inline SynthDataset synth_dataset(const SynthOptions& o) {
  if (o.n_videos == 0 || o.frames_per_video == 0 || o.height == 0 || o.width == 0) {
    throw UsageError("synthetic dataset counts and frame size must be positive");
  }
  const auto levels = synth_levels(o);
  SynthDataset ds;
  ds.manifest.name = o.id_prefix;
  for (std::size_t i = 0; i < o.n_videos; ++i) {
    char id[64];
    std::snprintf(id, sizeof id, "%s_%03zu", o.id_prefix.c_str(), i);
    VideoRecord r;
    r.id = id;
    r.source = "frames/" + r.id;
    r.mos = synth_mos(levels[i]);
    r.scale = {1.0, 5.0};
    r.dataset_tag = o.tag;
    validate_record(r, "synthetic record " + r.id);
    ds.manifest.records.push_back(r);
    ds.videos.push_back(synth_video(levels[i], o.frames_per_video, o.height, o.width,
                                    derive_seed(o.seed, "synth-video", i)));
  }
  return ds;
}

/// Generates the dataset and writes `manifest.tsv` plus frame directories
/// under `out_dir`.
inline DatasetManifest write_synth_dataset(const SynthOptions& o, const fs::path& out_dir) {
  SynthDataset ds = synth_dataset(o);
  ds.manifest.base_dir = out_dir;
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    save_frames(ds.videos[i], out_dir / ds.manifest.records[i].source);
  }
  save_manifest(ds.manifest, out_dir / "manifest.tsv");
  return ds.manifest;
}

}  // namespace bvqa
