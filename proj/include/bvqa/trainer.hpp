// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The bvqa Authors

#pragma once

#include <algorithm>
#include <chrono>
#include <cstring>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "bvqa/error.hpp"
#include "bvqa/nncore.hpp"
#include "bvqa/pooling.hpp"
#include "bvqa/util.hpp"

namespace bvqa {

struct TrainConfig {
  int epochs = 200;
  double lr = 1e-4;
  int batch_size = 16;
  std::uint64_t seed = 42;
  std::set<std::string> freeze;  // parameter groups: spatial, temporal, head
  int checkpoint_every = 0;      // 0 disables periodic checkpoints
  std::filesystem::path checkpoint_path;
  double holdout_frac = 0.0;     // optional validation split taken from the training data
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

inline void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw UsageError("epochs must be >= 1");
  if (c.batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (!(c.lr > 0.0)) throw UsageError("lr must be > 0");
  if (!(c.holdout_frac >= 0.0 && c.holdout_frac < 1.0)) throw UsageError("holdout fraction must lie in [0, 1)");
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  double seconds = 0.0;
};

struct TrainLog {
  std::string stage;  // "pretrain" or "finetune"
  std::string init;   // "scratch", "pretrained" or "resumed"
  std::uint64_t seed = 0;
  KeyValues config;
  std::vector<EpochRecord> epochs;

  /// One JSON object per line: a header record, then one record per epoch.
  std::string to_jsonl() const {
    std::string out;
    nlohmann::ordered_json head;
    head["record"] = "run";
    head["stage"] = stage;
    head["init"] = init;
    head["seed"] = seed;
    head["config"] = config;
    out += head.dump() + "\n";
    for (const auto& e : epochs) {
      nlohmann::ordered_json j;
      j["record"] = "epoch";
      j["epoch"] = e.epoch;
      j["train_loss"] = e.train_loss;
      if (e.val_loss) j["val_loss"] = *e.val_loss;
      j["seconds"] = e.seconds;
      out += j.dump() + "\n";
    }
    return out;
  }
};

struct LabeledVideo {
  std::string id;
  VideoInput input;
  double target = 0.0;
};

/// One image for spatial pretraining: N x d patch features and a score.
struct LabeledImage {
  std::string id;
  std::size_t patches = 0;
  std::size_t dim = 0;
  nn::Vec values;
  double target = 0.0;
};

/// Everything needed to continue a run bit-exactly.
struct TrainingState {
  ModelParams model;
  nn::AdamState optimizer;
  int epochs_done = 0;
  std::uint64_t seed = 0;
  std::string stage;
};

// ---------------------------------------------------------------------------
// Model configuration as flat key-values (shared by checkpoints and run
// configs).
// ---------------------------------------------------------------------------

inline KeyValues model_config_to_kv(const ModelConfig& c) {
  KeyValues kv;
  kv["spatial.variant"] = to_string(c.spatial.variant);
  kv["spatial.input_dim"] = std::to_string(c.spatial.input_dim);
  kv["spatial.hidden"] = std::to_string(c.spatial.hidden);
  kv["spatial.fc_out"] = std::to_string(c.spatial.fc_out);
  kv["spatial.layers"] = std::to_string(c.spatial.layers);
  kv["spatial.patches"] = std::to_string(c.spatial.patches);
  kv["spatial.fc_activation"] = to_string(c.spatial.fc_activation);
  kv["temporal.variant"] = to_string(c.temporal.variant);
  kv["temporal.hidden"] = std::to_string(c.temporal.hidden);
  kv["temporal.fc_out"] = std::to_string(c.temporal.fc_out);
  kv["temporal.layers"] = std::to_string(c.temporal.layers);
  kv["temporal.fc_activation"] = to_string(c.temporal.fc_activation);
  return kv;
}

inline std::size_t kv_size(const KeyValues& kv, const std::string& key, std::size_t fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(it->second, &used);
    if (used != it->second.size() || v < 0) throw std::invalid_argument("");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw UsageError("config key " + key + ": expected a non-negative integer, got '" + it->second + "'");
  }
}

inline ModelConfig model_config_from_kv(const KeyValues& kv, ModelConfig c = {}) {
  if (auto it = kv.find("spatial.variant"); it != kv.end()) c.spatial.variant = parse_spatial_variant(it->second);
  if (auto it = kv.find("temporal.variant"); it != kv.end()) c.temporal.variant = parse_temporal_variant(it->second);
  if (auto it = kv.find("spatial.fc_activation"); it != kv.end()) c.spatial.fc_activation = parse_activation(it->second);
  if (auto it = kv.find("temporal.fc_activation"); it != kv.end()) c.temporal.fc_activation = parse_activation(it->second);
  c.spatial.input_dim = kv_size(kv, "spatial.input_dim", c.spatial.input_dim);
  c.spatial.hidden = kv_size(kv, "spatial.hidden", c.spatial.hidden);
  c.spatial.fc_out = kv_size(kv, "spatial.fc_out", c.spatial.fc_out);
  c.spatial.layers = kv_size(kv, "spatial.layers", c.spatial.layers);
  c.spatial.patches = kv_size(kv, "spatial.patches", c.spatial.patches);
  c.temporal.hidden = kv_size(kv, "temporal.hidden", c.temporal.hidden);
  c.temporal.fc_out = kv_size(kv, "temporal.fc_out", c.temporal.fc_out);
  c.temporal.layers = kv_size(kv, "temporal.layers", c.temporal.layers);
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "BVQC"                      magic
//   u32                         format version (1)
//   u64 seed, u64 epochs_done, u64 adam step
//   f64 lr, beta1, beta2, eps
//   u32 len + bytes             stage name
//   u32 len + bytes             model config as `key = value` lines
//   u32 count, then per array:  u32 name len, name, u32 rank, u64 dims[rank], f64 values
//   u32 count, then per array:  u32 name len, name, u64 n, f64 m[n], f64 v[n]
//   u64                         FNV-1a of every preceding byte
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
inline void put_string(ByteWriter& w, const std::string& s) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
  w.put_bytes(s);
}
inline std::string get_string(ByteReader& r) { return r.get_bytes(r.get<std::uint32_t>()); }
}  // namespace detail

inline std::string encode_checkpoint(const TrainingState& s) {
  ByteWriter w;
  w.put_bytes("BVQC");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(s.seed);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(s.epochs_done));
  w.put<std::uint64_t>(s.optimizer.step);
  w.put<double>(s.optimizer.config.lr);
  w.put<double>(s.optimizer.config.beta1);
  w.put<double>(s.optimizer.config.beta2);
  w.put<double>(s.optimizer.config.eps);
  detail::put_string(w, s.stage);
  KeyValues cfg = model_config_to_kv(s.model.config);
  cfg["pretrain_head"] = s.model.pretrain_head ? "1" : "0";
  detail::put_string(w, format_key_values(cfg));
  const auto params = collect_params(s.model);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put_string(w, p.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.shape.size()));
    for (auto d : p.shape) w.put<std::uint64_t>(d);
    w.put_array(std::span<const double>(p.values));
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.optimizer.moments.size()));
  for (const auto& m : s.optimizer.moments) {
    detail::put_string(w, m.name);
    w.put<std::uint64_t>(m.m.size());
    w.put_array(std::span<const double>(m.m));
    w.put_array(std::span<const double>(m.v));
  }
  w.put<std::uint64_t>(fnv1a64(w.bytes()));
  return w.bytes();
}

inline TrainingState decode_checkpoint(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 8 || bytes.compare(0, 4, "BVQC") != 0) throw DataError(origin + ": not a checkpoint (bad magic)");
  ByteReader r(bytes, origin);
  r.get_bytes(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError(origin + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < 16) throw DataError(origin + ": corrupted checkpoint (truncated)");
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (fnv1a64(std::string_view(bytes).substr(0, bytes.size() - 8)) != stored) {
    throw DataError(origin + ": corrupted checkpoint (checksum mismatch)");
  }
  TrainingState s;
  s.seed = r.get<std::uint64_t>();
  s.epochs_done = static_cast<int>(r.get<std::uint64_t>());
  s.optimizer.step = r.get<std::uint64_t>();
  s.optimizer.config.lr = r.get<double>();
  s.optimizer.config.beta1 = r.get<double>();
  s.optimizer.config.beta2 = r.get<double>();
  s.optimizer.config.eps = r.get<double>();
  s.stage = detail::get_string(r);
  const KeyValues cfg = parse_key_values(detail::get_string(r), origin + " config");
  const auto head_it = cfg.find("pretrain_head");
  s.model = make_model(model_config_from_kv(cfg), head_it != cfg.end() && head_it->second == "1");
  auto params = collect_params(s.model);
  const auto count = r.get<std::uint32_t>();
  if (count != params.size()) {
    throw DataError(origin + ": checkpoint holds " + std::to_string(count) + " arrays, model expects " +
                    std::to_string(params.size()));
  }
  for (auto& p : params) {
    const std::string name = detail::get_string(r);
    if (name != p.name) throw DataError(origin + ": expected array " + p.name + ", found " + name);
    const auto rank = r.get<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (shape != p.shape) throw DataError(origin + ": shape mismatch for " + name);
    r.get_array(p.values);
  }
  const auto n_moments = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_moments; ++i) {
    nn::AdamMoments m;
    m.name = detail::get_string(r);
    const auto n = r.get<std::uint64_t>();
    m.m.resize(n);
    m.v.resize(n);
    r.get_array(std::span<double>(m.m));
    r.get_array(std::span<double>(m.v));
    s.optimizer.moments.push_back(std::move(m));
  }
  if (r.remaining() != 8) throw DataError(origin + ": corrupted checkpoint (trailing bytes)");
  return s;
}

inline void save_checkpoint(const TrainingState& s, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(s));
}

inline TrainingState load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  return decode_checkpoint(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Trainable parameters: the named groups, minus frozen ones.
inline nn::ParamList trainable_params(ModelParams& m, const std::set<std::string>& groups,
                                      const std::set<std::string>& freeze) {
  nn::ParamList out;
  for (auto& p : collect_params(m)) {
    const auto g = param_group(p.name);
    if (groups.count(g) && !freeze.count(g)) out.push_back(p);
  }
  return out;
}

inline nn::ConstParamList matching_grads(const ModelParams& grad, const nn::ParamList& params) {
  nn::ConstParamList all = collect_params(grad);
  nn::ConstParamList out;
  std::size_t j = 0;
  for (const auto& p : params) {
    while (j < all.size() && all[j].name != p.name) ++j;
    if (j == all.size()) throw DataError("gradient for " + p.name + " missing");
    out.push_back(all[j]);
  }
  return out;
}

/// Squared error of sample i, with gradients scaled by `scale` accumulated
/// into `grad`.
using SampleStep = std::function<double(const ModelParams&, std::size_t, double, ModelParams&)>;
/// Squared error of sample i without gradients.
using SampleEval = std::function<double(const ModelParams&, std::size_t)>;

struct SampleSet {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

inline SampleSet make_sample_set(std::size_t n, const TrainConfig& cfg) {
  SampleSet s;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (cfg.holdout_frac > 0.0 && n >= 2) {
    Rng rng(derive_seed(cfg.seed, "holdout"));
    rng.shuffle(idx);
    const auto n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(cfg.holdout_frac * static_cast<double>(n))), 1, n - 1);
    s.validation.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.validation.begin(), s.validation.end());
  } else {
    s.train = std::move(idx);
  }
  return s;
}

/// Runs `n_epochs` more epochs. Sample order for epoch e is a permutation
/// drawn from (seed, e) alone, so a resumed run replays exactly.
inline void run_epochs(TrainingState& state, const SampleSet& samples, const SampleStep& step, const SampleEval& eval,
                       const std::set<std::string>& groups, const TrainConfig& cfg, int n_epochs, TrainLog& log) {
  if (samples.train.empty()) throw DataError("training set is empty");
  auto params = trainable_params(state.model, groups, cfg.freeze);
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  for (int e = 0; e < n_epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const int epoch = state.epochs_done;
    std::vector<std::size_t> order = samples.train;
    Rng rng(derive_seed(state.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double scale = 1.0 / static_cast<double>(end - start);
      ModelParams grad = zeros_like(state.model);
      for (std::size_t i = start; i < end; ++i) loss_sum += step(state.model, order[i], scale, grad);
      nn::adam_update(state.optimizer, params, matching_grads(grad, params));
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(train_loss)) {
      throw NumericError(state.stage + ": training loss became non-finite at epoch " + std::to_string(epoch + 1) +
                         " (lr " + format_double(cfg.lr) + ", previous loss " +
                         (log.epochs.empty() ? std::string("n/a") : format_double(log.epochs.back().train_loss)) + ")");
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = train_loss;
    if (!samples.validation.empty()) {
      double v = 0.0;
      for (auto i : samples.validation) v += eval(state.model, i);
      rec.val_loss = v / static_cast<double>(samples.validation.size());
    }
    state.epochs_done = epoch + 1;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(rec);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() && state.epochs_done % cfg.checkpoint_every == 0) {
      save_checkpoint(state, cfg.checkpoint_path);
    }
  }
}

inline nn::AdamConfig adam_config(const TrainConfig& c) { return {c.lr, c.beta1, c.beta2, c.adam_eps}; }

inline double mean_target(const auto& items) {
  double acc = 0.0;
  for (const auto& it : items) acc += it.target;
  return acc / static_cast<double>(items.size());
}

inline KeyValues train_config_to_kv(const TrainConfig& c) {
  KeyValues kv;
  kv["epochs"] = std::to_string(c.epochs);
  kv["lr"] = format_double(c.lr);
  kv["batch_size"] = std::to_string(c.batch_size);
  kv["seed"] = std::to_string(c.seed);
  std::string fr;
  for (const auto& f : c.freeze) fr += (fr.empty() ? "" : ",") + f;
  kv["freeze"] = fr;
  kv["holdout"] = format_double(c.holdout_frac);
  return kv;
}

// ---------------------------------------------------------------------------
// Stage 1: spatial pretraining on images
// ---------------------------------------------------------------------------

struct PretrainResult {
  SpatialParams spatial;
  nn::FcParams head;
  TrainingState state;
  TrainLog log;
};

inline SampleStep image_step(const std::vector<LabeledImage>& images) {
  return [&images](const ModelParams& m, std::size_t i, double scale, ModelParams& grad) {
    const auto& im = images[i];
    ImageTape tape;
    const double q = image_forward(m, im.values, im.patches, im.dim, &tape);
    image_backward(m, tape, im.patches, im.dim, scale * 2.0 * (q - im.target), grad);
    return (q - im.target) * (q - im.target);
  };
}

inline SampleEval image_eval(const std::vector<LabeledImage>& images) {
  return [&images](const ModelParams& m, std::size_t i) {
    const auto& im = images[i];
    const double q = image_forward(m, im.values, im.patches, im.dim);
    return (q - im.target) * (q - im.target);
  };
}

inline TrainingState prepare_pretrain(const std::vector<LabeledImage>& images, const SpatialPoolConfig& spatial,
                                      const TrainConfig& cfg) {
  validate(cfg);
  if (images.empty()) throw DataError("pretrain: empty dataset");
  for (const auto& im : images) {
    if (im.dim != images.front().dim) {
      throw DataError("pretrain: feature dimension drift (" + im.id + " has d=" + std::to_string(im.dim) +
                      ", expected " + std::to_string(images.front().dim) + ")");
    }
  }
  ModelConfig mc;
  mc.spatial = spatial;
  mc.spatial.input_dim = images.front().dim;
  if (mc.spatial.variant == SpatialVariant::kConcatenate && mc.spatial.patches == 0) {
    mc.spatial.patches = images.front().patches;
  }
  mc.temporal.variant = TemporalVariant::kMean;
  TrainingState s;
  s.stage = "pretrain";
  s.seed = cfg.seed;
  s.model = init_params(mc, derive_seed(cfg.seed, "pretrain"), true);
  s.model.pretrain_head->bias[0] = mean_target(images);
  s.optimizer.config = adam_config(cfg);
  return s;
}

inline const std::set<std::string>& pretrain_groups() {
  static const std::set<std::string> g{"spatial", "pretrain_head"};
  return g;
}

inline void continue_pretrain(TrainingState& s, const std::vector<LabeledImage>& images, const TrainConfig& cfg,
                              int n_epochs, TrainLog& log) {
  run_epochs(s, make_sample_set(images.size(), cfg), image_step(images), image_eval(images), pretrain_groups(), cfg,
             n_epochs, log);
}

inline TrainLog make_log(const std::string& stage, const std::string& init, const ModelConfig& mc,
                         const TrainConfig& cfg) {
  TrainLog log;
  log.stage = stage;
  log.init = init;
  log.seed = cfg.seed;
  log.config = model_config_to_kv(mc);
  for (auto& [k, v] : train_config_to_kv(cfg)) log.config[k] = v;
  return log;
}

/// The spatial module plus a temporary identity-activation head trained on
/// per-image MSE. Only the spatial weights are meant to transfer.
inline PretrainResult pretrain_spatial(const std::vector<LabeledImage>& images, const SpatialPoolConfig& spatial,
                                       const TrainConfig& cfg) {
  PretrainResult r;
  r.state = prepare_pretrain(images, spatial, cfg);
  r.log = make_log("pretrain", "scratch", r.state.model.config, cfg);
  continue_pretrain(r.state, images, cfg, cfg.epochs, r.log);
  r.spatial = r.state.model.spatial;
  r.head = *r.state.model.pretrain_head;
  return r;
}

// ---------------------------------------------------------------------------
// Stage 2: end-to-end fine-tuning on videos
// ---------------------------------------------------------------------------

struct FinetuneResult {
  TrainingState state;
  TrainLog log;
};

inline SampleStep video_step(const std::vector<LabeledVideo>& videos) {
  return [&videos](const ModelParams& m, std::size_t i, double scale, ModelParams& grad) {
    const auto& v = videos[i];
    ModelTape tape;
    const double q = model_forward(m, v.input, &tape);
    model_backward(m, tape, v.input, scale * 2.0 * (q - v.target), grad);
    return (q - v.target) * (q - v.target);
  };
}

inline SampleEval video_eval(const std::vector<LabeledVideo>& videos) {
  return [&videos](const ModelParams& m, std::size_t i) {
    const double q = model_forward(m, videos[i].input);
    return (q - videos[i].target) * (q - videos[i].target);
  };
}

/// Initial state of fine-tuning: a seeded model whose spatial module is
/// replaced by `init_spatial` when given, with the head bias at the mean
/// target.
inline TrainingState prepare_finetune(const std::vector<LabeledVideo>& videos, const SpatialParams* init_spatial,
                                      const ModelConfig& model_cfg, const TrainConfig& cfg) {
  validate(cfg);
  if (videos.empty()) throw DataError("finetune: empty dataset");
  const std::size_t d = videos.front().input.dim;
  for (const auto& v : videos) {
    if (v.input.dim != d) {
      throw DataError("finetune: feature dimension drift (" + v.id + " has d=" + std::to_string(v.input.dim) +
                      ", expected " + std::to_string(d) + ")");
    }
  }
  ModelConfig mc = model_cfg;
  mc.spatial.input_dim = d;
  if (mc.spatial.variant == SpatialVariant::kConcatenate && mc.spatial.patches == 0) {
    mc.spatial.patches = videos.front().input.patches;
  }
  if (init_spatial) {
    if (init_spatial->config.input_dim != d) {
      throw DataError("finetune: pretrained spatial module expects d=" + std::to_string(init_spatial->config.input_dim) +
                      " but the videos have d=" + std::to_string(d));
    }
    if (!(init_spatial->config == mc.spatial)) {
      throw UsageError("finetune: pretrained spatial module configuration differs from the requested one");
    }
  }
  TrainingState s;
  s.stage = "finetune";
  s.seed = cfg.seed;
  s.model = init_params(mc, derive_seed(cfg.seed, "finetune"));
  if (init_spatial) s.model.spatial = *init_spatial;
  s.model.head.bias[0] = mean_target(videos);
  s.optimizer.config = adam_config(cfg);
  return s;
}

inline const std::set<std::string>& finetune_groups() {
  static const std::set<std::string> g{"spatial", "temporal", "head"};
  return g;
}

inline void continue_finetune(TrainingState& s, const std::vector<LabeledVideo>& videos, const TrainConfig& cfg,
                              int n_epochs, TrainLog& log) {
  run_epochs(s, make_sample_set(videos.size(), cfg), video_step(videos), video_eval(videos), finetune_groups(), cfg,
             n_epochs, log);
}

inline FinetuneResult finetune(const std::vector<LabeledVideo>& videos, const SpatialParams* init_spatial,
                               const ModelConfig& model_cfg, const TrainConfig& cfg) {
  FinetuneResult r;
  r.state = prepare_finetune(videos, init_spatial, model_cfg, cfg);
  r.log = make_log("finetune", init_spatial ? "pretrained" : "scratch", r.state.model.config, cfg);
  continue_finetune(r.state, videos, cfg, cfg.epochs, r.log);
  return r;
}

inline std::vector<double> predict_all(const ModelParams& m, const std::vector<LabeledVideo>& videos) {
  std::vector<double> out(videos.size());
  parallel_for(videos.size(), [&](std::size_t i) { out[i] = model_forward(m, videos[i].input); });
  return out;
}

}  // namespace bvqa
