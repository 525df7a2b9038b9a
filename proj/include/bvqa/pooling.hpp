// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The bvqa Authors

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bvqa/backbone.hpp"
#include "bvqa/error.hpp"
#include "bvqa/nncore.hpp"
#include "bvqa/util.hpp"

namespace bvqa {

// ---------------------------------------------------------------------------
// Variants and configuration
// ---------------------------------------------------------------------------

enum class SpatialVariant { kConcatenate, kMean, kLstm, kBiLstm };
enum class TemporalVariant { kMean, kHarmonic, kGeometric, kLstm, kBiLstm };

inline constexpr std::array<SpatialVariant, 4> kAllSpatialVariants = {
    SpatialVariant::kConcatenate, SpatialVariant::kMean, SpatialVariant::kLstm, SpatialVariant::kBiLstm};
inline constexpr std::array<TemporalVariant, 5> kAllTemporalVariants = {
    TemporalVariant::kMean, TemporalVariant::kHarmonic, TemporalVariant::kGeometric, TemporalVariant::kLstm,
    TemporalVariant::kBiLstm};

/// Floor applied to frame scores before harmonic/geometric pooling.
inline constexpr double kPositiveFloor = 1e-6;

inline std::string to_string(SpatialVariant v) {
  switch (v) {
    case SpatialVariant::kConcatenate: return "concatenate";
    case SpatialVariant::kMean: return "mean";
    case SpatialVariant::kLstm: return "lstm";
    case SpatialVariant::kBiLstm: return "bilstm";
  }
  return "?";
}

inline std::string to_string(TemporalVariant v) {
  switch (v) {
    case TemporalVariant::kMean: return "mean";
    case TemporalVariant::kHarmonic: return "harmonic";
    case TemporalVariant::kGeometric: return "geometric";
    case TemporalVariant::kLstm: return "lstm";
    case TemporalVariant::kBiLstm: return "bilstm";
  }
  return "?";
}

/// Ablation-table vocabulary.
inline std::string display_name(SpatialVariant v) {
  switch (v) {
    case SpatialVariant::kConcatenate: return "Concatenate";
    case SpatialVariant::kMean: return "Mean";
    case SpatialVariant::kLstm: return "LSTM";
    case SpatialVariant::kBiLstm: return "Bi-LSTM";
  }
  return "?";
}

inline std::string display_name(TemporalVariant v) {
  switch (v) {
    case TemporalVariant::kMean: return "Mean";
    case TemporalVariant::kHarmonic: return "Harmonic";
    case TemporalVariant::kGeometric: return "Geometric";
    case TemporalVariant::kLstm: return "LSTM";
    case TemporalVariant::kBiLstm: return "Bi-LSTM";
  }
  return "?";
}

inline SpatialVariant parse_spatial_variant(const std::string& s) {
  for (auto v : kAllSpatialVariants) {
    if (s == to_string(v) || s == display_name(v)) return v;
  }
  throw UsageError("unknown spatial variant '" + s + "' (expected concatenate, mean, lstm or bilstm)");
}

inline TemporalVariant parse_temporal_variant(const std::string& s) {
  for (auto v : kAllTemporalVariants) {
    if (s == to_string(v) || s == display_name(v)) return v;
  }
  throw UsageError("unknown temporal variant '" + s + "' (expected mean, harmonic, geometric, lstm or bilstm)");
}

inline bool is_recurrent(TemporalVariant v) { return v == TemporalVariant::kLstm || v == TemporalVariant::kBiLstm; }
inline bool is_recurrent(SpatialVariant v) { return v == SpatialVariant::kLstm || v == SpatialVariant::kBiLstm; }

inline nn::Activation parse_activation(const std::string& s) {
  if (s == "linear" || s == "identity") return nn::Activation::kLinear;
  if (s == "relu") return nn::Activation::kRelu;
  throw UsageError("unknown activation '" + s + "' (expected linear or relu)");
}

inline std::string to_string(nn::Activation a) { return a == nn::Activation::kRelu ? "relu" : "linear"; }

struct SpatialPoolConfig {
  SpatialVariant variant = SpatialVariant::kBiLstm;
  std::size_t input_dim = 2048;
  std::size_t hidden = 64;
  std::size_t fc_out = 256;
  std::size_t layers = 2;
  std::size_t patches = 0;  // fixed N, concatenate variant only
  nn::Activation fc_activation = nn::Activation::kLinear;
  bool operator==(const SpatialPoolConfig&) const = default;
};

struct TemporalPoolConfig {
  TemporalVariant variant = TemporalVariant::kBiLstm;
  std::size_t hidden = 64;
  std::size_t fc_out = 256;
  std::size_t layers = 2;
  nn::Activation fc_activation = nn::Activation::kLinear;
  bool operator==(const TemporalPoolConfig&) const = default;
};

struct ModelConfig {
  SpatialPoolConfig spatial;
  TemporalPoolConfig temporal;
  bool operator==(const ModelConfig&) const = default;
};

inline void validate(const SpatialPoolConfig& c) {
  if (c.input_dim == 0 || c.fc_out == 0) throw UsageError("spatial: input_dim and fc_out must be >= 1");
  if (is_recurrent(c.variant) && (c.hidden == 0 || c.layers == 0)) throw UsageError("spatial: hidden and layers must be >= 1");
  if (c.variant == SpatialVariant::kConcatenate && c.patches == 0) {
    throw UsageError("spatial: the concatenate variant needs a fixed patch count");
  }
}

inline void validate(const TemporalPoolConfig& c) {
  if (is_recurrent(c.variant) && (c.hidden == 0 || c.layers == 0 || c.fc_out == 0)) {
    throw UsageError("temporal: hidden, layers and fc_out must be >= 1");
  }
}

// ---------------------------------------------------------------------------
// Recurrent stacks (LSTM or Bi-LSTM layers; final state of the last layer)
// ---------------------------------------------------------------------------

struct RecurrentLayer {
  bool bidirectional = true;
  nn::LstmParams fwd;
  nn::LstmParams bwd;  // unused when unidirectional
  bool operator==(const RecurrentLayer&) const = default;
};

struct RecurrentStack {
  std::vector<RecurrentLayer> layers;
  bool operator==(const RecurrentStack&) const = default;

  static RecurrentStack make(bool bidirectional, std::size_t input, std::size_t hidden, std::size_t count) {
    RecurrentStack s;
    std::size_t in = input;
    for (std::size_t l = 0; l < count; ++l) {
      RecurrentLayer layer;
      layer.bidirectional = bidirectional;
      layer.fwd = nn::LstmParams::zeros(in, hidden);
      if (bidirectional) layer.bwd = nn::LstmParams::zeros(in, hidden);
      s.layers.push_back(std::move(layer));
      in = bidirectional ? 2 * hidden : hidden;
    }
    return s;
  }

  std::size_t output_width() const {
    const auto& last = layers.back();
    return last.bidirectional ? 2 * last.fwd.hidden_size : last.fwd.hidden_size;
  }
};

struct RecurrentStackTape {
  std::vector<nn::BiLstmTape> layers;  // unidirectional layers use `.fwd` only
};

inline nn::Vec recurrent_stack_forward(const RecurrentStack& s, const nn::Sequence& seq, RecurrentStackTape* tape) {
  if (tape) tape->layers.assign(s.layers.size(), {});
  nn::Sequence current = seq;
  nn::Vec final;
  for (std::size_t l = 0; l < s.layers.size(); ++l) {
    const auto& layer = s.layers[l];
    if (layer.bidirectional) {
      auto out = nn::bilstm_forward(layer.fwd, layer.bwd, current, tape ? &tape->layers[l] : nullptr);
      current = std::move(out.hidden);
      final = std::move(out.final);
    } else {
      auto out = nn::lstm_forward(layer.fwd, current, tape ? &tape->layers[l].fwd : nullptr);
      current = std::move(out.hidden);
      final = std::move(out.final.h);
    }
  }
  return final;
}

inline nn::Sequence recurrent_stack_backward(const RecurrentStack& s, const RecurrentStackTape& tape,
                                             std::span<const double> d_final, RecurrentStack& grad) {
  nn::Sequence d_hidden;  // gradient w.r.t. the per-step outputs of the current layer
  for (std::size_t l = s.layers.size(); l-- > 0;) {
    const auto& layer = s.layers[l];
    auto& g = grad.layers[l];
    const bool top = l + 1 == s.layers.size();
    if (layer.bidirectional) {
      d_hidden = nn::bilstm_backward(layer.fwd, layer.bwd, tape.layers[l], d_hidden,
                                     top ? d_final : std::span<const double>{}, g.fwd, g.bwd);
    } else {
      const std::size_t steps = tape.layers[l].fwd.steps.size();
      if (top) {
        d_hidden.assign(steps, nn::Vec(layer.fwd.hidden_size, 0.0));
        nn::add_into(d_hidden.back(), d_final);
      }
      d_hidden = nn::lstm_backward(layer.fwd, tape.layers[l].fwd, d_hidden, g.fwd);
    }
  }
  return d_hidden;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct SpatialParams {
  SpatialPoolConfig config;
  RecurrentStack stack;  // recurrent variants only
  nn::FcParams fc;
  bool operator==(const SpatialParams&) const = default;
};

struct TemporalParams {
  TemporalPoolConfig config;
  RecurrentStack stack;  // recurrent variants only
  nn::FcParams fc;       // recurrent variants only
  bool operator==(const TemporalParams&) const = default;
};

struct ModelParams {
  ModelConfig config;
  SpatialParams spatial;
  TemporalParams temporal;
  nn::FcParams head;
  std::optional<nn::FcParams> pretrain_head;
  bool operator==(const ModelParams&) const = default;
};

inline std::size_t spatial_fc_input(const SpatialPoolConfig& c) {
  switch (c.variant) {
    case SpatialVariant::kConcatenate: return c.patches * c.input_dim;
    case SpatialVariant::kMean: return c.input_dim;
    case SpatialVariant::kLstm: return c.hidden;
    case SpatialVariant::kBiLstm: return 2 * c.hidden;
  }
  return 0;
}

inline std::size_t head_input(const ModelConfig& c) {
  return is_recurrent(c.temporal.variant) ? c.temporal.fc_out : c.spatial.fc_out;
}

inline SpatialParams make_spatial(const SpatialPoolConfig& c) {
  validate(c);
  SpatialParams p;
  p.config = c;
  if (is_recurrent(c.variant)) {
    p.stack = RecurrentStack::make(c.variant == SpatialVariant::kBiLstm, c.input_dim, c.hidden, c.layers);
  }
  p.fc = nn::FcParams::zeros(spatial_fc_input(c), c.fc_out, c.fc_activation);
  return p;
}

inline TemporalParams make_temporal(const TemporalPoolConfig& c, std::size_t input_dim) {
  validate(c);
  TemporalParams p;
  p.config = c;
  if (is_recurrent(c.variant)) {
    const bool bi = c.variant == TemporalVariant::kBiLstm;
    p.stack = RecurrentStack::make(bi, input_dim, c.hidden, c.layers);
    p.fc = nn::FcParams::zeros(p.stack.output_width(), c.fc_out, c.fc_activation);
  }
  return p;
}

/// Zero-valued model of the configured shape.
inline ModelParams make_model(const ModelConfig& c, bool with_pretrain_head = false) {
  ModelParams m;
  m.config = c;
  m.spatial = make_spatial(c.spatial);
  m.temporal = make_temporal(c.temporal, c.spatial.fc_out);
  m.head = nn::FcParams::zeros(head_input(c), 1);
  if (with_pretrain_head) m.pretrain_head = nn::FcParams::zeros(c.spatial.fc_out, 1);
  return m;
}

template <class Stack>
void append_stack_params(std::vector<nn::BasicParamRef<nn::detail::ValueOf<Stack>>>& out, const std::string& prefix,
                         Stack& s) {
  for (std::size_t l = 0; l < s.layers.size(); ++l) {
    auto& layer = s.layers[l];
    const std::string base = prefix + (layer.bidirectional ? ".bilstm" : ".lstm") + std::to_string(l + 1);
    if (layer.bidirectional) {
      nn::append_params(out, base + ".fwd", layer.fwd);
      nn::append_params(out, base + ".bwd", layer.bwd);
    } else {
      nn::append_params(out, base, layer.fwd);
    }
  }
}

template <class S>
void append_spatial_params(std::vector<nn::BasicParamRef<nn::detail::ValueOf<S>>>& out, S& s) {
  append_stack_params(out, "spatial", s.stack);
  nn::append_params(out, "spatial.fc", s.fc);
}

/// Every trainable array of the model under its dotted path.
template <class M>
  requires std::is_same_v<std::remove_const_t<M>, ModelParams>
auto collect_params(M& m) {
  std::vector<nn::BasicParamRef<nn::detail::ValueOf<M>>> out;
  append_spatial_params(out, m.spatial);
  if (is_recurrent(m.temporal.config.variant)) {
    append_stack_params(out, "temporal", m.temporal.stack);
    nn::append_params(out, "temporal.fc", m.temporal.fc);
  }
  nn::append_params(out, "head", m.head);
  if (m.pretrain_head) nn::append_params(out, "pretrain_head", *m.pretrain_head);
  return out;
}

/// Parameter group of a dotted path: the component before the first dot.
inline std::string param_group(const std::string& name) { return name.substr(0, name.find('.')); }

inline ModelParams zeros_like(const ModelParams& m) {
  ModelParams z = m;
  for (auto& p : collect_params(z)) std::fill(p.values.begin(), p.values.end(), 0.0);
  return z;
}

inline void init_spatial(SpatialParams& s, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init.spatial"));
  for (auto& layer : s.stack.layers) {
    nn::init_lstm(layer.fwd, rng);
    if (layer.bidirectional) nn::init_lstm(layer.bwd, rng);
  }
  nn::init_fc(s.fc, rng);
}

/// Seeded initialization; each module draws from its own derived stream so
/// the spatial weights do not depend on the temporal variant.
inline ModelParams init_params(const ModelConfig& c, std::uint64_t seed, bool with_pretrain_head = false) {
  ModelParams m = make_model(c, with_pretrain_head);
  init_spatial(m.spatial, seed);
  {
    Rng rng(derive_seed(seed, "init.temporal"));
    for (auto& layer : m.temporal.stack.layers) {
      nn::init_lstm(layer.fwd, rng);
      if (layer.bidirectional) nn::init_lstm(layer.bwd, rng);
    }
    if (is_recurrent(c.temporal.variant)) nn::init_fc(m.temporal.fc, rng);
  }
  {
    Rng rng(derive_seed(seed, "init.head"));
    nn::init_fc(m.head, rng);
  }
  if (m.pretrain_head) {
    Rng rng(derive_seed(seed, "init.pretrain_head"));
    nn::init_fc(*m.pretrain_head, rng);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Closed-form parameter counts
// ---------------------------------------------------------------------------

inline std::size_t count_stack_params(bool bidirectional, std::size_t input, std::size_t hidden, std::size_t layers) {
  std::size_t n = 0;
  std::size_t in = input;
  const std::size_t dirs = bidirectional ? 2 : 1;
  for (std::size_t l = 0; l < layers; ++l) {
    n += dirs * nn::lstm_param_count(in, hidden);
    in = dirs * hidden;
  }
  return n;
}

inline std::size_t count_spatial_params(const SpatialPoolConfig& c, bool with_pretrain_head = false) {
  std::size_t n = 0;
  if (is_recurrent(c.variant)) {
    n += count_stack_params(c.variant == SpatialVariant::kBiLstm, c.input_dim, c.hidden, c.layers);
  }
  n += nn::fc_param_count(spatial_fc_input(c), c.fc_out);
  if (with_pretrain_head) n += nn::fc_param_count(c.fc_out, 1);
  return n;
}

inline std::size_t count_params(const ModelConfig& c, bool with_pretrain_head = false) {
  std::size_t n = count_spatial_params(c.spatial, with_pretrain_head);
  if (is_recurrent(c.temporal.variant)) {
    const bool bi = c.temporal.variant == TemporalVariant::kBiLstm;
    n += count_stack_params(bi, c.spatial.fc_out, c.temporal.hidden, c.temporal.layers);
    n += nn::fc_param_count((bi ? 2 : 1) * c.temporal.hidden, c.temporal.fc_out);
  }
  n += nn::fc_param_count(head_input(c), 1);
  return n;
}

// ---------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------

/// Double-precision copy of a feature tensor, the unit of training.
struct VideoInput {
  std::size_t frames = 0;
  std::size_t patches = 0;
  std::size_t dim = 0;
  nn::Vec values;  // (frame, patch, channel) row-major

  std::span<const double> frame(std::size_t t) const {
    return std::span<const double>(values).subspan(t * patches * dim, patches * dim);
  }
};

inline VideoInput to_input(const FeatureTensor& f) {
  VideoInput v{f.frames, f.patches, f.dim, nn::Vec(f.data.begin(), f.data.end())};
  return v;
}

// ---------------------------------------------------------------------------
// Spatial pooling: N x d patch features -> frame vector
// ---------------------------------------------------------------------------

struct SpatialTape {
  RecurrentStackTape stack;
  nn::FcCache fc;
};

inline void check_spatial_input(const SpatialPoolConfig& c, std::size_t n, std::size_t d) {
  if (n == 0) throw DataError("spatial stage: frame has no patches");
  if (d != c.input_dim) {
    throw DataError("spatial stage: feature dimension " + std::to_string(d) + " does not match model input dimension " +
                    std::to_string(c.input_dim));
  }
  if (c.variant == SpatialVariant::kConcatenate && n != c.patches) {
    throw DataError("spatial stage: concatenate variant expects exactly " + std::to_string(c.patches) +
                    " patches per frame, got " + std::to_string(n));
  }
}

inline nn::Sequence to_sequence(std::span<const double> frame, std::size_t n, std::size_t d) {
  nn::Sequence seq(n);
  for (std::size_t j = 0; j < n; ++j) seq[j].assign(frame.begin() + static_cast<std::ptrdiff_t>(j * d),
                                                    frame.begin() + static_cast<std::ptrdiff_t>((j + 1) * d));
  return seq;
}

inline nn::Vec spatial_pool_forward(const SpatialParams& p, std::span<const double> frame, std::size_t n, std::size_t d,
                                    SpatialTape* tape = nullptr) {
  check_spatial_input(p.config, n, d);
  nn::Vec fc_in;
  switch (p.config.variant) {
    case SpatialVariant::kConcatenate:
      fc_in.assign(frame.begin(), frame.end());
      break;
    case SpatialVariant::kMean:
      fc_in.assign(d, 0.0);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < d; ++c) fc_in[c] += frame[j * d + c];
      for (auto& v : fc_in) v /= static_cast<double>(n);
      break;
    case SpatialVariant::kLstm:
    case SpatialVariant::kBiLstm:
      fc_in = recurrent_stack_forward(p.stack, to_sequence(frame, n, d), tape ? &tape->stack : nullptr);
      break;
  }
  return nn::fc_forward(p.fc, fc_in, tape ? &tape->fc : nullptr);
}

/// Returns dL/d(frame features), N*d values.
inline nn::Vec spatial_pool_backward(const SpatialParams& p, const SpatialTape& tape, std::size_t n, std::size_t d,
                                     std::span<const double> dy, SpatialParams& grad) {
  const nn::Vec d_fc_in = nn::fc_backward(p.fc, tape.fc, dy, grad.fc);
  nn::Vec dframe(n * d, 0.0);
  switch (p.config.variant) {
    case SpatialVariant::kConcatenate:
      dframe = d_fc_in;
      break;
    case SpatialVariant::kMean:
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < d; ++c) dframe[j * d + c] = d_fc_in[c] / static_cast<double>(n);
      break;
    case SpatialVariant::kLstm:
    case SpatialVariant::kBiLstm: {
      const auto dx = recurrent_stack_backward(p.stack, tape.stack, d_fc_in, grad.stack);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < d; ++c) dframe[j * d + c] = dx[j][c];
      break;
    }
  }
  return dframe;
}

// ---------------------------------------------------------------------------
// Scalar temporal pooling of frame scores
// ---------------------------------------------------------------------------

inline double pool_scores(TemporalVariant v, std::span<const double> s) {
  if (s.empty()) throw DataError("temporal stage: no frames");
  const double t = static_cast<double>(s.size());
  switch (v) {
    case TemporalVariant::kMean: {
      double acc = 0.0;
      for (double x : s) acc += x;
      return acc / t;
    }
    case TemporalVariant::kHarmonic: {
      double acc = 0.0;
      for (double x : s) acc += 1.0 / std::max(x, kPositiveFloor);
      return t / acc;
    }
    case TemporalVariant::kGeometric: {
      double acc = 0.0;
      for (double x : s) acc += std::log(std::max(x, kPositiveFloor));
      return std::exp(acc / t);
    }
    default:
      throw UsageError("pool_scores: recurrent temporal variants pool vectors, not scores");
  }
}

/// d(pooled)/d(s_i); entries at or below the floor get zero gradient.
inline nn::Vec pool_scores_backward(TemporalVariant v, std::span<const double> s) {
  const double t = static_cast<double>(s.size());
  nn::Vec g(s.size(), 0.0);
  switch (v) {
    case TemporalVariant::kMean:
      for (auto& x : g) x = 1.0 / t;
      break;
    case TemporalVariant::kHarmonic: {
      double acc = 0.0;
      for (double x : s) acc += 1.0 / std::max(x, kPositiveFloor);
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] > kPositiveFloor) g[i] = t / (acc * acc) / (s[i] * s[i]);
      }
      break;
    }
    case TemporalVariant::kGeometric: {
      const double pooled = pool_scores(v, s);
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] > kPositiveFloor) g[i] = pooled / (t * s[i]);
      }
      break;
    }
    default:
      throw UsageError("pool_scores_backward: recurrent temporal variants pool vectors, not scores");
  }
  return g;
}

// ---------------------------------------------------------------------------
// Temporal pooling + regression head
// ---------------------------------------------------------------------------

struct TemporalTape {
  RecurrentStackTape stack;
  nn::FcCache fc;
  nn::FcCache head;                  // recurrent variants
  std::vector<nn::FcCache> frame_heads;  // scalar variants, one per frame
  nn::Vec frame_scores;
};

inline double regress(const nn::FcParams& head, std::span<const double> pooled, nn::FcCache* cache = nullptr) {
  if (head.out() != 1) throw UsageError("regression head must have exactly one output");
  if (pooled.size() != head.in()) {
    throw DataError("regression stage: vector width " + std::to_string(pooled.size()) + " does not match head width " +
                    std::to_string(head.in()));
  }
  return nn::fc_forward(head, pooled, cache)[0];
}

/// Pools frame vectors into a video score: recurrent variants build the video
/// vector first and regress it; scalar variants regress every frame and pool
/// the scores.
inline double temporal_pool_forward(const TemporalParams& p, const nn::FcParams& head, const nn::Sequence& frames,
                                    TemporalTape* tape = nullptr) {
  if (frames.empty()) throw DataError("temporal stage: no frames");
  if (is_recurrent(p.config.variant)) {
    const nn::Vec state = recurrent_stack_forward(p.stack, frames, tape ? &tape->stack : nullptr);
    const nn::Vec video = nn::fc_forward(p.fc, state, tape ? &tape->fc : nullptr);
    return regress(head, video, tape ? &tape->head : nullptr);
  }
  nn::Vec scores(frames.size());
  if (tape) tape->frame_heads.assign(frames.size(), {});
  for (std::size_t t = 0; t < frames.size(); ++t) {
    scores[t] = regress(head, frames[t], tape ? &tape->frame_heads[t] : nullptr);
  }
  if (tape) tape->frame_scores = scores;
  return pool_scores(p.config.variant, scores);
}

/// Returns dL/d(frame vector) per frame.
inline nn::Sequence temporal_pool_backward(const TemporalParams& p, const nn::FcParams& head, const TemporalTape& tape,
                                           double d_score, TemporalParams& grad, nn::FcParams& grad_head) {
  const nn::Vec dq{d_score};
  if (is_recurrent(p.config.variant)) {
    const nn::Vec d_video = nn::fc_backward(head, tape.head, dq, grad_head);
    const nn::Vec d_state = nn::fc_backward(p.fc, tape.fc, d_video, grad.fc);
    return recurrent_stack_backward(p.stack, tape.stack, d_state, grad.stack);
  }
  const nn::Vec ds = pool_scores_backward(p.config.variant, tape.frame_scores);
  nn::Sequence d_frames(tape.frame_heads.size());
  for (std::size_t t = 0; t < d_frames.size(); ++t) {
    const nn::Vec g{d_score * ds[t]};
    d_frames[t] = nn::fc_backward(head, tape.frame_heads[t], g, grad_head);
  }
  return d_frames;
}

// ---------------------------------------------------------------------------
// Whole model
// ---------------------------------------------------------------------------

/// Everything the reverse pass needs from one video's forward pass.
struct ModelTape {
  std::vector<SpatialTape> frames;
  TemporalTape temporal;
  double score = 0.0;
};

inline void check_video_input(const ModelParams& m, const VideoInput& x) {
  if (x.frames == 0) throw DataError("temporal stage: video has no frames");
  check_spatial_input(m.config.spatial, x.patches, x.dim);
}

inline double model_forward(const ModelParams& m, const VideoInput& x, ModelTape* tape = nullptr) {
  check_video_input(m, x);
  nn::Sequence frame_vectors(x.frames);
  if (tape) tape->frames.assign(x.frames, {});
  for (std::size_t t = 0; t < x.frames; ++t) {
    frame_vectors[t] = spatial_pool_forward(m.spatial, x.frame(t), x.patches, x.dim, tape ? &tape->frames[t] : nullptr);
  }
  const double q = temporal_pool_forward(m.temporal, m.head, frame_vectors, tape ? &tape->temporal : nullptr);
  if (tape) tape->score = q;
  return q;
}

/// Reverse pass for dL/dq = d_score. Parameter gradients accumulate into
/// `grad`; input gradients are written to `d_input` when given.
inline void model_backward(const ModelParams& m, const ModelTape& tape, const VideoInput& x, double d_score,
                           ModelParams& grad, nn::Vec* d_input = nullptr) {
  const nn::Sequence d_frames = temporal_pool_backward(m.temporal, m.head, tape.temporal, d_score, grad.temporal, grad.head);
  if (d_input) d_input->assign(x.values.size(), 0.0);
  for (std::size_t t = 0; t < x.frames; ++t) {
    const nn::Vec df = spatial_pool_backward(m.spatial, tape.frames[t], x.patches, x.dim, d_frames[t], grad.spatial);
    if (d_input) std::copy(df.begin(), df.end(), d_input->begin() + static_cast<std::ptrdiff_t>(t * x.patches * x.dim));
  }
}

/// Image-quality path used for pretraining: spatial pooling + pretrain head.
struct ImageTape {
  SpatialTape spatial;
  nn::FcCache head;
};

inline double image_forward(const ModelParams& m, std::span<const double> frame, std::size_t n, std::size_t d,
                            ImageTape* tape = nullptr) {
  if (!m.pretrain_head) throw UsageError("image_forward requires a pretraining head");
  const nn::Vec y = spatial_pool_forward(m.spatial, frame, n, d, tape ? &tape->spatial : nullptr);
  return regress(*m.pretrain_head, y, tape ? &tape->head : nullptr);
}

inline nn::Vec image_backward(const ModelParams& m, const ImageTape& tape, std::size_t n, std::size_t d, double d_score,
                              ModelParams& grad) {
  const nn::Vec dq{d_score};
  const nn::Vec dy = nn::fc_backward(*m.pretrain_head, tape.head, dq, *grad.pretrain_head);
  return spatial_pool_backward(m.spatial, tape.spatial, n, d, dy, grad.spatial);
}

/// Predicted quality score of one video.
inline double predict_video(const ModelParams& m, const FeatureTensor& features) {
  validate_features(features, "video " + features.video_id);
  return model_forward(m, to_input(features));
}

}  // namespace bvqa
