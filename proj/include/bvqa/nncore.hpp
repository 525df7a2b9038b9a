// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The bvqa Authors

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "bvqa/error.hpp"
#include "bvqa/util.hpp"

/// Sequence-model kernels: LSTM and Bi-LSTM layers, fully connected layers,
/// MSE, reverse-mode gradients through time, Adam and a central-difference
/// gradient oracle. Everything computes in double precision.
namespace bvqa::nn {

using Vec = std::vector<double>;
using Sequence = std::vector<Vec>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vec data_;
};

/// Left-to-right accumulation; the order is part of the reproducibility contract.
inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline Vec concat(std::span<const double> a, std::span<const double> b) {
  Vec out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

inline void add_into(Vec& acc, std::span<const double> v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

enum class Activation { kLinear, kRelu };

struct FcParams {
  Matrix weight;  // out x in
  Vec bias;       // out
  Activation activation = Activation::kLinear;

  static FcParams zeros(std::size_t in, std::size_t out, Activation act = Activation::kLinear) {
    return FcParams{Matrix(out, in), Vec(out, 0.0), act};
  }
  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }
  bool operator==(const FcParams&) const = default;
};

struct FcCache {
  Vec input;
  Vec pre;
};

inline Vec fc_forward(const FcParams& p, std::span<const double> x, FcCache* cache = nullptr) {
  if (x.size() != p.in()) {
    throw DataError("fc: input width " + std::to_string(x.size()) + " does not match layer width " +
                    std::to_string(p.in()));
  }
  Vec pre(p.out());
  for (std::size_t r = 0; r < p.out(); ++r) pre[r] = dot(p.weight.row(r), x) + p.bias[r];
  Vec y = pre;
  if (p.activation == Activation::kRelu) {
    for (auto& v : y) v = v > 0.0 ? v : 0.0;
  }
  if (cache) {
    cache->input.assign(x.begin(), x.end());
    cache->pre = std::move(pre);
  }
  return y;
}

/// Accumulates parameter gradients into `grad`; returns dL/dx.
inline Vec fc_backward(const FcParams& p, const FcCache& cache, std::span<const double> dy, FcParams& grad) {
  Vec dpre(dy.begin(), dy.end());
  if (p.activation == Activation::kRelu) {
    for (std::size_t r = 0; r < dpre.size(); ++r) {
      if (!(cache.pre[r] > 0.0)) dpre[r] = 0.0;
    }
  }
  Vec dx(p.in(), 0.0);
  for (std::size_t r = 0; r < p.out(); ++r) {
    const double g = dpre[r];
    grad.bias[r] += g;
    if (g == 0.0) continue;
    for (std::size_t c = 0; c < p.in(); ++c) {
      grad.weight(r, c) += g * cache.input[c];
      dx[c] += g * p.weight(r, c);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// LSTM
//
// One weight matrix per gate over the concatenation (h_prev ⊕ x): columns
// [0, hidden) multiply h_prev, columns [hidden, hidden + input) multiply x.
// ---------------------------------------------------------------------------

enum Gate : std::size_t { kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCandidate = 3 };
inline constexpr std::array<const char*, 4> kGateNames = {"i", "f", "o", "c"};

struct LstmParams {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  std::array<Matrix, 4> weight;
  std::array<Vec, 4> bias;

  static LstmParams zeros(std::size_t input, std::size_t hidden) {
    LstmParams p;
    p.input_size = input;
    p.hidden_size = hidden;
    for (std::size_t g = 0; g < 4; ++g) {
      p.weight[g] = Matrix(hidden, hidden + input);
      p.bias[g] = Vec(hidden, 0.0);
    }
    return p;
  }
  bool operator==(const LstmParams&) const = default;
};

struct LstmState {
  Vec h;
  Vec c;
};

struct LstmStepCache {
  Vec concat;                 // h_prev ⊕ x
  std::array<Vec, 4> gate;    // activated i, f, o, c~
  Vec c_prev;
  Vec tanh_c;
};

inline LstmState lstm_step(const LstmParams& p, std::span<const double> x, std::span<const double> h_prev,
                           std::span<const double> c_prev, LstmStepCache* cache = nullptr) {
  const std::size_t k = p.hidden_size;
  if (x.size() != p.input_size || h_prev.size() != k || c_prev.size() != k) {
    throw DataError("lstm: shape mismatch (input " + std::to_string(x.size()) + " vs " +
                    std::to_string(p.input_size) + ", state " + std::to_string(h_prev.size()) + "/" +
                    std::to_string(c_prev.size()) + " vs " + std::to_string(k) + ")");
  }
  Vec hx = concat(h_prev, x);
  std::array<Vec, 4> gate;
  for (std::size_t g = 0; g < 4; ++g) {
    gate[g].resize(k);
    for (std::size_t r = 0; r < k; ++r) {
      const double z = dot(p.weight[g].row(r), hx) + p.bias[g][r];
      gate[g][r] = g == kCandidate ? std::tanh(z) : sigmoid(z);
    }
  }
  LstmState s{Vec(k), Vec(k)};
  Vec tanh_c(k);
  for (std::size_t r = 0; r < k; ++r) {
    s.c[r] = gate[kForgetGate][r] * c_prev[r] + gate[kInputGate][r] * gate[kCandidate][r];
    tanh_c[r] = std::tanh(s.c[r]);
    s.h[r] = gate[kOutputGate][r] * tanh_c[r];
  }
  if (cache) {
    cache->concat = std::move(hx);
    cache->gate = std::move(gate);
    cache->c_prev.assign(c_prev.begin(), c_prev.end());
    cache->tanh_c = std::move(tanh_c);
  }
  return s;
}

struct LstmTape {
  std::vector<LstmStepCache> steps;
};

struct LstmOutput {
  Sequence hidden;   // h_t for every step
  LstmState final;
};

/// Left fold of lstm_step; zero initial state unless given.
inline LstmOutput lstm_forward(const LstmParams& p, const Sequence& seq, LstmTape* tape = nullptr,
                               const std::optional<LstmState>& init = std::nullopt) {
  if (seq.empty()) throw DataError("lstm: empty input sequence");
  LstmState state = init ? *init : LstmState{Vec(p.hidden_size, 0.0), Vec(p.hidden_size, 0.0)};
  LstmOutput out;
  out.hidden.reserve(seq.size());
  if (tape) tape->steps.assign(seq.size(), {});
  for (std::size_t t = 0; t < seq.size(); ++t) {
    state = lstm_step(p, seq[t], state.h, state.c, tape ? &tape->steps[t] : nullptr);
    out.hidden.push_back(state.h);
  }
  out.final = std::move(state);
  return out;
}

/// Backpropagation through time. `d_hidden[t]` is dL/dh_t from outside the
/// recurrence (zero vectors where h_t is unused). Accumulates parameter
/// gradients into `grad` and returns dL/dx_t for every step.
inline Sequence lstm_backward(const LstmParams& p, const LstmTape& tape, const Sequence& d_hidden,
                              LstmParams& grad) {
  const std::size_t k = p.hidden_size;
  const std::size_t steps = tape.steps.size();
  if (d_hidden.size() != steps) throw DataError("lstm_backward: gradient/sequence length mismatch");
  Sequence dx(steps);
  Vec dh_next(k, 0.0);
  Vec dc_next(k, 0.0);
  std::array<Vec, 4> dz;
  for (auto& v : dz) v.resize(k);
  for (std::size_t t = steps; t-- > 0;) {
    const LstmStepCache& s = tape.steps[t];
    const Vec& gi = s.gate[kInputGate];
    const Vec& gf = s.gate[kForgetGate];
    const Vec& go = s.gate[kOutputGate];
    const Vec& gc = s.gate[kCandidate];
    for (std::size_t r = 0; r < k; ++r) {
      const double dh = d_hidden[t][r] + dh_next[r];
      const double dc = dc_next[r] + dh * go[r] * (1.0 - s.tanh_c[r] * s.tanh_c[r]);
      dz[kOutputGate][r] = dh * s.tanh_c[r] * go[r] * (1.0 - go[r]);
      dz[kForgetGate][r] = dc * s.c_prev[r] * gf[r] * (1.0 - gf[r]);
      dz[kInputGate][r] = dc * gc[r] * gi[r] * (1.0 - gi[r]);
      dz[kCandidate][r] = dc * gi[r] * (1.0 - gc[r] * gc[r]);
      dc_next[r] = dc * gf[r];
    }
    Vec d_concat(k + p.input_size, 0.0);
    for (std::size_t g = 0; g < 4; ++g) {
      for (std::size_t r = 0; r < k; ++r) {
        const double d = dz[g][r];
        grad.bias[g][r] += d;
        for (std::size_t c = 0; c < d_concat.size(); ++c) {
          grad.weight[g](r, c) += d * s.concat[c];
          d_concat[c] += d * p.weight[g](r, c);
        }
      }
    }
    dh_next.assign(d_concat.begin(), d_concat.begin() + static_cast<std::ptrdiff_t>(k));
    dx[t].assign(d_concat.begin() + static_cast<std::ptrdiff_t>(k), d_concat.end());
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Bi-LSTM
// ---------------------------------------------------------------------------

struct BiLstmTape {
  LstmTape fwd;
  LstmTape bwd;
};

struct BiLstmOutput {
  Sequence hidden;  // hidden[t] = h_fwd[t] ⊕ h_bwd[t], width 2K
  Vec final;        // last forward state ⊕ last backward state
};

inline Sequence reversed(const Sequence& seq) { return Sequence(seq.rbegin(), seq.rend()); }

/// The backward direction runs over the reversed sequence; its outputs are
/// re-reversed so step t pairs states that have both seen element t.
inline BiLstmOutput bilstm_forward(const LstmParams& fwd, const LstmParams& bwd, const Sequence& seq,
                                   BiLstmTape* tape = nullptr) {
  if (fwd.hidden_size != bwd.hidden_size) {
    throw DataError("bilstm: forward hidden size " + std::to_string(fwd.hidden_size) +
                    " differs from backward hidden size " + std::to_string(bwd.hidden_size));
  }
  const auto f = lstm_forward(fwd, seq, tape ? &tape->fwd : nullptr);
  const auto b = lstm_forward(bwd, reversed(seq), tape ? &tape->bwd : nullptr);
  const std::size_t steps = seq.size();
  BiLstmOutput out;
  out.hidden.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) out.hidden.push_back(concat(f.hidden[t], b.hidden[steps - 1 - t]));
  out.final = concat(f.final.h, b.final.h);
  return out;
}

/// `d_hidden` may be empty when only the final state is consumed.
inline Sequence bilstm_backward(const LstmParams& fwd, const LstmParams& bwd, const BiLstmTape& tape,
                                const Sequence& d_hidden, std::span<const double> d_final,
                                LstmParams& grad_fwd, LstmParams& grad_bwd) {
  const std::size_t k = fwd.hidden_size;
  const std::size_t steps = tape.fwd.steps.size();
  Sequence df(steps, Vec(k, 0.0));
  Sequence db(steps, Vec(k, 0.0));
  if (!d_hidden.empty()) {
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t r = 0; r < k; ++r) {
        df[t][r] = d_hidden[t][r];
        db[steps - 1 - t][r] = d_hidden[t][k + r];
      }
    }
  }
  if (!d_final.empty()) {
    for (std::size_t r = 0; r < k; ++r) {
      df[steps - 1][r] += d_final[r];
      db[steps - 1][r] += d_final[k + r];
    }
  }
  Sequence dx = lstm_backward(fwd, tape.fwd, df, grad_fwd);
  const Sequence dxb = lstm_backward(bwd, tape.bwd, db, grad_bwd);
  for (std::size_t t = 0; t < steps; ++t) add_into(dx[t], dxb[steps - 1 - t]);
  return dx;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

inline double mse_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw DataError("mse: length mismatch");
  if (pred.empty()) throw DataError("mse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = target[i] - pred[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

inline Vec mse_loss_backward(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw DataError("mse: length mismatch");
  Vec d(pred.size());
  const double scale = 2.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) d[i] = scale * (pred[i] - target[i]);
  return d;
}

// ---------------------------------------------------------------------------
// Named parameter views
// ---------------------------------------------------------------------------

template <class T>
struct BasicParamRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<T> values;
};
using ParamRef = BasicParamRef<double>;
using ConstParamRef = BasicParamRef<const double>;
using ParamList = std::vector<ParamRef>;
using ConstParamList = std::vector<ConstParamRef>;

namespace detail {
template <class Owner>
using ValueOf = std::conditional_t<std::is_const_v<Owner>, const double, double>;
}

template <class P>
  requires std::is_same_v<std::remove_const_t<P>, FcParams>
void append_params(std::vector<BasicParamRef<detail::ValueOf<P>>>& out, const std::string& prefix, P& p) {
  out.push_back({prefix + ".W", {p.weight.rows(), p.weight.cols()}, p.weight.values()});
  out.push_back({prefix + ".b", {p.bias.size()}, std::span<detail::ValueOf<P>>(p.bias)});
}

template <class P>
  requires std::is_same_v<std::remove_const_t<P>, LstmParams>
void append_params(std::vector<BasicParamRef<detail::ValueOf<P>>>& out, const std::string& prefix, P& p) {
  for (std::size_t g = 0; g < 4; ++g) {
    out.push_back({prefix + ".W_" + kGateNames[g], {p.weight[g].rows(), p.weight[g].cols()}, p.weight[g].values()});
  }
  for (std::size_t g = 0; g < 4; ++g) {
    out.push_back({prefix + ".b_" + kGateNames[g], {p.bias[g].size()}, std::span<detail::ValueOf<P>>(p.bias[g])});
  }
}

inline std::size_t total_size(const auto& list) {
  std::size_t n = 0;
  for (const auto& p : list) n += p.values.size();
  return n;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

struct AdamMoments {
  std::string name;
  Vec m;
  Vec v;
  bool operator==(const AdamMoments&) const = default;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<AdamMoments> moments;  // aligned with the parameter list
  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam step. Moments are created on the first call and
/// afterwards must line up with `params` by name and size.
inline void adam_update(AdamState& state, const ParamList& params, const ConstParamList& grads) {
  if (params.size() != grads.size()) throw DataError("adam: parameter/gradient list size mismatch");
  if (state.moments.empty()) {
    for (const auto& p : params) state.moments.push_back({p.name, Vec(p.values.size(), 0.0), Vec(p.values.size(), 0.0)});
  }
  if (state.moments.size() != params.size()) throw DataError("adam: optimizer state does not match parameters");
  ++state.step;
  const auto& cfg = state.config;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& mom = state.moments[i];
    const auto& p = params[i];
    const auto& g = grads[i];
    if (mom.name != p.name || mom.m.size() != p.values.size() || g.values.size() != p.values.size()) {
      throw DataError("adam: shape mismatch for parameter " + p.name);
    }
    for (std::size_t j = 0; j < p.values.size(); ++j) {
      const double gj = g.values[j];
      mom.m[j] = cfg.beta1 * mom.m[j] + (1.0 - cfg.beta1) * gj;
      mom.v[j] = cfg.beta2 * mom.v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double m_hat = mom.m[j] / c1;
      const double v_hat = mom.v[j] / c2;
      p.values[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Central differences
// ---------------------------------------------------------------------------

inline Vec finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                            std::span<const double> theta, double eps) {
  if (!(eps > 0.0)) throw UsageError("finite difference step must be positive");
  Vec x(theta.begin(), theta.end());
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = f(x);
    x[i] = orig - eps;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

/// Perturbs each entry of `params` in place (restoring it afterwards) and
/// differentiates the closure `f`, which must read the same storage.
inline std::vector<Vec> finite_diff_grad(const std::function<double()>& f, const ParamList& params, double eps) {
  if (!(eps > 0.0)) throw UsageError("finite difference step must be positive");
  std::vector<Vec> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    Vec g(p.values.size());
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double orig = p.values[i];
      p.values[i] = orig + eps;
      const double up = f();
      p.values[i] = orig - eps;
      const double down = f();
      p.values[i] = orig;
      g[i] = (up - down) / (2.0 * eps);
    }
    out.push_back(std::move(g));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Random orthogonal n x n matrix: Gaussian draw, modified Gram-Schmidt with
/// one re-orthogonalization pass.
inline Matrix random_orthogonal(std::size_t n, Rng& rng) {
  std::vector<Vec> cols(n, Vec(n));
  for (auto& c : cols)
    for (auto& v : c) v = rng.normal();
  for (std::size_t j = 0; j < n; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i < j; ++i) {
        const double proj = dot(cols[i], cols[j]);
        for (std::size_t r = 0; r < n; ++r) cols[j][r] -= proj * cols[i][r];
      }
    }
    const double norm = std::sqrt(dot(cols[j], cols[j]));
    for (auto& v : cols[j]) v /= norm;
  }
  Matrix q(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) q(r, c) = cols[c][r];
  return q;
}

/// Input block Xavier-uniform, recurrent block orthogonal per gate, zero
/// biases except the forget gate at 1.
inline void init_lstm(LstmParams& p, Rng& rng) {
  const std::size_t k = p.hidden_size;
  const double bound = std::sqrt(6.0 / static_cast<double>(p.input_size + k));
  for (std::size_t g = 0; g < 4; ++g) {
    const Matrix q = random_orthogonal(k, rng);
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < k; ++c) p.weight[g](r, c) = q(r, c);
      for (std::size_t c = 0; c < p.input_size; ++c) p.weight[g](r, k + c) = rng.uniform(-bound, bound);
    }
    std::fill(p.bias[g].begin(), p.bias[g].end(), g == kForgetGate ? 1.0 : 0.0);
  }
}

inline void init_fc(FcParams& p, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(p.in() + p.out()));
  for (auto& v : p.weight.values()) v = rng.uniform(-bound, bound);
  std::fill(p.bias.begin(), p.bias.end(), 0.0);
}

inline std::size_t lstm_param_count(std::size_t input, std::size_t hidden) {
  return 4 * (hidden * (input + hidden) + hidden);
}

inline std::size_t fc_param_count(std::size_t in, std::size_t out) { return out * in + out; }

}  // namespace bvqa::nn
