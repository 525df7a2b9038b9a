// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The bvqa Authors

#include "test_support.hpp"

namespace bvqa {
namespace {

using namespace bvqa::nn;
using testing::random_seq;
using testing::random_vec;

LstmParams random_lstm(std::size_t input, std::size_t hidden, std::uint64_t seed) {
  auto p = LstmParams::zeros(input, hidden);
  Rng rng(seed);
  for (std::size_t g = 0; g < 4; ++g) {
    for (auto& w : p.weight[g].values()) w = rng.uniform(-0.8, 0.8);
    for (auto& b : p.bias[g]) b = rng.uniform(-0.5, 0.5);
  }
  return p;
}

// Scalar re-implementation of the cell, one gate at a time.
LstmState oracle_step(const LstmParams& p, const Vec& x, const Vec& h, const Vec& c) {
  const std::size_t k = p.hidden_size;
  LstmState out{Vec(k), Vec(k)};
  for (std::size_t r = 0; r < k; ++r) {
    double z[4];
    for (std::size_t g = 0; g < 4; ++g) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += p.weight[g](r, j) * h[j];
      for (std::size_t j = 0; j < p.input_size; ++j) acc += p.weight[g](r, k + j) * x[j];
      z[g] = acc + p.bias[g][r];
    }
    const double i = 1.0 / (1.0 + std::exp(-z[0]));
    const double f = 1.0 / (1.0 + std::exp(-z[1]));
    const double o = 1.0 / (1.0 + std::exp(-z[2]));
    const double cand = std::tanh(z[3]);
    out.c[r] = f * c[r] + i * cand;
    out.h[r] = o * std::tanh(out.c[r]);
  }
  return out;
}

TEST(LstmStep, ZeroParameters) {
  const auto p = LstmParams::zeros(3, 2);
  const auto s = lstm_step(p, Vec{1, 2, 3}, Vec(2, 0.0), Vec(2, 0.0));
  EXPECT_EQ(s.h, Vec(2, 0.0));
  EXPECT_EQ(s.c, Vec(2, 0.0));
  LstmStepCache cache;
  lstm_step(p, Vec{1, 2, 3}, Vec(2, 0.0), Vec(2, 0.0), &cache);
  EXPECT_EQ(cache.gate[kInputGate][0], 0.5);
  EXPECT_EQ(cache.gate[kCandidate][1], 0.0);
}

TEST(LstmStep, ScalarHandEvaluation) {
  auto p = LstmParams::zeros(1, 1);
  for (std::size_t g = 0; g < 4; ++g) std::fill(p.weight[g].values().begin(), p.weight[g].values().end(), 1.0);
  LstmStepCache cache;
  const auto s = lstm_step(p, Vec{1.0}, Vec{0.0}, Vec{0.0}, &cache);
  EXPECT_NEAR(cache.gate[kInputGate][0], 0.731059, 1e-3);
  EXPECT_NEAR(cache.gate[kForgetGate][0], 0.731059, 1e-3);
  EXPECT_NEAR(cache.gate[kOutputGate][0], 0.731059, 1e-3);
  EXPECT_NEAR(cache.gate[kCandidate][0], 0.761594, 1e-3);
  EXPECT_NEAR(s.c[0], 0.556766, 1e-3);
  EXPECT_NEAR(s.h[0], 0.3696, 1e-3);
}

TEST(LstmStep, MatchesIndependentOracleExactly) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t in = 1 + rng.below(6), k = 1 + rng.below(6);
    const auto p = random_lstm(in, k, rng.below(1u << 30));
    const Vec x = random_vec(in, rng), h = random_vec(k, rng), c = random_vec(k, rng, -2, 2);
    const auto got = lstm_step(p, x, h, c);
    const auto want = oracle_step(p, x, h, c);
    ASSERT_EQ(got.h, want.h);
    ASSERT_EQ(got.c, want.c);
  }
}

TEST(LstmStep, BoundedActivations) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = random_lstm(4, 3, trial);
    for (auto& w : p.weight[kCandidate].values()) w *= 5.0;
    LstmStepCache cache;
    const auto s = lstm_step(p, random_vec(4, rng, -3, 3), random_vec(3, rng), random_vec(3, rng, -4, 4), &cache);
    for (double v : s.h) {
      ASSERT_GT(v, -1.0);
      ASSERT_LT(v, 1.0);
    }
    for (std::size_t g = 0; g < 3; ++g)
      for (double v : cache.gate[g]) {
        ASSERT_GT(v, 0.0);
        ASSERT_LT(v, 1.0);
      }
  }
}

TEST(LstmStep, ShapeMismatch) {
  const auto p = LstmParams::zeros(3, 2);
  EXPECT_THROW(lstm_step(p, Vec(2), Vec(2), Vec(2)), DataError);
  EXPECT_THROW(lstm_step(p, Vec(3), Vec(3), Vec(2)), DataError);
}

TEST(LstmForward, FoldOfSteps) {
  Rng rng(3);
  const auto p = random_lstm(3, 4, 7);
  const auto seq = random_seq(3, 3, rng);
  const auto out = lstm_forward(p, seq);
  LstmState s{Vec(4, 0.0), Vec(4, 0.0)};
  for (std::size_t t = 0; t < 3; ++t) {
    s = lstm_step(p, seq[t], s.h, s.c);
    EXPECT_EQ(out.hidden[t], s.h);
  }
  EXPECT_EQ(out.final.h, s.h);
  EXPECT_EQ(out.final.c, s.c);
  const auto one = lstm_forward(p, {seq[0]});
  EXPECT_EQ(one.final.h, lstm_step(p, seq[0], Vec(4, 0.0), Vec(4, 0.0)).h);
}

TEST(LstmForward, ZeroParametersGiveZeroStates) {
  Rng rng(4);
  const auto out = lstm_forward(LstmParams::zeros(2, 3), random_seq(5, 2, rng));
  for (const auto& h : out.hidden) EXPECT_EQ(h, Vec(3, 0.0));
}

TEST(LstmForward, InitialStateAndEmpty) {
  const auto p = random_lstm(2, 2, 5);
  const LstmState init{Vec{0.3, -0.2}, Vec{0.1, 0.4}};
  const Sequence seq{Vec{1, 2}};
  EXPECT_EQ(lstm_forward(p, seq, nullptr, init).final.h, lstm_step(p, seq[0], init.h, init.c).h);
  EXPECT_THROW(lstm_forward(p, Sequence{}), DataError);
}

TEST(BiLstm, LengthOneIsBothDirections) {
  Rng rng(5);
  const auto f = random_lstm(3, 2, 1), b = random_lstm(3, 2, 2);
  const Sequence seq{random_vec(3, rng)};
  const auto out = bilstm_forward(f, b, seq);
  const auto hf = lstm_step(f, seq[0], Vec(2, 0.0), Vec(2, 0.0)).h;
  const auto hb = lstm_step(b, seq[0], Vec(2, 0.0), Vec(2, 0.0)).h;
  EXPECT_EQ(out.hidden[0], concat(hf, hb));
  EXPECT_EQ(out.final, concat(hf, hb));
}

TEST(BiLstm, PalindromeMirrorsHalvesWithTiedWeights) {
  Rng rng(6);
  const auto p = random_lstm(3, 3, 9);
  auto half = random_seq(3, 3, rng);
  Sequence pal = half;
  pal.push_back(random_vec(3, rng));
  pal.insert(pal.end(), half.rbegin(), half.rend());
  const auto out = bilstm_forward(p, p, pal);
  const std::size_t n = pal.size();
  for (std::size_t t = 0; t < n; ++t) {
    const Vec fwd_t(out.hidden[t].begin(), out.hidden[t].begin() + 3);
    const Vec bwd_mirror(out.hidden[n - 1 - t].begin() + 3, out.hidden[n - 1 - t].end());
    EXPECT_EQ(fwd_t, bwd_mirror);
  }
}

Vec swap_halves(const Vec& v) {
  const std::size_t k = v.size() / 2;
  Vec out(v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  out.insert(out.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k));
  return out;
}

TEST(BiLstm, ReversalPropertyWithTiedWeights) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t len = 1 + rng.below(6), in = 1 + rng.below(4), k = 1 + rng.below(4);
    const auto p = random_lstm(in, k, trial + 100);
    const auto s = random_seq(len, in, rng);
    const auto a = bilstm_forward(p, p, s);
    const auto b = bilstm_forward(p, p, reversed(s));
    for (std::size_t t = 0; t < len; ++t) ASSERT_EQ(b.hidden[t], swap_halves(a.hidden[len - 1 - t]));
    ASSERT_EQ(b.final, swap_halves(a.final));
  }
}

TEST(BiLstm, HiddenSizeMismatch) {
  EXPECT_THROW(bilstm_forward(LstmParams::zeros(2, 2), LstmParams::zeros(2, 3), Sequence{Vec(2)}), DataError);
}

TEST(Fc, IdentityAndConstant) {
  auto p = FcParams::zeros(3, 3);
  for (std::size_t i = 0; i < 3; ++i) p.weight(i, i) = 1.0;
  EXPECT_EQ(fc_forward(p, Vec{1, -2, 3}), (Vec{1, -2, 3}));
  auto q = FcParams::zeros(2, 2, Activation::kRelu);
  q.bias = {1.5, -0.5};
  EXPECT_EQ(fc_forward(q, Vec{7, 8}), (Vec{1.5, 0.0}));
  EXPECT_THROW(fc_forward(p, Vec{1, 2}), DataError);
}

TEST(Fc, MatchesDotProductOracle) {
  Rng rng(8);
  auto p = FcParams::zeros(5, 4);
  for (auto& w : p.weight.values()) w = rng.uniform(-1, 1);
  for (auto& b : p.bias) b = rng.uniform(-1, 1);
  const Vec x = random_vec(5, rng);
  const Vec y = fc_forward(p, x);
  for (std::size_t r = 0; r < 4; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < 5; ++c) acc += p.weight(r, c) * x[c];
    EXPECT_EQ(y[r], acc + p.bias[r]);
  }
}

TEST(Mse, Examples) {
  EXPECT_EQ(mse_loss(Vec{1, 2}, Vec{1, 2}), 0.0);
  EXPECT_EQ(mse_loss(Vec{0, 0}, Vec{1, 3}), 5.0);
  EXPECT_EQ(mse_loss(Vec{3}, Vec{1}), 4.0);
  EXPECT_THROW(mse_loss(Vec{1}, Vec{1, 2}), DataError);
}

TEST(Backward, FcBiasGradientClosedForm) {
  Rng rng(9);
  auto p = FcParams::zeros(3, 2);
  for (auto& w : p.weight.values()) w = rng.uniform(-1, 1);
  const Vec x = random_vec(3, rng), t{0.5, -0.25};
  FcCache cache;
  const Vec y = fc_forward(p, x, &cache);
  auto grad = FcParams::zeros(3, 2);
  fc_backward(p, cache, mse_loss_backward(y, t), grad);
  for (std::size_t r = 0; r < 2; ++r) EXPECT_DOUBLE_EQ(grad.bias[r], 2.0 * (y[r] - t[r]) / 2.0);
}

TEST(Backward, LstmMatchesFiniteDifferences) {
  Rng rng(10);
  auto p = random_lstm(3, 2, 11);
  const auto seq = random_seq(4, 3, rng);
  const Vec target = random_vec(2, rng);
  auto loss = [&] { return mse_loss(lstm_forward(p, seq).final.h, target); };
  LstmTape tape;
  const auto out = lstm_forward(p, seq, &tape);
  Sequence dh(seq.size(), Vec(2, 0.0));
  dh.back() = mse_loss_backward(out.final.h, target);
  auto grad = LstmParams::zeros(3, 2);
  const auto dx = lstm_backward(p, tape, dh, grad);
  ParamList params;
  append_params(params, "l", p);
  ConstParamList grads;
  append_params(grads, "l", std::as_const(grad));
  const auto num = finite_diff_grad(loss, params, 1e-6);
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < num[i].size(); ++j) EXPECT_NEAR(grads[i].values[j], num[i][j], 1e-7) << params[i].name;
  // Input gradient.
  for (std::size_t t = 0; t < seq.size(); ++t) {
    for (std::size_t j = 0; j < 3; ++j) {
      auto plus = seq, minus = seq;
      plus[t][j] += 1e-6;
      minus[t][j] -= 1e-6;
      const double n = (mse_loss(lstm_forward(p, plus).final.h, target) -
                        mse_loss(lstm_forward(p, minus).final.h, target)) / 2e-6;
      EXPECT_NEAR(dx[t][j], n, 1e-7);
    }
  }
}

TEST(Backward, BiLstmPerStepAndFinalMatchFiniteDifferences) {
  Rng rng(12);
  auto f = random_lstm(2, 2, 13), b = random_lstm(2, 2, 14);
  const auto seq = random_seq(3, 2, rng);
  const Vec wf = random_vec(4, rng);
  const Sequence wh = random_seq(3, 4, rng);
  auto loss = [&] {
    const auto o = bilstm_forward(f, b, seq);
    double acc = dot(o.final, wf);
    for (std::size_t t = 0; t < 3; ++t) acc += dot(o.hidden[t], wh[t]);
    return acc;
  };
  BiLstmTape tape;
  bilstm_forward(f, b, seq, &tape);
  auto gf = LstmParams::zeros(2, 2), gb = LstmParams::zeros(2, 2);
  bilstm_backward(f, b, tape, wh, wf, gf, gb);
  ParamList params;
  append_params(params, "f", f);
  append_params(params, "b", b);
  ConstParamList grads;
  append_params(grads, "f", std::as_const(gf));
  append_params(grads, "b", std::as_const(gb));
  const auto num = finite_diff_grad(loss, params, 1e-6);
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < num[i].size(); ++j) EXPECT_NEAR(grads[i].values[j], num[i][j], 1e-7) << params[i].name;
}

TEST(Backward, DisconnectedParameterHasZeroGradient) {
  ModelConfig mc;
  mc.spatial = {SpatialVariant::kMean, 3, 2, 2, 2, 0, Activation::kLinear};
  mc.temporal.variant = TemporalVariant::kMean;
  auto m = init_params(mc, 1, true);
  VideoInput x{2, 2, 3, Vec(12, 0.3)};
  ModelTape tape;
  const double q = model_forward(m, x, &tape);
  auto grad = zeros_like(m);
  model_backward(m, tape, x, 2.0 * (q - 1.0), grad);
  for (double g : grad.pretrain_head->weight.values()) EXPECT_EQ(g, 0.0);
}

TEST(FiniteDiff, Examples) {
  const Vec theta{3.0};
  const auto g = finite_diff_grad([](std::span<const double> t) { return t[0] * t[0]; }, theta, 1e-4);
  EXPECT_NEAR(g[0], 6.0, 1e-8);
  EXPECT_EQ(finite_diff_grad([](std::span<const double>) { return 2.0; }, theta, 1e-4)[0], 0.0);
  const Vec t{1, 3};
  const auto gm = finite_diff_grad([&](std::span<const double> p) { return mse_loss(p, t); }, Vec{0.2, 0.7}, 1e-5);
  const auto closed = mse_loss_backward(Vec{0.2, 0.7}, t);
  EXPECT_NEAR(gm[0], closed[0], 1e-8);
  EXPECT_NEAR(gm[1], closed[1], 1e-8);
  EXPECT_THROW(finite_diff_grad([](std::span<const double>) { return 0.0; }, theta, 0.0), UsageError);
}

struct Scalar {
  Vec theta{1.0};
  Vec grad{0.0};
  ParamList params() { return {{"theta", {1}, std::span<double>(theta)}}; }
  ConstParamList grads() const { return {{"theta", {1}, std::span<const double>(grad)}}; }
};

TEST(Adam, ZeroGradientKeepsParams) {
  Scalar s;
  AdamState st;
  adam_update(st, s.params(), s.grads());
  EXPECT_EQ(s.theta[0], 1.0);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Scalar s;
  s.grad[0] = 1.0;
  AdamState st;
  st.config.lr = 0.1;
  adam_update(st, s.params(), s.grads());
  EXPECT_NEAR(1.0 - s.theta[0], 0.1, 1e-6);
  ASSERT_EQ(st.moments.size(), 1u);
  EXPECT_DOUBLE_EQ(st.moments[0].m[0], 0.1);
  EXPECT_DOUBLE_EQ(st.moments[0].v[0], 0.001);
}

TEST(Adam, ConvergesOnQuadratic) {
  Scalar s;
  AdamState st;
  st.config.lr = 1e-2;
  for (int i = 0; i < 200; ++i) {
    s.grad[0] = 2.0 * s.theta[0];
    adam_update(st, s.params(), s.grads());
  }
  EXPECT_LT(std::abs(s.theta[0]), 0.1);
}

TEST(Adam, ShapeMismatch) {
  Scalar s;
  AdamState st;
  adam_update(st, s.params(), s.grads());
  Vec two(2);
  ParamList other{{"theta", {2}, std::span<double>(two)}};
  ConstParamList g2{{"theta", {2}, std::span<const double>(two)}};
  EXPECT_THROW(adam_update(st, other, g2), DataError);
  EXPECT_THROW(adam_update(st, s.params(), {}), DataError);
}

TEST(Init, DeterministicForgetBiasOrthogonal) {
  auto a = LstmParams::zeros(5, 4), b = LstmParams::zeros(5, 4);
  Rng r1(3), r2(3);
  init_lstm(a, r1);
  init_lstm(b, r2);
  EXPECT_EQ(a, b);
  for (double v : a.bias[kForgetGate]) EXPECT_EQ(v, 1.0);
  for (std::size_t g : {0u, 2u, 3u})
    for (double v : a.bias[g]) EXPECT_EQ(v, 0.0);
  const double bound = std::sqrt(6.0 / 9.0);
  for (std::size_t g = 0; g < 4; ++g) {
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 5; ++c) EXPECT_LE(std::abs(a.weight[g](r, 4 + c)), bound);
      for (std::size_t c = 0; c < 4; ++c) {
        double acc = 0.0;  // (R^T R)_{rc}
        for (std::size_t i = 0; i < 4; ++i) acc += a.weight[g](i, r) * a.weight[g](i, c);
        EXPECT_NEAR(acc, r == c ? 1.0 : 0.0, 1e-6);
      }
    }
  }
}

TEST(Init, RandomOrthogonalLarge) {
  Rng rng(4);
  const auto q = random_orthogonal(64, rng);
  for (std::size_t r = 0; r < 64; ++r)
    for (std::size_t c = 0; c < 64; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < 64; ++i) acc += q(i, r) * q(i, c);
      ASSERT_NEAR(acc, r == c ? 1.0 : 0.0, 1e-6);
    }
}

TEST(Count, ClosedForms) {
  EXPECT_EQ(lstm_param_count(2048, 64), 540928u);
  EXPECT_EQ(2 * lstm_param_count(2048, 64), 1081856u);
  EXPECT_EQ(2 * lstm_param_count(128, 64), 98816u);
  EXPECT_EQ(fc_param_count(128, 256), 33024u);
  EXPECT_EQ(fc_param_count(256, 1), 257u);
}

TEST(Determinism, ForwardAndBackwardBitReproducible) {
  Rng rng(20);
  auto p = random_lstm(3, 3, 21);
  const auto seq = random_seq(5, 3, rng);
  Sequence dh = random_seq(5, 3, rng);
  auto run = [&] {
    LstmTape tape;
    const auto out = lstm_forward(p, seq, &tape);
    auto g = LstmParams::zeros(3, 3);
    const auto dx = lstm_backward(p, tape, dh, g);
    return std::make_tuple(out.hidden, g, dx);
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace bvqa
