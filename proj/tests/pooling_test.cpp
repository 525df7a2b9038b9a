// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The bvqa Authors

#include "test_support.hpp"

namespace bvqa {
namespace {

using testing::contains;
using testing::expect_throw_message;
using testing::random_vec;

ModelConfig small_config(SpatialVariant s, TemporalVariant t, std::size_t d = 4, std::size_t n = 3) {
  ModelConfig c;
  c.spatial.variant = s;
  c.spatial.input_dim = d;
  c.spatial.hidden = 3;
  c.spatial.fc_out = 5;
  c.spatial.layers = 2;
  c.spatial.patches = n;
  c.temporal.variant = t;
  c.temporal.hidden = 3;
  c.temporal.fc_out = 4;
  c.temporal.layers = 2;
  return c;
}

VideoInput random_input(std::size_t t, std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  return {t, n, d, random_vec(t * n * d, rng)};
}

TEST(SpatialMean, SinglePatchAndConstantPatches) {
  auto cfg = small_config(SpatialVariant::kMean, TemporalVariant::kMean).spatial;
  auto p = init_params(small_config(SpatialVariant::kMean, TemporalVariant::kMean), 3).spatial;
  const nn::Vec v{0.1, -0.4, 0.9, 0.2};
  EXPECT_EQ(spatial_pool_forward(p, v, 1, 4), nn::fc_forward(p.fc, v));
  nn::Vec rep;
  for (int j = 0; j < 3; ++j) rep.insert(rep.end(), v.begin(), v.end());
  const auto y = spatial_pool_forward(p, rep, 3, 4);
  const auto want = nn::fc_forward(p.fc, v);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], want[i], 1e-12);
  (void)cfg;
}

TEST(SpatialBiLstm, CompositionOracle) {
  const auto m = init_params(small_config(SpatialVariant::kBiLstm, TemporalVariant::kMean), 4);
  Rng rng(5);
  const auto frame = random_vec(12, rng);
  const auto seq = to_sequence(frame, 3, 4);
  const auto& l1 = m.spatial.stack.layers[0];
  const auto& l2 = m.spatial.stack.layers[1];
  const auto h1 = nn::bilstm_forward(l1.fwd, l1.bwd, seq);
  const auto h2 = nn::bilstm_forward(l2.fwd, l2.bwd, h1.hidden);
  EXPECT_EQ(spatial_pool_forward(m.spatial, frame, 3, 4), nn::fc_forward(m.spatial.fc, h2.final));
}

TEST(SpatialLstm, FinalHiddenOfTopLayer) {
  const auto m = init_params(small_config(SpatialVariant::kLstm, TemporalVariant::kMean), 4);
  Rng rng(6);
  const auto frame = random_vec(12, rng);
  const auto h1 = nn::lstm_forward(m.spatial.stack.layers[0].fwd, to_sequence(frame, 3, 4));
  const auto h2 = nn::lstm_forward(m.spatial.stack.layers[1].fwd, h1.hidden);
  EXPECT_EQ(spatial_pool_forward(m.spatial, frame, 3, 4), nn::fc_forward(m.spatial.fc, h2.final.h));
}

TEST(SpatialConcatenate, FlattensPatchesInOrder) {
  const auto m = init_params(small_config(SpatialVariant::kConcatenate, TemporalVariant::kMean), 4);
  Rng rng(7);
  const auto frame = random_vec(12, rng);
  EXPECT_EQ(spatial_pool_forward(m.spatial, frame, 3, 4), nn::fc_forward(m.spatial.fc, frame));
  const auto msg = expect_throw_message<DataError>([&] { spatial_pool_forward(m.spatial, random_vec(8, rng), 2, 4); });
  EXPECT_TRUE(contains(msg, "spatial stage")) << msg;
  EXPECT_TRUE(contains(msg, "exactly 3")) << msg;
}

TEST(Spatial, DimensionMismatchNamesStage) {
  const auto m = init_params(small_config(SpatialVariant::kBiLstm, TemporalVariant::kBiLstm), 4);
  const auto msg = expect_throw_message<DataError>([&] { model_forward(m, random_input(2, 3, 5, 1)); });
  EXPECT_TRUE(contains(msg, "spatial stage")) << msg;
  EXPECT_TRUE(contains(msg, "5")) << msg;
}

TEST(PoolScores, Examples) {
  const nn::Vec s{1.0, 4.0};
  EXPECT_DOUBLE_EQ(pool_scores(TemporalVariant::kMean, s), 2.5);
  EXPECT_DOUBLE_EQ(pool_scores(TemporalVariant::kHarmonic, s), 1.6);
  EXPECT_DOUBLE_EQ(pool_scores(TemporalVariant::kGeometric, s), 2.0);
  const nn::Vec c{3.25, 3.25, 3.25};
  for (auto v : {TemporalVariant::kMean, TemporalVariant::kHarmonic, TemporalVariant::kGeometric}) {
    EXPECT_NEAR(pool_scores(v, c), 3.25, 1e-12);
  }
  EXPECT_THROW(pool_scores(TemporalVariant::kMean, nn::Vec{}), DataError);
  EXPECT_THROW(pool_scores(TemporalVariant::kLstm, s), UsageError);
}

TEST(PoolScores, FloorKeepsNonPositiveScoresFinite) {
  const nn::Vec s{-1.0, 0.0, 2.0};
  EXPECT_TRUE(std::isfinite(pool_scores(TemporalVariant::kHarmonic, s)));
  EXPECT_TRUE(std::isfinite(pool_scores(TemporalVariant::kGeometric, s)));
}

TEST(PoolScores, MeanInequalityProperty) {
  Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto s = random_vec(1 + rng.below(10), rng, 0.01, 10.0);
    const double am = pool_scores(TemporalVariant::kMean, s);
    const double gm = pool_scores(TemporalVariant::kGeometric, s);
    const double hm = pool_scores(TemporalVariant::kHarmonic, s);
    ASSERT_LE(gm, am * (1 + 1e-12));
    ASSERT_LE(hm, gm * (1 + 1e-12));
    const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
    ASSERT_GE(hm, *lo * (1 - 1e-12));
    ASSERT_LE(am, *hi * (1 + 1e-12));
  }
}

TEST(Regress, Examples) {
  auto head = nn::FcParams::zeros(3, 1);
  head.weight(0, 0) = 1.0;
  head.weight(0, 1) = 2.0;
  head.weight(0, 2) = -1.0;
  head.bias[0] = 0.5;
  EXPECT_DOUBLE_EQ(regress(head, nn::Vec{1, 1, 1}), 2.5);
  EXPECT_DOUBLE_EQ(regress(head, nn::Vec{0, 0, 0}), 0.5);
  const auto msg = expect_throw_message<DataError>([&] { regress(head, nn::Vec{1, 2}); });
  EXPECT_TRUE(contains(msg, "regression stage")) << msg;
}

TEST(Temporal, ScalarVariantsPoolPerFrameScores) {
  for (auto t : {TemporalVariant::kMean, TemporalVariant::kHarmonic, TemporalVariant::kGeometric}) {
    auto m = init_params(small_config(SpatialVariant::kMean, t), 9);
    m.head.bias[0] = 3.0;
    const auto x = random_input(4, 3, 4, 10);
    nn::Vec scores;
    for (std::size_t f = 0; f < 4; ++f)
      scores.push_back(regress(m.head, spatial_pool_forward(m.spatial, x.frame(f), 3, 4)));
    EXPECT_EQ(model_forward(m, x), pool_scores(t, scores)) << to_string(t);
  }
}

TEST(Temporal, PermutationSensitivity) {
  Rng rng(11);
  const nn::Sequence frames = testing::random_seq(5, 5, rng);
  nn::Sequence shuffled = frames;
  std::rotate(shuffled.begin(), shuffled.begin() + 2, shuffled.end());
  auto mean_m = init_params(small_config(SpatialVariant::kMean, TemporalVariant::kMean), 12);
  EXPECT_NEAR(temporal_pool_forward(mean_m.temporal, mean_m.head, frames),
              temporal_pool_forward(mean_m.temporal, mean_m.head, shuffled), 1e-12);
  for (auto t : {TemporalVariant::kLstm, TemporalVariant::kBiLstm}) {
    auto m = init_params(small_config(SpatialVariant::kMean, t), 12);
    const double a = temporal_pool_forward(m.temporal, m.head, frames);
    const double b = temporal_pool_forward(m.temporal, m.head, shuffled);
    EXPECT_GT(std::abs(a - b), 1e-9) << to_string(t);
    const double r = temporal_pool_forward(m.temporal, m.head, nn::reversed(frames));
    EXPECT_GT(std::abs(a - r), 1e-9) << to_string(t);
  }
}

TEST(Temporal, EmptyVideoRejected) {
  const auto m = init_params(small_config(SpatialVariant::kMean, TemporalVariant::kBiLstm), 1);
  const auto msg = expect_throw_message<DataError>([&] { model_forward(m, VideoInput{0, 3, 4, {}}); });
  EXPECT_TRUE(contains(msg, "temporal stage")) << msg;
}

TEST(Model, AllVariantPairsProduceFiniteScores) {
  for (auto s : kAllSpatialVariants) {
    for (auto t : kAllTemporalVariants) {
      auto m = init_params(small_config(s, t), 13);
      m.head.bias[0] = 3.0;
      for (std::size_t frames : {1u, 4u}) {
        const double q = model_forward(m, random_input(frames, 3, 4, 14));
        EXPECT_TRUE(std::isfinite(q)) << to_string(s) << "/" << to_string(t);
      }
    }
  }
}

TEST(Model, InitIsDeterministicAndSpatialIndependentOfTemporal) {
  const auto a = init_params(small_config(SpatialVariant::kBiLstm, TemporalVariant::kLstm), 21);
  const auto b = init_params(small_config(SpatialVariant::kBiLstm, TemporalVariant::kLstm), 21);
  const auto c = init_params(small_config(SpatialVariant::kBiLstm, TemporalVariant::kMean), 21);
  const auto d = init_params(small_config(SpatialVariant::kBiLstm, TemporalVariant::kLstm), 22);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.spatial, c.spatial);
  EXPECT_NE(a.spatial, d.spatial);
}

TEST(Count, SpatialClosedForm) {
  SpatialPoolConfig c;
  c.input_dim = 2048;
  EXPECT_EQ(count_spatial_params(c, true), 1213953u);
  EXPECT_EQ(count_spatial_params(c, false), 1213696u);
  c.variant = SpatialVariant::kMean;
  EXPECT_EQ(count_spatial_params(c), 2048u * 256 + 256);
  c.variant = SpatialVariant::kLstm;
  EXPECT_EQ(count_spatial_params(c), nn::lstm_param_count(2048, 64) + nn::lstm_param_count(64, 64) + 64 * 256 + 256);
  c.variant = SpatialVariant::kConcatenate;
  c.patches = 10;
  EXPECT_EQ(count_spatial_params(c), 20480u * 256 + 256);
}

TEST(Count, MatchesEntriesTouchedByAdam) {
  for (auto s : kAllSpatialVariants) {
    for (auto t : kAllTemporalVariants) {
      for (bool head : {false, true}) {
        const auto cfg = small_config(s, t);
        auto m = init_params(cfg, 5, head);
        const auto before = m;
        auto grad = zeros_like(m);
        for (auto& p : collect_params(grad)) std::fill(p.values.begin(), p.values.end(), 1.0);
        nn::AdamState st;
        st.config.lr = 0.5;
        adam_update(st, collect_params(m), collect_params(std::as_const(grad)));
        auto now = collect_params(m);
        auto old = collect_params(before);
        std::size_t changed = 0;
        for (std::size_t i = 0; i < now.size(); ++i)
          for (std::size_t j = 0; j < now[i].values.size(); ++j) changed += now[i].values[j] != old[i].values[j];
        EXPECT_EQ(changed, count_params(cfg, head)) << to_string(s) << "/" << to_string(t);
      }
    }
  }
}

TEST(Names, RoundTripAndDisplay) {
  for (auto v : kAllSpatialVariants) {
    EXPECT_EQ(parse_spatial_variant(to_string(v)), v);
    EXPECT_EQ(parse_spatial_variant(display_name(v)), v);
  }
  for (auto v : kAllTemporalVariants) {
    EXPECT_EQ(parse_temporal_variant(to_string(v)), v);
    EXPECT_EQ(parse_temporal_variant(display_name(v)), v);
  }
  EXPECT_EQ(display_name(SpatialVariant::kBiLstm), "Bi-LSTM");
  EXPECT_EQ(display_name(TemporalVariant::kHarmonic), "Harmonic");
  EXPECT_THROW(parse_spatial_variant("max"), UsageError);
  EXPECT_THROW(parse_temporal_variant("median"), UsageError);
  EXPECT_THROW(parse_activation("tanh"), UsageError);
}

TEST(Params, GroupsAndNames) {
  auto m = init_params(small_config(SpatialVariant::kBiLstm, TemporalVariant::kLstm), 1, true);
  std::set<std::string> groups;
  for (const auto& p : collect_params(m)) groups.insert(param_group(p.name));
  EXPECT_EQ(groups, (std::set<std::string>{"spatial", "temporal", "head", "pretrain_head"}));
  EXPECT_EQ(collect_params(m).front().name, "spatial.bilstm1.fwd.W_i");
}

TEST(Config, ValidationErrors) {
  auto c = small_config(SpatialVariant::kConcatenate, TemporalVariant::kMean);
  c.spatial.patches = 0;
  EXPECT_THROW(make_model(c), UsageError);
  c = small_config(SpatialVariant::kLstm, TemporalVariant::kMean);
  c.spatial.hidden = 0;
  EXPECT_THROW(make_model(c), UsageError);
}

TEST(Image, PretrainPathUsesSpatialAndPretrainHead) {
  auto m = init_params(small_config(SpatialVariant::kBiLstm, TemporalVariant::kMean), 2, true);
  Rng rng(3);
  const auto frame = random_vec(12, rng);
  EXPECT_EQ(image_forward(m, frame, 3, 4), regress(*m.pretrain_head, spatial_pool_forward(m.spatial, frame, 3, 4)));
  m.pretrain_head.reset();
  EXPECT_THROW(image_forward(m, frame, 3, 4), UsageError);
}

}  // namespace
}  // namespace bvqa
