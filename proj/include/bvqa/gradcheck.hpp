// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The bvqa Authors

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bvqa/nncore.hpp"
#include "bvqa/pooling.hpp"
#include "bvqa/util.hpp"

namespace bvqa {

struct GradCheckCase {
  SpatialVariant spatial = SpatialVariant::kBiLstm;
  TemporalVariant temporal = TemporalVariant::kBiLstm;
  std::size_t frames = 2;
  std::size_t patches = 3;
  std::size_t dim = 5;
  std::size_t hidden = 2;
  std::size_t fc_out = 3;
  nn::Activation fc_activation = nn::Activation::kLinear;

  std::string label() const {
    return to_string(spatial) + "/" + to_string(temporal) + " T=" + std::to_string(frames) +
           " N=" + std::to_string(patches) + " d=" + std::to_string(dim) + " K=" + std::to_string(hidden) +
           (fc_activation == nn::Activation::kRelu ? " relu" : "");
  }
};

struct GradCheckResult {
  GradCheckCase test_case;
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
  bool passed = false;
};

/// Relative error with a floor on the denominator so entries whose true
/// gradient is zero compare on an absolute scale.
inline double grad_rel_err(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline ModelConfig gradcheck_config(const GradCheckCase& c) {
  ModelConfig cfg;
  cfg.spatial.variant = c.spatial;
  cfg.spatial.input_dim = c.dim;
  cfg.spatial.hidden = c.hidden;
  cfg.spatial.fc_out = c.fc_out;
  cfg.spatial.patches = c.patches;
  cfg.spatial.fc_activation = c.fc_activation;
  cfg.temporal.variant = c.temporal;
  cfg.temporal.hidden = c.hidden;
  cfg.temporal.fc_out = c.fc_out;
  cfg.temporal.fc_activation = c.fc_activation;
  return cfg;
}

/// Compares reverse-mode gradients of mse(q, target) against central
/// differences for every parameter and every input feature.
/// `flip_sign_of` negates the analytic gradient of one named parameter; it
/// exists so the harness itself can be shown to catch a wrong gradient.
inline GradCheckResult check_gradients(const GradCheckCase& c, double eps = 1e-4, std::uint64_t seed = 7,
                                       double tolerance = 1e-4, const std::string& flip_sign_of = {}) {
  GradCheckResult res;
  res.test_case = c;
  ModelParams model = init_params(gradcheck_config(c), seed);
  // Keeps frame scores well above the harmonic/geometric floor.
  model.head.bias[0] = 2.0;
  VideoInput x{c.frames, c.patches, c.dim, nn::Vec(c.frames * c.patches * c.dim)};
  Rng rng(derive_seed(seed, "gradcheck.input"));
  for (auto& v : x.values) v = rng.uniform(-1.0, 1.0);
  const double target = 3.5;

  ModelTape tape;
  const double q = model_forward(model, x, &tape);
  ModelParams grad = zeros_like(model);
  nn::Vec d_input;
  model_backward(model, tape, x, 2.0 * (q - target), grad, &d_input);

  auto loss = [&] {
    const double p = model_forward(model, x);
    return (p - target) * (p - target);
  };
  auto params = collect_params(model);
  const auto grads = collect_params(std::as_const(grad));
  const auto numeric = nn::finite_diff_grad(loss, params, eps);

  auto consider = [&](const std::string& name, double a, double n) {
    const double e = grad_rel_err(a, n);
    ++res.checked;
    if (e > res.max_rel_err || res.worst_param.empty()) {
      if (e >= res.max_rel_err) {
        res.max_rel_err = e;
        res.worst_param = name;
      }
    }
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double sign = params[i].name == flip_sign_of ? -1.0 : 1.0;
    for (std::size_t j = 0; j < params[i].values.size(); ++j) {
      consider(params[i].name, sign * grads[i].values[j], numeric[i][j]);
    }
  }
  nn::ParamList input_ref{{"input", {x.values.size()}, std::span<double>(x.values)}};
  const auto numeric_input = nn::finite_diff_grad(loss, input_ref, eps);
  for (std::size_t j = 0; j < x.values.size(); ++j) consider("input", d_input[j], numeric_input[0][j]);
  res.passed = res.max_rel_err < tolerance;
  return res;
}

/// Every spatial x temporal variant pair over T, N in 1..5, d in {4, 8},
/// K in {2, 4}.
inline std::vector<GradCheckCase> default_gradcheck_matrix() {
  std::vector<GradCheckCase> cases;
  for (auto s : kAllSpatialVariants) {
    for (auto t : kAllTemporalVariants) {
      for (std::size_t frames = 1; frames <= 5; ++frames) {
        for (std::size_t patches = 1; patches <= 5; ++patches) {
          for (std::size_t dim : {4u, 8u}) {
            for (std::size_t hidden : {2u, 4u}) {
              GradCheckCase c;
              c.spatial = s;
              c.temporal = t;
              c.frames = frames;
              c.patches = patches;
              c.dim = dim;
              c.hidden = hidden;
              cases.push_back(c);
            }
          }
        }
      }
    }
  }
  return cases;
}

struct GradCheckSummary {
  std::vector<GradCheckResult> results;
  double max_rel_err = 0.0;
  std::string worst;
  bool passed = true;
};

inline GradCheckSummary run_gradcheck(const std::vector<GradCheckCase>& cases, double eps = 1e-4,
                                      std::uint64_t seed = 7, double tolerance = 1e-4,
                                      const std::string& flip_sign_of = {}) {
  GradCheckSummary s;
  s.results.resize(cases.size());
  parallel_for(cases.size(), [&](std::size_t i) {
    s.results[i] = check_gradients(cases[i], eps, derive_seed(seed, "gradcheck.case", i), tolerance, flip_sign_of);
  });
  for (const auto& r : s.results) {
    if (r.max_rel_err >= s.max_rel_err) {
      s.max_rel_err = r.max_rel_err;
      s.worst = r.test_case.label() + " @ " + r.worst_param;
    }
    s.passed = s.passed && r.passed;
  }
  return s;
}

}  // namespace bvqa
