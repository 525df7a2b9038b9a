// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The bvqa Authors

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bvqa/error.hpp"
#include "bvqa/util.hpp"

namespace bvqa {

/// A statistic that may be undefined (constant input, too few samples).
struct Metric {
  double value = std::numeric_limits<double>::quiet_NaN();
  std::string reason;  // empty when defined

  static Metric of(double v) { return {v, {}}; }
  static Metric undefined(std::string why) { return {std::numeric_limits<double>::quiet_NaN(), std::move(why)}; }
  bool defined() const { return reason.empty(); }
};

namespace detail {
inline void check_pair(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw UsageError(std::string(what) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
      throw DataError(std::string(what) + ": non-finite value at index " + std::to_string(i));
    }
  }
}
}  // namespace detail

inline Metric pearson(std::span<const double> a, std::span<const double> b) {
  detail::check_pair(a, b, "pearson");
  const std::size_t n = a.size();
  if (n < 2) return Metric::undefined("fewer than 2 samples");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return Metric::undefined("zero variance");
  return Metric::of(std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0));
}

/// 1-based fractional ranks; tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && x[idx[j]] == x[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) r[idx[k]] = rank;
    i = j;
  }
  return r;
}

inline Metric srocc(std::span<const double> a, std::span<const double> b) {
  detail::check_pair(a, b, "srocc");
  if (a.size() < 2) return Metric::undefined("fewer than 2 samples");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  Metric m = pearson(ra, rb);
  if (!m.defined()) m.reason = "zero rank variance";
  return m;
}

/// Pair counts behind Kendall's tau-b.
struct KendallCounts {
  std::int64_t pairs = 0;     // n(n-1)/2
  std::int64_t ties_a = 0;    // pairs tied in a
  std::int64_t ties_b = 0;    // pairs tied in b
  std::int64_t ties_ab = 0;   // pairs tied in both
  std::int64_t discordant = 0;

  std::int64_t concordant_minus_discordant() const {
    return pairs - ties_a - ties_b + ties_ab - 2 * discordant;
  }
};

/// tau-b = (nc - nd) / sqrt((n0 - n1)(n0 - n2)).
inline Metric tau_b(std::int64_t s, std::int64_t n0, std::int64_t n1, std::int64_t n2) {
  const std::int64_t da = n0 - n1, db = n0 - n2;
  if (da == 0 || db == 0) return Metric::undefined("zero rank variance");
  return Metric::of(static_cast<double>(s) / std::sqrt(static_cast<double>(da) * static_cast<double>(db)));
}

/// Knight's O(n log n) algorithm: sort by (a, b), then count the inversions
/// of b with a merge sort.
inline KendallCounts kendall_counts(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  KendallCounts c;
  c.pairs = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - (n > 0)) / 2;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
    return a[i] < a[j] || (a[i] == a[j] && b[i] < b[j]);
  });
  auto run_pairs = [](std::int64_t len) { return len * (len - 1) / 2; };
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && a[idx[j]] == a[idx[i]]) ++j;
    c.ties_a += run_pairs(static_cast<std::int64_t>(j - i));
    for (std::size_t k = i; k < j;) {
      std::size_t l = k + 1;
      while (l < j && b[idx[l]] == b[idx[k]]) ++l;
      c.ties_ab += run_pairs(static_cast<std::int64_t>(l - k));
      k = l;
    }
    i = j;
  }
  std::vector<double> v(n), tmp(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = b[idx[i]];
  // Bottom-up merge sort; each element of the right run that jumps ahead of
  // k strictly larger left elements contributes k discordant pairs.
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n), hi = std::min(lo + 2 * width, n);
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (v[j] < v[i]) {
          c.discordant += static_cast<std::int64_t>(mid - i);
          tmp[k++] = v[j++];
        } else {
          tmp[k++] = v[i++];
        }
      }
      while (i < mid) tmp[k++] = v[i++];
      while (j < hi) tmp[k++] = v[j++];
    }
    std::swap(v, tmp);
  }
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && v[j] == v[i]) ++j;
    c.ties_b += run_pairs(static_cast<std::int64_t>(j - i));
    i = j;
  }
  return c;
}

inline Metric krcc(std::span<const double> a, std::span<const double> b) {
  detail::check_pair(a, b, "krcc");
  if (a.size() < 2) return Metric::undefined("fewer than 2 samples");
  const auto c = kendall_counts(a, b);
  return tau_b(c.concordant_minus_discordant(), c.pairs, c.ties_a, c.ties_b);
}

// ---------------------------------------------------------------------------
// Four-parameter logistic
// ---------------------------------------------------------------------------

enum class LogisticForm {
  kStandard,  // beta + (alpha - beta) / (1 + exp(-(x - gamma) / |delta|))
  kPrinted,   // beta + (alpha - beta) / (1 + exp(-x + gamma / |delta|))
};

struct Logistic4Params {
  double alpha = 1.0;
  double beta = 0.0;
  double gamma = 0.0;
  double delta = 1.0;
  LogisticForm form = LogisticForm::kStandard;

  double exponent(double x) const {
    const double ad = std::abs(delta);
    return form == LogisticForm::kStandard ? -(x - gamma) / ad : -x + gamma / ad;
  }
  double operator()(double x) const { return beta + (alpha - beta) / (1.0 + std::exp(exponent(x))); }
};

struct LogisticFit {
  Logistic4Params params;
  double residual = 0.0;       // sum of squared residuals
  double initial_residual = 0.0;
  bool converged = false;
  bool degenerate = false;
  std::size_t iterations = 0;
};

namespace detail {

inline double sse(const Logistic4Params& p, std::span<const double> x, std::span<const double> y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = p(x[i]) - y[i];
    acc += r * r;
  }
  return std::isfinite(acc) ? acc : std::numeric_limits<double>::infinity();
}

/// Partial derivatives of L_g with respect to (alpha, beta, gamma, delta).
inline std::array<double, 4> logistic_jacobian(const Logistic4Params& p, double x) {
  double e = std::exp(p.exponent(x));
  if (!std::isfinite(e)) e = std::numeric_limits<double>::max();
  const double s = 1.0 / (1.0 + e);
  const double ds_dz = -s * s * e;  // d s / d exponent
  const double amp = p.alpha - p.beta;
  const double ad = std::abs(p.delta);
  const double sgn = p.delta < 0.0 ? -1.0 : 1.0;
  double dz_dg, dz_dd;
  if (p.form == LogisticForm::kStandard) {
    dz_dg = 1.0 / ad;
    dz_dd = (x - p.gamma) / (ad * ad) * sgn;
  } else {
    dz_dg = 1.0 / ad;
    dz_dd = -p.gamma / (ad * ad) * sgn;
  }
  return {s, 1.0 - s, amp * ds_dz * dz_dg, amp * ds_dz * dz_dd};
}

/// Solves the 4x4 system A x = g by Gaussian elimination with partial
/// pivoting. Returns false when singular.
inline bool solve4(std::array<std::array<double, 4>, 4> a, std::array<double, 4> g, std::array<double, 4>& out) {
  for (int c = 0; c < 4; ++c) {
    int piv = c;
    for (int r = c + 1; r < 4; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    if (!(std::abs(a[piv][c]) > 1e-300)) return false;
    std::swap(a[c], a[piv]);
    std::swap(g[c], g[piv]);
    for (int r = c + 1; r < 4; ++r) {
      const double f = a[r][c] / a[c][c];
      for (int k = c; k < 4; ++k) a[r][k] -= f * a[c][k];
      g[r] -= f * g[c];
    }
  }
  for (int c = 3; c >= 0; --c) {
    double acc = g[c];
    for (int k = c + 1; k < 4; ++k) acc -= a[c][k] * out[k];
    out[c] = acc / a[c][c];
  }
  return true;
}

struct LmResult {
  Logistic4Params params;
  double residual;
  bool converged;
  std::size_t iterations;
};

inline LmResult levenberg_marquardt(Logistic4Params p, std::span<const double> x, std::span<const double> y,
                                    std::size_t max_iter) {
  double cost = sse(p, x, y);
  double lambda = 1e-3;
  bool converged = false;
  std::size_t it = 0;
  for (; it < max_iter; ++it) {
    std::array<std::array<double, 4>, 4> jtj{};
    std::array<double, 4> jtr{};
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto j = logistic_jacobian(p, x[i]);
      const double r = y[i] - p(x[i]);
      for (int a = 0; a < 4; ++a) {
        jtr[a] += j[a] * r;
        for (int b = 0; b < 4; ++b) jtj[a][b] += j[a] * j[b];
      }
    }
    double grad_norm = 0.0;
    for (double g : jtr) grad_norm = std::max(grad_norm, std::abs(g));
    if (grad_norm < 1e-14) {
      converged = true;
      break;
    }
    bool improved = false;
    while (lambda < 1e12) {
      auto a = jtj;
      for (int k = 0; k < 4; ++k) a[k][k] += lambda * std::max(jtj[k][k], 1e-12);
      std::array<double, 4> step{};
      if (solve4(a, jtr, step)) {
        Logistic4Params q = p;
        q.alpha += step[0];
        q.beta += step[1];
        q.gamma += step[2];
        q.delta += step[3];
        if (q.delta == 0.0) q.delta = 1e-12;
        const double c = sse(q, x, y);
        if (c <= cost) {
          const double rel = (cost - c) / std::max(cost, 1e-300);
          double step_norm = 0.0;
          for (double s : step) step_norm = std::max(step_norm, std::abs(s));
          p = q;
          cost = c;
          lambda = std::max(lambda / 10.0, 1e-12);
          improved = true;
          if (rel < 1e-15 || step_norm < 1e-13 || cost < 1e-28) converged = true;
          break;
        }
      }
      lambda *= 10.0;
    }
    if (!improved) {
      converged = true;  // no descent direction left at any damping
      break;
    }
    if (converged) break;
  }
  return {p, cost, converged, it};
}

}  // namespace detail

/// Least-squares fit of the logistic from the data-driven start plus four
/// deterministic jittered restarts; the lowest residual wins.
inline LogisticFit fit_logistic4(std::span<const double> pred, std::span<const double> mos,
                                 LogisticForm form = LogisticForm::kStandard, std::size_t max_iter = 500) {
  detail::check_pair(pred, mos, "fit_logistic4");
  const std::size_t n = pred.size();
  if (n < 5) throw UsageError("fit_logistic4 needs at least 5 samples, got " + std::to_string(n));
  const double mos_max = *std::max_element(mos.begin(), mos.end());
  const double mos_min = *std::min_element(mos.begin(), mos.end());
  double mean = 0.0;
  for (double v : pred) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : pred) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));

  LogisticFit fit;
  Logistic4Params init{mos_max, mos_min, mean, sd > 0.0 ? sd : 1.0, form};
  fit.initial_residual = detail::sse(init, pred, mos);
  if (mos_max == mos_min || sd == 0.0) {
    // Flat target or flat predictor: the best logistic is a constant.
    double mm = 0.0;
    for (double v : mos) mm += v;
    mm /= static_cast<double>(n);
    fit.params = {mm, mm, mean, sd > 0.0 ? sd : 1.0, form};
    fit.residual = detail::sse(fit.params, pred, mos);
    fit.converged = true;
    fit.degenerate = true;
    return fit;
  }

  std::vector<Logistic4Params> starts{init};
  Rng rng(derive_seed(0x4c4f4749ull, "logistic-restarts", n));
  const double range = mos_max - mos_min;
  for (int r = 0; r < 4; ++r) {
    Logistic4Params s = init;
    s.alpha += rng.uniform(-0.25, 0.25) * range;
    s.beta += rng.uniform(-0.25, 0.25) * range;
    s.gamma += rng.uniform(-1.0, 1.0) * sd;
    s.delta *= std::exp(rng.uniform(-1.0, 1.0));
    starts.push_back(s);
  }
  bool first = true;
  for (const auto& s : starts) {
    const auto r = detail::levenberg_marquardt(s, pred, mos, max_iter);
    if (first || r.residual < fit.residual) {
      fit.params = r.params;
      fit.residual = r.residual;
      fit.converged = r.converged;
      fit.iterations = r.iterations;
      first = false;
    }
  }
  fit.params.delta = std::abs(fit.params.delta);
  return fit;
}

struct AccuracyMetrics {
  Metric plcc;
  Metric rmse;
  bool fitted = false;  // false when n < 5: computed on raw predictions
  bool converged = true;
  bool degenerate = false;
  Logistic4Params params;
};

/// PLCC and RMSE after mapping predictions through the fitted logistic.
inline AccuracyMetrics accuracy_metrics(std::span<const double> pred, std::span<const double> mos,
                                        LogisticForm form = LogisticForm::kStandard) {
  detail::check_pair(pred, mos, "plcc/rmse");
  AccuracyMetrics out;
  const std::size_t n = pred.size();
  if (n == 0) {
    out.plcc = Metric::undefined("no samples");
    out.rmse = Metric::undefined("no samples");
    return out;
  }
  std::vector<double> mapped(pred.begin(), pred.end());
  if (n >= 5) {
    const auto fit = fit_logistic4(pred, mos, form);
    for (auto& v : mapped) v = fit.params(v);
    out.fitted = true;
    out.converged = fit.converged;
    out.degenerate = fit.degenerate;
    out.params = fit.params;
  }
  out.plcc = pearson(mapped, mos);
  if (out.degenerate && !out.plcc.defined()) out.plcc.reason = "degenerate fit: constant input";
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += (mapped[i] - mos[i]) * (mapped[i] - mos[i]);
  out.rmse = Metric::of(std::sqrt(acc / static_cast<double>(n)));
  return out;
}

inline Metric plcc(std::span<const double> pred, std::span<const double> mos) {
  return accuracy_metrics(pred, mos).plcc;
}
inline Metric rmse(std::span<const double> pred, std::span<const double> mos) {
  return accuracy_metrics(pred, mos).rmse;
}

// ---------------------------------------------------------------------------
// Cross-dataset calibration onto the YouTube-UGC scale
// ---------------------------------------------------------------------------

inline bool is_calibration_tag(const std::string& tag) {
  return tag == "konvid-1k" || tag == "live-vqc" || tag == "youtube-ugc";
}

inline double calibrate_inlsa(double q, const std::string& source) {
  if (source == "konvid-1k") return 5.0 - 4.0 * ((5.0 - q) / 4.0 * 1.1241 - 0.0993);
  if (source == "live-vqc") return 5.0 - 4.0 * ((100.0 - q) / 100.0 * 0.7132 + 0.0253);
  if (source == "youtube-ugc") return q;
  throw UsageError("calibrate_inlsa: unknown dataset tag '" + source +
                   "' (expected konvid-1k, live-vqc or youtube-ugc)");
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct FoldMetrics {
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  Metric srocc, plcc, krcc, rmse;
  bool fitted = false;
  bool fit_converged = true;
};

struct FoldData {
  std::uint64_t seed = 0;
  std::vector<double> pred;
  std::vector<double> mos;
};

struct EvalReport {
  std::string train_set;
  std::string test_set;
  std::vector<FoldMetrics> folds;
  Metric median_srocc, median_plcc, median_krcc, median_rmse;
};

/// Median of the defined values; even counts average the central pair.
inline Metric median_of(std::vector<double> v) {
  if (v.empty()) return Metric::undefined("no defined fold values");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return Metric::of(n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]));
}

inline FoldMetrics fold_metrics(std::size_t fold, const FoldData& d) {
  FoldMetrics m;
  m.fold = fold;
  m.seed = d.seed;
  m.n = d.pred.size();
  const std::string prefix = "fold " + std::to_string(fold) + ": ";
  auto tag = [&](Metric x) {
    if (!x.defined()) x.reason = prefix + x.reason;
    return x;
  };
  m.srocc = tag(srocc(d.pred, d.mos));
  m.krcc = tag(krcc(d.pred, d.mos));
  const auto acc = accuracy_metrics(d.pred, d.mos);
  m.plcc = tag(acc.plcc);
  m.rmse = tag(acc.rmse);
  m.fitted = acc.fitted;
  m.fit_converged = acc.converged;
  return m;
}

inline void summarize(EvalReport& r) {
  auto med = [&](Metric FoldMetrics::*f) {
    std::vector<double> v;
    for (const auto& fm : r.folds) {
      if ((fm.*f).defined()) v.push_back((fm.*f).value);
    }
    return median_of(std::move(v));
  };
  r.median_srocc = med(&FoldMetrics::srocc);
  r.median_plcc = med(&FoldMetrics::plcc);
  r.median_krcc = med(&FoldMetrics::krcc);
  r.median_rmse = med(&FoldMetrics::rmse);
}

inline EvalReport eval_report(const std::vector<FoldData>& folds, std::string train_set = {},
                              std::string test_set = {}) {
  if (folds.empty()) throw UsageError("eval_report needs at least one fold");
  EvalReport r;
  r.train_set = std::move(train_set);
  r.test_set = std::move(test_set);
  r.folds.resize(folds.size());
  parallel_for(folds.size(), [&](std::size_t i) { r.folds[i] = fold_metrics(i, folds[i]); });
  summarize(r);
  return r;
}

inline nlohmann::ordered_json metric_json(const Metric& m) {
  if (m.defined()) return m.value;
  return nlohmann::ordered_json{{"value", nullptr}, {"undefined", m.reason}};
}

inline std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["train_set"] = r.train_set;
  j["test_set"] = r.test_set;
  auto folds = nlohmann::ordered_json::array();
  for (const auto& f : r.folds) {
    nlohmann::ordered_json o;
    o["fold"] = f.fold;
    o["seed"] = f.seed;
    o["n"] = f.n;
    o["srocc"] = metric_json(f.srocc);
    o["plcc"] = metric_json(f.plcc);
    o["krcc"] = metric_json(f.krcc);
    o["rmse"] = metric_json(f.rmse);
    o["logistic_fit"] = f.fitted ? (f.fit_converged ? "converged" : "not-converged") : "skipped (n < 5)";
    folds.push_back(std::move(o));
  }
  j["folds"] = std::move(folds);
  j["median"] = {{"srocc", metric_json(r.median_srocc)},
                 {"plcc", metric_json(r.median_plcc)},
                 {"krcc", metric_json(r.median_krcc)},
                 {"rmse", metric_json(r.median_rmse)}};
  return j.dump(2) + "\n";
}

inline std::string csv_value(const Metric& m) { return m.defined() ? format_double(m.value) : "nan"; }

/// One row per fold plus a median row; metric columns srocc, plcc, krcc, rmse.
inline std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "fold,seed,n,srocc,plcc,krcc,rmse\n";
  for (const auto& f : r.folds) {
    os << f.fold << ',' << f.seed << ',' << f.n << ',' << csv_value(f.srocc) << ',' << csv_value(f.plcc) << ','
       << csv_value(f.krcc) << ',' << csv_value(f.rmse) << '\n';
  }
  os << "median,,," << csv_value(r.median_srocc) << ',' << csv_value(r.median_plcc) << ','
     << csv_value(r.median_krcc) << ',' << csv_value(r.median_rmse) << '\n';
  return os.str();
}

}  // namespace bvqa
