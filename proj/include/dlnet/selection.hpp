#pragma once

// Error/cost evaluation, min-max normalized weighted utilities, threshold
// filtering and Pareto-front extraction (both objectives minimized).

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "dlnet/error.hpp"
#include "dlnet/models.hpp"
#include "dlnet/record.hpp"
#include "dlnet/rng.hpp"

namespace dlnet::select {

enum class TimeAspect { Modeled, Measured };

struct UtilityWeights {
  std::array<double, ErrorVector::kAspects> err{1.0 / 6, 1.0 / 6, 1.0 / 6, 0.25, 0.25};
  std::array<double, CostVector::kAspects> cst{0.5, 0.2, 0.15, 0.15};
  double f_err_max = 0.25;
  double f_cst_max = 0.25;

  void validate() const {
    auto check = [](const auto& w, const char* what) {
      double s = 0.0;
      for (double v : w) {
        if (!(v >= 0.0)) throw ConfigError(std::string(what) + " weights must be >= 0");
        s += v;
      }
      if (std::fabs(s - 1.0) > 1e-9) throw ConfigError(std::string(what) + " weights must sum to 1");
    };
    check(err, "error");
    check(cst, "cost");
    if (!(f_err_max > 0.0 && f_err_max <= 1.0) || !(f_cst_max > 0.0 && f_cst_max <= 1.0))
      throw ConfigError("utility thresholds must lie in (0, 1]");
  }
};

/// Proxies that turn a FLOP count into time, energy and CO2.
struct CostModel {
  double kappa_e = 1.35e-13;   // kWh per FLOP
  double kappa_c = 0.47;       // kg CO2 per kWh
  double kappa_t_ms = 6.6e-6;  // ms per FLOP for the modeled time aspect
  TimeAspect time_aspect = TimeAspect::Modeled;

  void validate() const {
    if (!(kappa_e > 0.0) || !(kappa_c > 0.0) || !(kappa_t_ms > 0.0)) throw ConfigError("cost constants must be > 0");
  }
};

/// Linear-interpolated percentile of a sorted sample, q in [0, 1].
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw ConfigError("percentile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

/// MAE, RMSE and MAPE (%) of a point forecast.
inline void point_errors(const Tensor<float>& pred, const Tensor<float>& truth, ErrorVector& e) {
  if (pred.size() != truth.size() || pred.empty()) throw ConfigError("prediction and truth sizes differ");
  double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(truth[i]);
    abs_sum += std::fabs(d);
    sq_sum += d * d;
    pct_sum += std::fabs(d) / std::fabs(static_cast<double>(truth[i]));
  }
  const double n = static_cast<double>(pred.size());
  e.mae = abs_sum / n;
  e.rmse = std::sqrt(sq_sum / n);
  e.mape_percent = pct_sum / n * 100.0;
}

/// Spread statistics of `runs` stochastic forecasts per point.
/// samples[p * runs + k] is run k at point p.
inline void spread_errors(const std::vector<float>& samples, std::size_t runs, const Tensor<float>& truth, ErrorVector& e) {
  if (runs < 2) throw ConfigError("uncertainty needs at least 2 stochastic runs");
  const std::size_t points = truth.size();
  if (samples.size() != points * runs) throw ConfigError("sample table has the wrong size");
  double sd_sum = 0.0;
  std::size_t covered = 0;
  std::vector<double> v(runs);
  for (std::size_t p = 0; p < points; ++p) {
    double mean = 0.0;
    for (std::size_t k = 0; k < runs; ++k) {
      v[k] = samples[p * runs + k];
      mean += v[k];
    }
    mean /= static_cast<double>(runs);
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd_sum += std::sqrt(ss / static_cast<double>(runs - 1));
    std::sort(v.begin(), v.end());
    const double lo = percentile_sorted(v, 0.025), hi = percentile_sorted(v, 0.975);
    const double y = truth[p];
    if (y >= lo && y <= hi) ++covered;
  }
  e.uncertainty = sd_sum / static_cast<double>(points);
  e.one_minus_coverage = 1.0 - static_cast<double>(covered) / static_cast<double>(points);
}

/// Point errors from one Deterministic pass plus spread statistics from
/// `runs` Stochastic passes over the whole test set.
template <class Model>
ErrorVector eval_errors(const Model& m, const Tensor<float>& X, const Tensor<float>& Y, std::size_t runs, Rng rng,
                        Status status = Status::Trained) {
  if (status == Status::Failed) throw EvaluationError("cannot evaluate a Failed model");
  if (X.empty() || Y.empty()) throw ConfigError("test set is empty");
  if (runs < 2) throw ConfigError("uncertainty needs at least 2 stochastic runs");
  ErrorVector e;
  Rng unused(0);
  point_errors(models::predict(m, X, nn::DropoutMode::Deterministic, unused), Y, e);
  const std::size_t points = Y.size();
  std::vector<float> samples(points * runs);
  for (std::size_t k = 0; k < runs; ++k) {
    const Tensor<float> p = models::predict(m, X, nn::DropoutMode::Stochastic, rng);
    for (std::size_t i = 0; i < points; ++i) samples[i * runs + k] = p[i];
  }
  spread_errors(samples, runs, Y, e);
  return e;
}

/// Median wall time in ms of `reps` calls.
template <class Fn>
double median_time_ms(Fn&& fn, std::size_t reps) {
  if (reps == 0) return 0.0;
  std::vector<double> t(reps);
  for (auto& v : t) {
    const auto a = std::chrono::steady_clock::now();
    fn();
    v = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - a).count();
  }
  std::sort(t.begin(), t.end());
  return reps % 2 ? t[reps / 2] : 0.5 * (t[reps / 2 - 1] + t[reps / 2]);
}

inline CostVector make_costs(double size_bytes, std::uint64_t flops, double measured_ms, const CostModel& cm) {
  CostVector c;
  c.size_bytes = size_bytes;
  c.energy_kwh = static_cast<double>(flops) * cm.kappa_e;
  c.co2_kg = c.energy_kwh * cm.kappa_c;
  c.time_ms = cm.time_aspect == TimeAspect::Measured ? measured_ms : static_cast<double>(flops) * cm.kappa_t_ms;
  return c;
}

namespace detail {

inline bool usable(const StudentRecord& r) {
  return r.status == Status::Trained && r.errors.has_value() && r.costs.has_value();
}

}  // namespace detail

/// Per-aspect min-max over Trained records, then weighted sums. A constant
/// aspect normalizes to 0. Records that are not usable lose their utility.
inline void normalize_pool(std::vector<StudentRecord>& records, const UtilityWeights& w) {
  w.validate();
  std::array<double, ErrorVector::kAspects> emin, emax;
  std::array<double, CostVector::kAspects> cmin, cmax;
  emin.fill(std::numeric_limits<double>::infinity());
  emax.fill(-std::numeric_limits<double>::infinity());
  cmin.fill(std::numeric_limits<double>::infinity());
  cmax.fill(-std::numeric_limits<double>::infinity());
  bool any = false;
  for (const auto& r : records) {
    if (!detail::usable(r)) continue;
    any = true;
    for (int i = 0; i < ErrorVector::kAspects; ++i) {
      emin[i] = std::min(emin[i], (*r.errors)[i]);
      emax[i] = std::max(emax[i], (*r.errors)[i]);
    }
    for (int i = 0; i < CostVector::kAspects; ++i) {
      cmin[i] = std::min(cmin[i], (*r.costs)[i]);
      cmax[i] = std::max(cmax[i], (*r.costs)[i]);
    }
  }
  if (!any) throw PipelineError("no Trained records to normalize");
  auto norm = [](double v, double lo, double hi) { return hi > lo ? (v - lo) / (hi - lo) : 0.0; };
  for (auto& r : records) {
    if (!detail::usable(r)) {
      r.utility.reset();
      continue;
    }
    UtilityPoint u;
    for (int i = 0; i < ErrorVector::kAspects; ++i) u.f_err += w.err[i] * norm((*r.errors)[i], emin[i], emax[i]);
    for (int i = 0; i < CostVector::kAspects; ++i) u.f_cst += w.cst[i] * norm((*r.costs)[i], cmin[i], cmax[i]);
    r.utility = u;
  }
}

/// Keeps points with f_err <= f_err_max and f_cst <= f_cst_max.
inline std::vector<std::size_t> filter_thresholds(const std::vector<UtilityPoint>& pts, const std::vector<std::size_t>& idx,
                                                  const UtilityWeights& w) {
  std::vector<std::size_t> out;
  for (std::size_t i : idx)
    if (!(pts[i].f_err > w.f_err_max) && !(pts[i].f_cst > w.f_cst_max)) out.push_back(i);
  return out;
}

inline bool dominates(const UtilityPoint& a, const UtilityPoint& b) {
  return a.f_err <= b.f_err && a.f_cst <= b.f_cst && (a.f_err < b.f_err || a.f_cst < b.f_cst);
}

/// Non-dominated subset of `idx`, returned in ascending index order. Sort by
/// (f_err, f_cst) and sweep: a point survives iff its f_cst is strictly below
/// every point with smaller f_err and equal to the minimum of its f_err group.
inline std::vector<std::size_t> pareto_front(const std::vector<UtilityPoint>& pts, std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (pts[a].f_err != pts[b].f_err) return pts[a].f_err < pts[b].f_err;
    if (pts[a].f_cst != pts[b].f_cst) return pts[a].f_cst < pts[b].f_cst;
    return a < b;
  });
  std::vector<std::size_t> keep;
  double best_before = std::numeric_limits<double>::infinity();
  std::size_t g = 0;
  while (g < idx.size()) {
    std::size_t h = g;
    while (h < idx.size() && pts[idx[h]].f_err == pts[idx[g]].f_err) ++h;
    const double group_min = pts[idx[g]].f_cst;
    for (std::size_t j = g; j < h; ++j) {
      const double c = pts[idx[j]].f_cst;
      if (c == group_min && c < best_before) keep.push_back(idx[j]);
    }
    best_before = std::min(best_before, group_min);
    g = h;
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

inline std::vector<std::size_t> pareto_front(const std::vector<UtilityPoint>& pts) {
  std::vector<std::size_t> all(pts.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return pareto_front(pts, std::move(all));
}

struct Selection {
  std::vector<std::size_t> front;  // record indices
  std::size_t survivors = 0;       // records left after thresholds
  bool fallback = false;           // thresholds removed everything
};

/// normalize -> thresholds -> Pareto front. Marks `pareto` on the records.
/// An empty threshold survivor set falls back to the unfiltered front.
inline Selection select_front(std::vector<StudentRecord>& records, const UtilityWeights& w) {
  normalize_pool(records, w);
  std::vector<UtilityPoint> pts(records.size());
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].pareto = false;
    if (records[i].utility) {
      pts[i] = *records[i].utility;
      usable.push_back(i);
    }
  }
  Selection s;
  auto kept = filter_thresholds(pts, usable, w);
  s.survivors = kept.size();
  if (kept.empty()) {
    s.fallback = true;
    kept = usable;
  }
  s.front = pareto_front(pts, kept);
  for (std::size_t i : s.front) records[i].pareto = true;
  return s;
}

}  // namespace dlnet::select
