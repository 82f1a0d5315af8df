#pragma once

// Lack of fit, adequacy and reliability of one trajectory against observations.
//
//   LOF(Y)      = RMSE over matched records of Y / sigma_obs(Y)
//                 (sigma_obs is the population std. dev. of Y's observed values;
//                  when it is 0 the divisor is max(|mean_obs(Y)|, 1))
//   adequacy    = matched records / all records
//   reliability = matched records whose prediction lies in [value - band, value + band]
//                 / matched records, band defaulting to 2 * sigma_obs(Y)
//
// A record is matched when its variable exists in the trajectory and its time
// lies inside the simulated span; predictions are linearly interpolated.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <tuple>
#include <vector>

#include "ecocal/error.hpp"
#include "ecocal/kernel.hpp"

namespace ecocal {

struct ObservationRecord {
  double time = 0.0;
  VarId target;
  double value = 0.0;
  std::optional<double> band;

  bool operator==(const ObservationRecord&) const = default;
};

struct ObservationSet {
  std::vector<ObservationRecord> records;

  bool empty() const noexcept { return records.empty(); }
  std::set<VarId> variables() const {
    std::set<VarId> out;
    for (const auto& r : records) out.insert(r.target);
    return out;
  }
  bool operator==(const ObservationSet&) const = default;
};

struct FitReport {
  std::map<VarId, double> per_variable_lof;
  /// Mean of (observed - predicted) over matched records; its sign says which way Y must move.
  std::map<VarId, double> per_variable_bias;
  double aggregate_lof = 0.0;
  double adequacy = 0.0;
  double reliability = 0.0;
  std::size_t matched = 0;
  std::size_t total = 0;

  bool operator==(const FitReport&) const = default;
};

using Weights = std::map<VarId, double>;

namespace detail {

inline std::optional<double> interpolate(const Trajectory& traj, const std::vector<double>& series, double t) {
  const std::size_t n = traj.size();
  const double first = traj.time_at(0);
  const double last = traj.time_at(n - 1);
  if (t < first || t > last) return std::nullopt;
  if (n == 1) return series[0];
  std::size_t lo = 0;
  std::size_t hi = n - 1;
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    if (traj.time_at(mid) <= t) lo = mid;
    else hi = mid;
  }
  const double t0 = traj.time_at(lo);
  const double t1 = traj.time_at(hi);
  if (t == t0) return series[lo];
  if (t == t1) return series[hi];
  const double w = (t - t0) / (t1 - t0);
  return series[lo] + w * (series[hi] - series[lo]);
}

struct ObservedStats {
  double mean = 0.0;
  double sigma = 0.0;
};

}  // namespace detail

inline FitReport evaluate(const Trajectory& trajectory, const ObservationSet& observations,
                          const std::vector<VarId>& targets, const Weights& weights = {}) {
  if (observations.empty()) throw Error(Errc::NoObservations, "observation set is empty");
  if (trajectory.empty()) throw Error(Errc::EmptyTrajectory, "trajectory has no samples");

  // Canonical order so the result does not depend on record order.
  std::vector<const ObservationRecord*> recs;
  recs.reserve(observations.records.size());
  for (const auto& r : observations.records) recs.push_back(&r);
  std::sort(recs.begin(), recs.end(), [](const auto* a, const auto* b) {
    return std::tie(a->target, a->time, a->value, a->band) < std::tie(b->target, b->time, b->value, b->band);
  });

  std::map<VarId, detail::ObservedStats> stats;
  {
    std::map<VarId, std::vector<double>> values;
    for (const auto* r : recs) values[r->target].push_back(r->value);
    for (const auto& [id, vs] : values) {
      double sum = 0.0;
      for (double v : vs) sum += v;
      const double mean = sum / static_cast<double>(vs.size());
      double ss = 0.0;
      for (double v : vs) ss += (v - mean) * (v - mean);
      stats[id] = {mean, std::sqrt(ss / static_cast<double>(vs.size()))};
    }
  }

  struct Acc {
    double sq = 0.0;
    double bias = 0.0;
    std::size_t n = 0;
  };
  std::map<VarId, Acc> acc;
  FitReport rep;
  rep.total = recs.size();
  std::size_t within = 0;
  for (const auto* r : recs) {
    const auto* series = trajectory.find(r->target);
    if (!series) continue;
    auto pred = detail::interpolate(trajectory, *series, r->time);
    if (!pred) continue;
    ++rep.matched;
    const double resid = *pred - r->value;
    auto& a = acc[r->target];
    a.sq += resid * resid;
    a.bias += r->value - *pred;
    ++a.n;
    const double band = r->band.value_or(2.0 * stats[r->target].sigma);
    if (std::abs(resid) <= band) ++within;
  }
  for (const auto& [id, a] : acc) {
    const auto& st = stats[id];
    const double scale = st.sigma > 0.0 ? st.sigma : std::max(std::abs(st.mean), 1.0);
    rep.per_variable_lof[id] = std::sqrt(a.sq / static_cast<double>(a.n)) / scale;
    rep.per_variable_bias[id] = a.bias / static_cast<double>(a.n);
  }
  rep.adequacy = static_cast<double>(rep.matched) / static_cast<double>(rep.total);
  rep.reliability = rep.matched ? static_cast<double>(within) / static_cast<double>(rep.matched) : 0.0;

  std::vector<VarId> sorted_targets = targets;
  std::sort(sorted_targets.begin(), sorted_targets.end());
  sorted_targets.erase(std::unique(sorted_targets.begin(), sorted_targets.end()), sorted_targets.end());
  double num = 0.0;
  double den = 0.0;
  for (const auto& t : sorted_targets) {
    auto it = rep.per_variable_lof.find(t);
    if (it == rep.per_variable_lof.end()) continue;
    double w = 1.0;
    if (auto wi = weights.find(t); wi != weights.end()) w = wi->second;
    if (!(w > 0.0)) throw Error(Errc::InvalidSpec, "weight for " + t.str() + " must be positive");
    num += w * it->second;
    den += w;
  }
  rep.aggregate_lof = den > 0.0 ? num / den : std::numeric_limits<double>::infinity();
  return rep;
}

/// Target with the largest lack of fit; ties go to the smaller (class, variable) name.
inline std::optional<VarId> worst_fit(const FitReport& report, const std::vector<VarId>& targets,
                                      const std::set<VarId>& exclusions = {}) {
  std::optional<VarId> best;
  double best_lof = -1.0;
  for (const auto& t : targets) {
    if (exclusions.contains(t)) continue;
    auto it = report.per_variable_lof.find(t);
    if (it == report.per_variable_lof.end()) continue;
    if (!best || it->second > best_lof || (it->second == best_lof && t < *best)) {
      best = t;
      best_lof = it->second;
    }
  }
  return best;
}

}  // namespace ecocal
