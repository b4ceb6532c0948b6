#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "opere/numfmt.hpp"

namespace opere {

class DegenerateSeries : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PredictionSeries {
  std::vector<double> v_hat;
  std::vector<double> v_true;
};

namespace detail {

inline void check_series(const PredictionSeries& s, const char* who) {
  if (s.v_hat.size() != s.v_true.size()) throw std::invalid_argument(std::string(who) + ": series lengths differ");
  if (s.v_hat.size() < 2) throw DegenerateSeries(std::string(who) + ": need at least 2 points");
}

inline double sum_sq_error(const PredictionSeries& s) {
  double acc = 0.0;
  for (std::size_t i = 0; i < s.v_hat.size(); ++i) acc += (s.v_hat[i] - s.v_true[i]) * (s.v_hat[i] - s.v_true[i]);
  return acc;
}

inline double sum_sq_dev(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return acc;
}

}  // namespace detail

/// RMSE normalised by the range of the predicted series.
inline double nrmse(const PredictionSeries& s) {
  detail::check_series(s, "nrmse");
  const auto [lo, hi] = std::minmax_element(s.v_hat.begin(), s.v_hat.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) throw DegenerateSeries("nrmse: predictions are constant");
  return std::sqrt(detail::sum_sq_error(s) / static_cast<double>(s.v_hat.size())) / range;
}

/// 1 - SSE / sum (v_hat - mean(v_hat))^2: the denominator uses the predicted
/// series, as in the evaluation protocol this library reproduces.
inline double r2_score(const PredictionSeries& s) {
  detail::check_series(s, "r2_score");
  const double dev = detail::sum_sq_dev(s.v_hat);
  if (!(dev > 0.0)) throw DegenerateSeries("r2_score: predictions have zero variance");
  return 1.0 - detail::sum_sq_error(s) / dev;
}

/// Textbook coefficient of determination (true-value variance denominator).
inline double standard_r2(const PredictionSeries& s) {
  detail::check_series(s, "standard_r2");
  const double dev = detail::sum_sq_dev(s.v_true);
  if (!(dev > 0.0)) throw DegenerateSeries("standard_r2: true values have zero variance");
  return 1.0 - detail::sum_sq_error(s) / dev;
}

/// A decision between >= 2 candidate viewpoints, with the oracle's pick.
struct DecisionPoint {
  int t = 0;
  std::vector<std::pair<int, int>> candidates;  // (row, col)
  int chosen = 0;
  int oracle = -1;
};

struct Regret {
  double raw = 0.0;
  double normalized = 0.0;
};

inline Regret regret(const std::vector<DecisionPoint>& decisions) {
  if (decisions.empty()) throw std::invalid_argument("regret: empty decision list");
  Regret r;
  for (const DecisionPoint& d : decisions) {
    if (d.oracle < 0 || d.oracle >= static_cast<int>(d.candidates.size()))
      throw std::invalid_argument("regret: decision point without a valid oracle index");
    if (d.chosen != d.oracle) r.raw += 1.0;
  }
  r.normalized = r.raw / static_cast<double>(decisions.size());
  return r;
}

inline void write_decisions_csv(std::ostream& os, const std::vector<DecisionPoint>& decisions) {
  os << "t,candidates,chosen,oracle\n";
  for (const DecisionPoint& d : decisions) {
    os << d.t << ',';
    for (std::size_t i = 0; i < d.candidates.size(); ++i)
      os << (i ? ";" : "") << d.candidates[i].first << ':' << d.candidates[i].second;
    os << ',' << d.chosen << ',' << d.oracle << '\n';
  }
}

struct MeanStd {
  double mean = 0.0;
  std::optional<double> std;  // undefined for a single sample
  int n = 0;
};

/// Mean and sample standard deviation.
inline MeanStd mean_std(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean_std: no samples");
  MeanStd m;
  m.n = static_cast<int>(xs.size());
  m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) m.std = std::sqrt(detail::sum_sq_dev(xs) / static_cast<double>(xs.size() - 1));
  return m;
}

/// Coverage counters over one episode, normalised by the world's free cells.
struct CoverageCurve {
  std::string policy;
  int free_cells = 0;
  std::vector<long long> camera;  // C(t)
  std::vector<long long> lidar;   // LiDAR-known free cells at t

  double final_camera() const { return static_cast<double>(camera.back()) / free_cells; }
  double final_lidar() const { return static_cast<double>(lidar.back()) / free_cells; }
};

struct CoverageStats {
  MeanStd camera;
  MeanStd lidar;
};

/// Per-policy statistics of final camera and LiDAR coverage.
inline std::map<std::string, CoverageStats> coverage_summary(const std::vector<CoverageCurve>& curves) {
  if (curves.empty()) throw std::invalid_argument("coverage_summary: no traces");
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_policy;
  for (const CoverageCurve& c : curves) {
    if (c.camera.empty() || c.free_cells <= 0) throw std::invalid_argument("coverage_summary: empty trace");
    by_policy[c.policy].first.push_back(c.final_camera());
    by_policy[c.policy].second.push_back(c.final_lidar());
  }
  std::map<std::string, CoverageStats> out;
  for (const auto& [policy, v] : by_policy) out[policy] = {mean_std(v.first), mean_std(v.second)};
  return out;
}

/// Long-format time series: policy, episode index, t, camera and LiDAR fractions.
inline void write_coverage_curves_csv(std::ostream& os, const std::vector<CoverageCurve>& curves) {
  os << "policy,episode,t,camera,lidar\n";
  for (std::size_t e = 0; e < curves.size(); ++e) {
    const CoverageCurve& c = curves[e];
    for (std::size_t t = 0; t < c.camera.size(); ++t)
      os << c.policy << ',' << e << ',' << t << ',' << static_cast<double>(c.camera[t]) / c.free_cells << ','
         << static_cast<double>(c.lidar[t]) / c.free_cells << '\n';
  }
}

/// One row of the long-format metric table.
struct MetricRow {
  std::string env;
  std::string policy;
  std::string method;
  std::string metric;
  double mean = 0.0;
  std::optional<double> std;
  std::string seed;
};

inline void write_metric_rows_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << "env,policy,method,metric,mean,std,seed\n";
  for (const MetricRow& r : rows) {
    os << r.env << ',' << r.policy << ',' << r.method << ',' << r.metric << ',' << format_double(r.mean) << ',';
    if (r.std) os << format_double(*r.std);
    os << ',' << r.seed << '\n';
  }
}

}  // namespace opere
