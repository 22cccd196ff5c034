#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "duodepth/core/grid.hpp"

namespace duodepth::metrics {

// NaN marks "no valid pixel", never zero.
struct DisparityMetrics {
  double epe = 0;
  std::array<double, 5> bad_tau{};  // % with |err| > tau, tau = 1..5
  double d1 = 0;                    // % with |err| > 3 and > 5% of gt
  std::int64_t count = 0;

  double bad(int tau) const { return bad_tau.at(std::size_t(tau - 1)); }
};

struct DepthMetrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0, delta1 = 0;
  std::int64_t count = 0;
};

DisparityMetrics disparity_metrics(const Grid<float>& pred, const Grid<float>& gt,
                                   const Grid<float>& mask);
DepthMetrics depth_metrics(const Grid<float>& pred, const Grid<float>& gt,
                           const Grid<float>& mask);

struct RegionSplit {
  Grid<float> edge;      // 1 = edge band
  Grid<float> non_edge;  // complement
  double edge_fraction = 0;
};

// Forward-difference gradient magnitude, thresholded and dilated by 2 px
// (Chebyshev). A step edge therefore produces a 5 px band.
RegionSplit edge_region_split(const Grid<float>& gray, double threshold = 12.0);

// Aggregated evaluation over a dataset split, with optional region rows.
struct Report {
  std::map<std::string, DisparityMetrics> disparity;          // row name -> metrics
  std::map<std::string, DepthMetrics> depth;
  std::vector<std::pair<std::string, DisparityMetrics>> per_sample;

  std::string table() const;  // plain-text rendering
  std::string to_json() const;
};

// Combines masks: out = a AND b.
Grid<float> mask_and(const Grid<float>& a, const Grid<float>& b);

// Pools per-sample accumulators into a single metrics row (pixel-weighted).
class DisparityAccumulator {
 public:
  void add(const Grid<float>& pred, const Grid<float>& gt, const Grid<float>& mask);
  DisparityMetrics result() const;

 private:
  double abs_sum_ = 0;
  std::array<std::int64_t, 5> bad_counts_{};
  std::int64_t d1_count_ = 0;
  std::int64_t n_ = 0;
};

}  // namespace duodepth::metrics
