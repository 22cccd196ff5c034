#include "duodepth/metrics/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace duodepth::metrics {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

void DisparityAccumulator::add(const Grid<float>& pred, const Grid<float>& gt,
                               const Grid<float>& mask) {
  if (!pred.same_shape(gt) || !pred.same_shape(mask))
    throw ContractViolation("disparity_metrics: shape mismatch");
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    if (!(mask.v[i] > 0)) continue;
    const double err = std::abs(double(pred.v[i]) - double(gt.v[i]));
    abs_sum_ += err;
    for (int t = 0; t < 5; ++t)
      if (err > double(t + 1)) ++bad_counts_[std::size_t(t)];
    if (err > 3.0 && err > 0.05 * double(gt.v[i])) ++d1_count_;
    ++n_;
  }
}

DisparityMetrics DisparityAccumulator::result() const {
  DisparityMetrics m;
  m.count = n_;
  if (n_ == 0) {
    m.epe = kNaN;
    m.bad_tau.fill(kNaN);
    m.d1 = kNaN;
    return m;
  }
  m.epe = abs_sum_ / double(n_);
  for (int t = 0; t < 5; ++t)
    m.bad_tau[std::size_t(t)] = 100.0 * double(bad_counts_[std::size_t(t)]) / double(n_);
  m.d1 = 100.0 * double(d1_count_) / double(n_);
  return m;
}

DisparityMetrics disparity_metrics(const Grid<float>& pred, const Grid<float>& gt,
                                   const Grid<float>& mask) {
  DisparityAccumulator acc;
  acc.add(pred, gt, mask);
  return acc.result();
}

DepthMetrics depth_metrics(const Grid<float>& pred, const Grid<float>& gt,
                           const Grid<float>& mask) {
  if (!pred.same_shape(gt) || !pred.same_shape(mask))
    throw ContractViolation("depth_metrics: shape mismatch");
  DepthMetrics m;
  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0, d1 = 0;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    if (!(mask.v[i] > 0)) continue;
    const double p = pred.v[i], g = gt.v[i];
    if (!(g > 0) || !(p > 0)) continue;  // log/ratio metrics need positive depths
    const double diff = p - g;
    abs_rel += std::abs(diff) / g;
    sq_rel += diff * diff / g;
    sq += diff * diff;
    const double dl = std::log(p) - std::log(g);
    sq_log += dl * dl;
    if (std::max(p / g, g / p) < 1.25) d1 += 1;
    ++m.count;
  }
  if (m.count == 0) {
    m.abs_rel = m.sq_rel = m.rmse = m.rmse_log = m.delta1 = kNaN;
    return m;
  }
  const double n = double(m.count);
  m.abs_rel = abs_rel / n;
  m.sq_rel = sq_rel / n;
  m.rmse = std::sqrt(sq / n);
  m.rmse_log = std::sqrt(sq_log / n);
  m.delta1 = d1 / n;
  return m;
}

RegionSplit edge_region_split(const Grid<float>& gray, double threshold) {
  if (gray.c != 1) throw ContractViolation("edge_region_split: single channel expected");
  const int h = gray.h, w = gray.w;
  Grid<float> raw(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = x + 1 < w ? gray.at(y, x + 1) - gray.at(y, x) : 0.0;
      const double gy = y + 1 < h ? gray.at(y + 1, x) - gray.at(y, x) : 0.0;
      if (std::sqrt(gx * gx + gy * gy) > threshold) raw.at(y, x) = 1.0f;
    }
  RegionSplit out;
  out.edge = Grid<float>(h, w, 1);
  out.non_edge = Grid<float>(h, w, 1);
  std::int64_t edge_count = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool e = false;
      for (int dy = -2; dy <= 2 && !e; ++dy)
        for (int dx = -2; dx <= 2 && !e; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < h && xx >= 0 && xx < w && raw.at(yy, xx) > 0) e = true;
        }
      out.edge.at(y, x) = e ? 1.0f : 0.0f;
      out.non_edge.at(y, x) = e ? 0.0f : 1.0f;
      if (e) ++edge_count;
    }
  out.edge_fraction = double(edge_count) / double(std::int64_t(h) * w);
  return out;
}

Grid<float> mask_and(const Grid<float>& a, const Grid<float>& b) {
  if (!a.same_shape(b)) throw ContractViolation("mask_and: shape mismatch");
  Grid<float> out(a.h, a.w, a.c);
  for (std::int64_t i = 0; i < a.size(); ++i)
    out.v[i] = (a.v[i] > 0 && b.v[i] > 0) ? 1.0f : 0.0f;
  return out;
}

std::string Report::table() const {
  std::ostringstream os;
  os << "region            epe      bad1     bad2     bad3     d1       px\n";
  for (const auto& [name, m] : disparity) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-16s %8.4f %8.3f %8.3f %8.3f %8.3f %10lld\n", name.c_str(),
                  m.epe, m.bad(1), m.bad(2), m.bad(3), m.d1, (long long)m.count);
    os << buf;
  }
  if (!depth.empty()) {
    os << "\nregion            absrel   sqrel    rmse     rmselog  d<1.25   px\n";
    for (const auto& [name, m] : depth) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-16s %8.4f %8.4f %8.4f %8.4f %8.4f %10lld\n", name.c_str(),
                    m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta1, (long long)m.count);
      os << buf;
    }
  }
  return os.str();
}

std::string Report::to_json() const {
  nlohmann::json j;
  for (const auto& [name, m] : disparity)
    j["disparity"][name] = {{"epe", m.epe},   {"bad1", m.bad(1)}, {"bad2", m.bad(2)},
                            {"bad3", m.bad(3)}, {"bad4", m.bad(4)}, {"bad5", m.bad(5)},
                            {"d1", m.d1},     {"count", m.count}};
  for (const auto& [name, m] : depth)
    j["depth"][name] = {{"abs_rel", m.abs_rel}, {"sq_rel", m.sq_rel},   {"rmse", m.rmse},
                        {"rmse_log", m.rmse_log}, {"delta1", m.delta1}, {"count", m.count}};
  nlohmann::json per = nlohmann::json::array();
  for (const auto& [name, m] : per_sample)
    per.push_back({{"sample", name}, {"epe", m.epe}, {"bad3", m.bad(3)}, {"d1", m.d1}});
  if (!per.empty()) j["per_sample"] = per;
  return j.dump(2);
}

}  // namespace duodepth::metrics
