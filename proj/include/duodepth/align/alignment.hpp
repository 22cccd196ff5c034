#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "duodepth/core/grid.hpp"

namespace duodepth::align {

template <class S>
struct AffineAlignment {
  S scale = S(1);
  S shift = S(0);
  // Inverse monocular depth should correlate positively with disparity; a
  // non-positive scale is allowed but suspicious.
  bool scale_warning = false;
};

template <class S>
struct PercentileMask {
  double lower_q = 0.2, upper_q = 0.9;
  Grid<S> mask;  // 1 where the pixel participates in the fit
  std::int64_t count = 0;
};

// Quantile by sorting with linear interpolation between order statistics.
template <class S>
S quantile_sorted(const std::vector<S>& sorted, double q) {
  const double pos = q * double(sorted.size() - 1);
  const std::size_t i0 = std::size_t(pos);
  const std::size_t i1 = std::min(i0 + 1, sorted.size() - 1);
  const double f = pos - double(i0);
  return S(double(sorted[i0]) * (1.0 - f) + double(sorted[i1]) * f);
}

// Select the pixels whose stereo-disparity value lies inside the
// [lower_q, upper_q] quantile band of the valid values.
template <class S>
PercentileMask<S> percentile_mask(const Grid<S>& d_s, const Grid<S>* valid = nullptr,
                                  double lower_q = 0.20, double upper_q = 0.90) {
  if (!(lower_q >= 0.0 && lower_q < upper_q && upper_q <= 1.0))
    throw ContractViolation("percentile_mask: need 0 <= lower_q < upper_q <= 1");
  std::vector<S> vals;
  vals.reserve(std::size_t(d_s.size()));
  for (std::int64_t i = 0; i < d_s.size(); ++i) {
    if (valid && !((*valid).v[i] > S(0))) continue;
    if (!std::isfinite(double(d_s.v[i]))) continue;
    vals.push_back(d_s.v[i]);
  }
  if (vals.empty()) throw EmptyDomainError("percentile_mask: no valid pixels");
  std::sort(vals.begin(), vals.end());
  const S lo = quantile_sorted(vals, lower_q);
  const S hi = quantile_sorted(vals, upper_q);

  PercentileMask<S> out;
  out.lower_q = lower_q;
  out.upper_q = upper_q;
  out.mask = Grid<S>(d_s.h, d_s.w, d_s.c);
  for (std::int64_t i = 0; i < d_s.size(); ++i) {
    if (valid && !((*valid).v[i] > S(0))) continue;
    const S x = d_s.v[i];
    if (std::isfinite(double(x)) && x >= lo && x <= hi) {
      out.mask.v[i] = S(1);
      ++out.count;
    }
  }
  return out;
}

// Exact minimizer of sum_{i in mask} (s * d_m(i) + t - d_s(i))^2 via the 2x2
// normal equations. Throws DegenerateFitError (carrying s=1, t=mean(d_s-d_m))
// when d_m is constant on the mask.
template <class S>
AffineAlignment<S> solve_global_scale_shift(const Grid<S>& d_m, const Grid<S>& d_s,
                                            const Grid<S>& mask) {
  if (!d_m.same_shape(d_s) || !d_m.same_shape(mask))
    throw ContractViolation("solve_global_scale_shift: shape mismatch");
  double smm = 0, sm = 0, smd = 0, sd = 0, n = 0;
  for (std::int64_t i = 0; i < d_m.size(); ++i) {
    if (!(mask.v[i] > S(0))) continue;
    const double m = double(d_m.v[i]);
    const double d = double(d_s.v[i]);
    smm += m * m;
    sm += m;
    smd += m * d;
    sd += d;
    n += 1;
  }
  if (n < 1) throw EmptyDomainError("solve_global_scale_shift: empty mask");
  const double det = smm * n - sm * sm;
  const double mean_m = sm / n;
  const double variance = smm / n - mean_m * mean_m;
  if (!(variance > 1e-12 * std::max(1.0, smm / n)) || std::abs(det) < 1e-30) {
    const double t_fb = (sd - sm) / n;
    throw DegenerateFitError("solve_global_scale_shift: constant prior on mask", 1.0, t_fb);
  }
  AffineAlignment<S> a;
  a.scale = S((smd * n - sm * sd) / det);
  a.shift = S((smm * sd - sm * smd) / det);
  a.scale_warning = !(a.scale > S(0));
  return a;
}

template <class S>
Grid<S> apply_alignment(const Grid<S>& d_m, const AffineAlignment<S>& a) {
  Grid<S> out = d_m;
  out.v = d_m.v * a.scale + a.shift;
  return out;
}

}  // namespace duodepth::align
