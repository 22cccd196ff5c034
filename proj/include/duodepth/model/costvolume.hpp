#pragma once

#include <vector>

#include "duodepth/geometry/geometry.hpp"
#include "duodepth/model/backbone.hpp"

namespace duodepth::model {

// Floor applied to correlation values entering the regularizer/lookup path,
// so off-image sentinels never leak large magnitudes into learned layers.
template <class S>
constexpr S kLookupFloor = S(-3);

template <class S>
struct StereoVolume {
  Var raw = -1;  // correlation, kOobScore at off-image candidates
  Var reg = -1;  // regularized scores (sentinel re-imposed); soft-argmin input
  std::vector<Var> lookup_pyramid;  // floored + channel-pooled levels
  Grid<S> valid;                    // candidate in-image indicator
  int num_cand = 0;
};

template <class S>
void init_volume_params(nn::ParamStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
  nn::init_conv(ps, "reg.conv", 3, 3, cfg.max_disp_quarter, cfg.max_disp_quarter, rng);
}

// Grouped channel-mean correlation over integer candidates at 1/4 resolution,
// optional one-layer smoothing, plus the pooled lookup pyramid.
template <class S>
StereoVolume<S> build_stereo_volume(nn::Tape<S>& t, nn::ParamStore<S>* ps, const ModelConfig& cfg,
                                    Var f3_left, Var f3_right) {
  if (t.val(f3_left).c % cfg.groups != 0)
    throw ContractViolation("stereo volume: channels not divisible by group count");
  StereoVolume<S> vol;
  vol.num_cand = cfg.max_disp_quarter;
  vol.raw = nn::corr_volume(t, f3_left, f3_right, cfg.max_disp_quarter, &vol.valid);
  if (cfg.regularize_volume && ps) {
    Var floored = nn::clamp_op(t, vol.raw, kLookupFloor<S>, S(1e30));
    Var w = t.param(*ps, "reg.conv.w");
    Var b = t.param(*ps, "reg.conv.b");
    Var smoothed = nn::conv2d(t, floored, w, b, 3, 3, 1);
    vol.reg = nn::blend_mask(t, smoothed, vol.valid, nn::kOobScore<S>);
  } else {
    vol.reg = vol.raw;
  }
  Var level = nn::clamp_op(t, vol.reg, kLookupFloor<S>, S(1e30));
  vol.lookup_pyramid.push_back(level);
  for (int l = 1; l < cfg.lookup_levels; ++l) {
    level = nn::avgpool_c2(t, level);
    vol.lookup_pyramid.push_back(level);
  }
  return vol;
}

struct Regression {
  Var disparity = -1;   // soft-argmin expectation
  Var confidence = -1;  // max softmax probability
};

// disparity = sum_d d * softmax(scores)_d over the candidate axis.
template <class S>
Regression soft_argmin(nn::Tape<S>& t, Var scores) {
  const int d = t.val(scores).c;
  std::vector<S> cands(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) cands[std::size_t(i)] = S(i);
  Var sm = nn::softmax_c(t, scores);
  Regression r;
  r.disparity = nn::expect_c(t, sm, cands);
  r.confidence = nn::max_c(t, sm);
  return r;
}

// Multi-level linear-interpolated slices around the query (disparity units of
// level 0; level l is queried at q / 2^l). Returns (2r+1)*levels channels.
template <class S>
Var lookup_geometry_features(nn::Tape<S>& t, const std::vector<Var>& pyramid, Var query,
                             int radius, double* clamp_fraction = nullptr) {
  std::vector<Var> taps;
  double clamped_total = 0;
  for (std::size_t l = 0; l < pyramid.size(); ++l) {
    Var q = l == 0 ? query : nn::scale(t, query, S(1.0 / double(1 << l)));
    double frac = 0;
    taps.push_back(nn::lookup_linear_c(t, pyramid[l], q, radius, &frac));
    clamped_total += frac;
  }
  if (clamp_fraction) *clamp_fraction = clamped_total / double(pyramid.size());
  return nn::concat_c(t, taps);
}

// ----------------------------------------------------------------- multiview

template <class S>
struct MvsVolume {
  Grid<S> cost;            // h x w x num_bins, variance metric (lower = better)
  Grid<S> validity_count;  // contributing views per cell
  geo::DepthBinSpec bins;
};

template <class S>
constexpr S kMvsInvalidCost = S(1e6);

// Variance about the per-cell mean volume, averaged over channels, with the
// view count adjusted per cell; the reference's own (unwarped) features count
// as the first volume. Cells seen by fewer than two views get the sentinel
// cost and a validity flag below 2.
template <class S>
MvsVolume<S> build_mvs_variance_volume(const Grid<S>& ref_features,
                                       const std::vector<geo::WarpedVolume<S>>& warped,
                                       const geo::DepthBinSpec& bins) {
  if (warped.empty()) throw ContractViolation("mvs volume: need at least one source view");
  const int h = ref_features.h, w = ref_features.w, c = ref_features.c;
  const int nb = bins.num_bins;
  for (const auto& wv : warped) {
    if (wv.features.h != h || wv.features.w != w || wv.channels != c || wv.num_bins != nb)
      throw ContractViolation("mvs volume: warped volume shape mismatch");
  }
  MvsVolume<S> out;
  out.bins = bins;
  out.cost = Grid<S>(h, w, nb);
  out.validity_count = Grid<S>(h, w, nb);
  std::vector<S> mean(static_cast<std::size_t>(c));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const S* ref_px = ref_features.v.data() + ref_features.idx(y, x, 0);
      for (int b = 0; b < nb; ++b) {
        int n = 1;  // the reference view always contributes
        for (const auto& wv : warped)
          if (wv.validity.at(y, x, b) > S(0)) ++n;
        out.validity_count.at(y, x, b) = S(n);
        if (n < 2) {
          out.cost.at(y, x, b) = kMvsInvalidCost<S>;
          continue;
        }
        for (int k = 0; k < c; ++k) mean[std::size_t(k)] = ref_px[k];
        for (const auto& wv : warped) {
          if (!(wv.validity.at(y, x, b) > S(0))) continue;
          const S* f = wv.features.v.data() + wv.features.idx(y, x, b * c);
          for (int k = 0; k < c; ++k) mean[std::size_t(k)] += f[k];
        }
        for (int k = 0; k < c; ++k) mean[std::size_t(k)] /= S(n);
        S acc = 0;
        for (int k = 0; k < c; ++k) {
          const S d = ref_px[k] - mean[std::size_t(k)];
          acc += d * d;
        }
        for (const auto& wv : warped) {
          if (!(wv.validity.at(y, x, b) > S(0))) continue;
          const S* f = wv.features.v.data() + wv.features.idx(y, x, b * c);
          for (int k = 0; k < c; ++k) {
            const S d = f[k] - mean[std::size_t(k)];
            acc += d * d;
          }
        }
        out.cost.at(y, x, b) = acc / S(n * c);
      }
    }
  return out;
}

}  // namespace duodepth::model
