#pragma once

#include "duodepth/data/render.hpp"
#include "duodepth/model/prior.hpp"
#include "duodepth/model/refine.hpp"

namespace duodepth::model {

// Creates every parameter of the dual-branch model in a fixed order; the
// store contents are a pure function of (config, seed).
template <class S>
void init_model_params(nn::ParamStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
  init_backbone_params(ps, cfg, rng);
  init_volume_params(ps, cfg, rng);
  init_context_head<S>(ps, "sp", cfg, cfg.hidden_channels, rng);
  init_context_head<S>(ps, "sga", cfg, cfg.hidden_channels, rng);
  init_context_head<S>(ps, "mgr", cfg, cfg.hidden_channels, rng);
  init_refine_params(ps, cfg, rng);
  if (cfg.prior_provider == "learned") init_learned_prior_params(ps, cfg, rng);
}

template <class S>
struct StereoForward {
  PadInfo pad;
  FeaturePyramid<S> left_pyr, right_pyr;
  Var ctx_trunk = -1;
  StereoVolume<S> volume;
  Regression init_reg;
  Var prior_quarter = -1;
  RefinementResult<S> refinement;
};

// Builds the full forward graph for one rectified pair: pyramids, correlation
// volume, initial regression, global alignment, and the dual-branch rounds.
template <class S>
StereoForward<S> stereo_forward(nn::Tape<S>& t, nn::ParamStore<S>& ps, const ModelConfig& cfg,
                                const Grid<S>& left, const Grid<S>& right,
                                const Grid<S>& prior_inv_depth) {
  StereoForward<S> fwd;
  const Grid<S> left_p = pad_to_multiple(left, 32, &fwd.pad);
  const Grid<S> right_p = pad_to_multiple(right, 32);
  Var left_img = t.constant(left_p);
  Var right_img = t.constant(right_p);

  fwd.left_pyr = extract_pyramid(t, ps, cfg, left_img);
  fwd.right_pyr = extract_pyramid(t, ps, cfg, right_img);
  fwd.ctx_trunk = context_trunk(t, ps, fwd.left_pyr.trunk);

  fwd.volume = build_stereo_volume(t, &ps, cfg, fwd.left_pyr.f[3], fwd.right_pyr.f[3]);
  fwd.init_reg = soft_argmin(t, fwd.volume.reg);

  if (cfg.prior_provider == "learned") {
    fwd.prior_quarter = learned_prior_quarter(t, ps, cfg, left_img, fwd.left_pyr.trunk);
  } else {
    Grid<S> padded_prior = pad_to_multiple(prior_inv_depth, 32);
    fwd.prior_quarter = t.constant(stride_sample(padded_prior, 4));
  }

  BranchIO<S> io;
  Var f3l = fwd.left_pyr.f[3];
  Var f3r = fwd.right_pyr.f[3];
  const S sentinel = S(cfg.flow_oob_sentinel);
  io.residual = [f3l, f3r, sentinel](nn::Tape<S>& tp, Var d) {
    return flow_residual(tp, f3l, f3r, d, sentinel);
  };
  io.vol_pyramid = fwd.volume.lookup_pyramid;
  io.clamp_max = S(cfg.max_disp_quarter);
  io.lookup_radius = cfg.lookup_radius;
  io.upsample_value_scale = S(4);

  fwd.refinement = run_refinement(t, ps, cfg, io, fwd.init_reg.disparity, fwd.prior_quarter,
                                  fwd.ctx_trunk, fwd.pad.orig_h, fwd.pad.orig_w);
  return fwd;
}

struct InferStats {
  double clamp_rate = 0;
  double lookup_clamped = 0;
  float alignment_scale = 1;
  float alignment_shift = 0;
  bool alignment_degenerate = false;
};

// Value-only convenience wrapper (fresh tape, no gradients kept).
template <class S>
Grid<S> infer_stereo(nn::ParamStore<S>& ps, const ModelConfig& cfg, const Grid<S>& left,
                     const Grid<S>& right, const Grid<S>& prior_inv_depth,
                     InferStats* stats = nullptr) {
  nn::Tape<S> t;
  const auto fwd = stereo_forward(t, ps, cfg, left, right, prior_inv_depth);
  if (stats) {
    stats->clamp_rate = fwd.refinement.mean_clamp_rate;
    stats->lookup_clamped = fwd.refinement.mean_lookup_clamped;
    stats->alignment_scale = fwd.refinement.alignment.scale;
    stats->alignment_shift = fwd.refinement.alignment.shift;
    stats->alignment_degenerate = fwd.refinement.alignment_degenerate;
  }
  return t.val(fwd.refinement.d_s_full);
}

// ------------------------------------------------------------------- multiview

template <class S>
struct MvsForward {
  PadInfo pad;
  geo::DepthBinSpec bins;
  MvsVolume<S> volume;        // variance cost at 1/4
  Var bin_index_quarter = -1; // refined continuous bin coordinate
  RefinementResult<S> refinement;
  Grid<S> depth_full;         // bins mapped back to metric depth
};

// Multi-view path: the correlation volume is replaced by the (parameter-free)
// variance cost over homography-warped features; everything downstream runs
// unchanged on the bin-index field. The confidence residual is the variance
// profile sampled at the current estimate.
template <class S>
MvsForward<S> mvs_forward(nn::Tape<S>& t, nn::ParamStore<S>& ps, const ModelConfig& cfg,
                          const std::vector<Grid<S>>& images, const std::vector<geo::View>& views,
                          const geo::DepthBinSpec& bins, const Grid<S>& prior_inv_depth) {
  if (images.size() < 2 || images.size() != views.size())
    throw ContractViolation("mvs_forward: need n >= 2 images with matching views");
  MvsForward<S> fwd;
  fwd.bins = bins;

  std::vector<Var> f3;
  Var ctx = -1;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Grid<S> padded = pad_to_multiple(images[i], 32, i == 0 ? &fwd.pad : nullptr);
    Var img = t.constant(padded);
    const auto pyr = extract_pyramid(t, ps, cfg, img);
    f3.push_back(pyr.f[3]);
    if (i == 0) ctx = context_trunk(t, ps, pyr.trunk);
  }

  // geometry on the quarter-res grid
  const auto bin_depths = geo::build_depth_bins(bins);
  std::vector<geo::WarpedVolume<S>> warped;
  geo::View ref_q{views[0].intrinsics.scaled(0.25), views[0].pose};
  for (std::size_t i = 1; i < images.size(); ++i) {
    geo::View src_q{views[i].intrinsics.scaled(0.25), views[i].pose};
    warped.push_back(geo::warp_volume(t.val(f3[i]), ref_q, src_q, bin_depths));
  }
  fwd.volume = build_mvs_variance_volume(t.val(f3[0]), warped, bins);

  // scores: negated cost, sentinel where fewer than two views contribute
  Grid<S> score_grid = fwd.volume.cost;
  Grid<S> valid(score_grid.h, score_grid.w, score_grid.c);
  for (std::int64_t i = 0; i < score_grid.size(); ++i) {
    const bool ok = fwd.volume.validity_count.v[i] >= S(2);
    valid.v[i] = ok ? S(1) : S(0);
    score_grid.v[i] = ok ? -score_grid.v[i] : nn::kOobScore<S>;
  }
  Var scores = t.constant(score_grid);
  Var cost = t.constant(fwd.volume.cost);

  const auto reg = soft_argmin(t, scores);

  BranchIO<S> io;
  io.residual = [cost](nn::Tape<S>& tp, Var d) {
    return nn::lookup_linear_c(tp, cost, d, 0);  // variance at the estimate
  };
  Var level = nn::clamp_op(t, scores, kLookupFloor<S>, S(1e30));
  io.vol_pyramid.push_back(level);
  for (int l = 1; l < cfg.lookup_levels; ++l) {
    level = nn::avgpool_c2(t, level);
    io.vol_pyramid.push_back(level);
  }
  io.clamp_max = S(bins.num_bins - 1);
  io.lookup_radius = cfg.lookup_radius;
  io.upsample_value_scale = S(1);  // bin indices are resolution-free

  Grid<S> prior_q = stride_sample(pad_to_multiple(prior_inv_depth, 32), 4);
  fwd.refinement = run_refinement(t, ps, cfg, io, reg.disparity, t.constant(prior_q), ctx,
                                  fwd.pad.orig_h, fwd.pad.orig_w);
  fwd.bin_index_quarter = fwd.refinement.d_s_quarter;

  const Grid<S>& idx_full = t.val(fwd.refinement.d_s_full);
  fwd.depth_full = Grid<S>(idx_full.h, idx_full.w, 1);
  for (std::int64_t i = 0; i < idx_full.size(); ++i)
    fwd.depth_full.v[i] = S(geo::bin_coord_to_depth(double(idx_full.v[i]), bins));
  return fwd;
}

}  // namespace duodepth::model
