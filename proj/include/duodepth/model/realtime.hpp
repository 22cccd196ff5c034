#pragma once

#include "duodepth/model/pipeline.hpp"

namespace duodepth::model {

// Scalar reference forms of the local sampling rules; the grid versions below
// and the fuzz tests both lean on these.
inline double local_range_lo(double d_prev, int num_samples, double delta) {
  return std::max(0.0, d_prev - double(num_samples - 1) / 2.0 * delta);
}
inline double local_range_hi(double d_prev, int num_samples, double delta, int w_stage) {
  return std::min(double(w_stage), d_prev + double(num_samples - 1) / 2.0 * delta);
}
inline double local_sample_interval(double lo, double hi, int num_samples) {
  return (hi - lo) / double(num_samples - 1);
}

template <class S>
struct LocalSampleGrid {
  Grid<S> d_min, d_max;  // per-pixel range after boundary clipping
  Grid<S> interval;      // actual spacing (Eq. 11)
  Grid<S> samples;       // h x w x D, d_min + n * interval
  int num_samples = 0;
};

// d_min = max(0, d_prev - (D-1)/2 * delta), d_max = min(W, d_prev + (D-1)/2 * delta)
template <class S>
void local_disparity_range(const Grid<S>& d_prev, int num_samples, double delta, int w_stage,
                           Grid<S>* d_min, Grid<S>* d_max) {
  if (num_samples < 2) throw ContractViolation("local range: need at least 2 samples");
  *d_min = Grid<S>(d_prev.h, d_prev.w, 1);
  *d_max = Grid<S>(d_prev.h, d_prev.w, 1);
  for (std::int64_t i = 0; i < d_prev.size(); ++i) {
    d_min->v[i] = S(local_range_lo(double(d_prev.v[i]), num_samples, delta));
    d_max->v[i] = S(local_range_hi(double(d_prev.v[i]), num_samples, delta, w_stage));
  }
}

// Eq. 12: D evenly spaced samples; the last sample equals d_max exactly.
template <class S>
LocalSampleGrid<S> sample_disparities(const Grid<S>& d_min, const Grid<S>& d_max,
                                      int num_samples) {
  if (num_samples < 2) throw ContractViolation("sample_disparities: D=1 divides by zero (Eq. 11)");
  LocalSampleGrid<S> g;
  g.num_samples = num_samples;
  g.d_min = d_min;
  g.d_max = d_max;
  g.interval = Grid<S>(d_min.h, d_min.w, 1);
  g.samples = Grid<S>(d_min.h, d_min.w, num_samples);
  for (int y = 0; y < d_min.h; ++y)
    for (int x = 0; x < d_min.w; ++x) {
      const double lo = double(d_min.at(y, x));
      const double hi = double(d_max.at(y, x));
      const double dd = local_sample_interval(lo, hi, num_samples);
      g.interval.at(y, x) = S(dd);
      for (int n = 0; n < num_samples; ++n)
        g.samples.at(y, x, n) = n + 1 == num_samples ? S(hi) : S(lo + n * dd);
    }
  return g;
}

template <class S>
void init_rt_params(nn::ParamStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
  const auto& rt = cfg.rt;
  nn::init_conv(ps, "rt.reg16", 3, 3, rt.s16.num_samples, rt.s16.num_samples, rng);
  const int cond_in = (2 * rt.lookup_radius + 1) + 3;  // [G_loc, F, D, D_M]
  nn::init_conv(ps, "rt.eng", 3, 3, cond_in, rt.eng_channels, rng);
  init_gru_params(ps, "rt", rt.hidden_channels, rt.eng_channels, rt.dec_channels, rng);
  nn::init_conv(ps, "rt.ctx", 1, 1, cfg.pyramid_channels, 3 * rt.hidden_channels, rng);
}

template <class S>
void init_rt_model_params(nn::ParamStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
  init_backbone_params(ps, cfg, rng);
  init_rt_params(ps, cfg, rng);
}

template <class S>
struct RtForward {
  PadInfo pad;
  std::vector<Var> update_history_full;  // one entry per GRU update (all stages)
  Var d_full = -1;
  align::AffineAlignment<float> alignment;
  bool alignment_degenerate = false;
  double mean_clamp_rate = 0;
};

// Cascaded coarse-to-fine driver: a full (small) candidate set at 1/16, then
// per-pixel local volumes at 1/8 and 1/4 centered on the upsampled previous
// estimate. One shared single-layer ConvGRU refines every stage; the aligned
// monocular disparity joins each stage's condition.
template <class S>
RtForward<S> rt_forward(nn::Tape<S>& t, nn::ParamStore<S>& ps, const ModelConfig& cfg,
                        const Grid<S>& left, const Grid<S>& right,
                        const Grid<S>& prior_inv_depth) {
  const auto& rt = cfg.rt;
  RtForward<S> fwd;
  const Grid<S> left_p = pad_to_multiple(left, 32, &fwd.pad);
  const Grid<S> right_p = pad_to_multiple(right, 32);
  Var left_img = t.constant(left_p);
  Var right_img = t.constant(right_p);
  const auto pyr_l = extract_pyramid(t, ps, cfg, left_img);
  const auto pyr_r = extract_pyramid(t, ps, cfg, right_img);
  const Grid<S> prior_p = pad_to_multiple(prior_inv_depth, 32);

  const S sentinel = S(cfg.flow_oob_sentinel);
  double clamp_acc = 0;
  int clamp_n = 0;

  // ---- stage 1/16: full candidate set
  Var fl = pyr_l.f[1];
  Var fr = pyr_r.f[1];
  const int w16 = t.val(fl).w;
  Var vol16 = nn::corr_volume(t, fl, fr, rt.s16.num_samples);
  {
    Grid<S> valid16(t.val(vol16).h, t.val(vol16).w, rt.s16.num_samples);
    for (int y = 0; y < valid16.h; ++y)
      for (int x = 0; x < valid16.w; ++x)
        for (int d = 0; d < valid16.c; ++d) valid16.at(y, x, d) = d <= x ? S(1) : S(0);
    Var floored = nn::clamp_op(t, vol16, kLookupFloor<S>, S(1e30));
    Var smoothed = nn::conv2d(t, floored, t.param(ps, "rt.reg16.w"), t.param(ps, "rt.reg16.b"), 3,
                              3, 1);
    vol16 = nn::blend_mask(t, smoothed, valid16, nn::kOobScore<S>);
  }
  Regression reg16 = soft_argmin(t, vol16);
  Var d = reg16.disparity;

  // one global alignment at the coarsest stage; rescaled per stage below
  align::AffineAlignment<S> a;
  {
    const Grid<S> prior16 = stride_sample(prior_p, 16);
    try {
      const auto mask = align::percentile_mask<S>(t.val(d), nullptr, 0.20, 0.90);
      a = align::solve_global_scale_shift(prior16, t.val(d), mask.mask);
    } catch (const DegenerateFitError& e) {
      a.scale = S(e.fallback_scale);
      a.shift = S(e.fallback_shift);
      fwd.alignment_degenerate = true;
    }
    fwd.alignment.scale = float(a.scale);
    fwd.alignment.shift = float(a.shift);
  }

  struct StageSpec {
    CascadeStageConfig cfg;
    int pyr_level;
    int scale;
  };
  const StageSpec stages[3] = {{rt.s16, 1, 16}, {rt.s8, 2, 8}, {rt.s4, 3, 4}};

  for (int si = 0; si < 3; ++si) {
    const StageSpec& st = stages[si];
    fl = pyr_l.f[st.pyr_level];
    fr = pyr_r.f[st.pyr_level];
    const int w_stage = t.val(fl).w;
    Var vol = -1;          // per-stage score slab
    Grid<S> idx_sub;       // maps disparity to slab index: (d - d_min) / interval
    Grid<S> idx_mul;
    bool fractional = false;

    if (si == 0) {
      vol = vol16;
      idx_sub = Grid<S>(t.val(d).h, t.val(d).w, 1);               // identity mapping
      idx_mul = Grid<S>::constant(t.val(d).h, t.val(d).w, 1, S(1));
    } else {
      // upsample previous stage estimate (x2 spatial, x2 values), cut the
      // gradient at the stage boundary
      d = nn::stop_grad(t, nn::upsample(t, d, 2, S(2)));
      Grid<S> d_prev = t.val(d);
      LocalSampleGrid<S> grid;
      if (rt.full_volumes) {
        Grid<S> lo(d_prev.h, d_prev.w, 1);
        Grid<S> hi = Grid<S>::constant(d_prev.h, d_prev.w, 1, S(w_stage));
        const int n_full = w_stage >= 2 ? std::min(w_stage, 4 * st.cfg.num_samples) : 2;
        grid = sample_disparities(lo, hi, n_full);
      } else {
        Grid<S> lo, hi;
        local_disparity_range(d_prev, st.cfg.num_samples, st.cfg.delta, w_stage, &lo, &hi);
        grid = sample_disparities(lo, hi, st.cfg.num_samples);
      }
      vol = nn::local_corr(t, fl, fr, grid.samples);
      // regression is the expectation over the per-pixel candidate positions
      d = nn::expect_grid(t, nn::softmax_c(t, vol), grid.samples);
      idx_sub = grid.d_min;
      idx_mul = Grid<S>(grid.interval.h, grid.interval.w, 1);
      for (std::int64_t i = 0; i < idx_mul.size(); ++i)
        idx_mul.v[i] = grid.interval.v[i] > S(1e-8) ? S(1) / grid.interval.v[i] : S(0);
      fractional = true;
    }
    (void)fractional;

    Var vol_floored = nn::clamp_op(t, vol, kLookupFloor<S>, S(1e30));
    ContextTriple ctx = [&] {
      Var all = nn::conv2d(t, fl, t.param(ps, "rt.ctx.w"), t.param(ps, "rt.ctx.b"), 1, 1, 1);
      ContextTriple c;
      c.cz = nn::slice_c(t, all, 0, rt.hidden_channels);
      c.cr = nn::slice_c(t, all, rt.hidden_channels, rt.hidden_channels);
      c.ch = nn::slice_c(t, all, 2 * rt.hidden_channels, rt.hidden_channels);
      return c;
    }();

    // stage-resolution aligned monocular disparity: values scale by 16/scale
    Grid<S> prior_stage = stride_sample(prior_p, st.scale);
    const S unit = S(16.0 / double(st.scale));
    Grid<S> mono_stage(prior_stage.h, prior_stage.w, 1);
    for (std::int64_t i = 0; i < mono_stage.size(); ++i)
      mono_stage.v[i] =
          std::clamp(unit * (a.scale * prior_stage.v[i] + a.shift), S(0), S(w_stage));
    Var mono = t.constant(mono_stage);

    Var h = t.constant(Grid<S>(t.val(d).h, t.val(d).w, rt.hidden_channels));
    for (int u = 0; u < st.cfg.gru_updates; ++u) {
      Grid<S> neg_sub = idx_sub;
      neg_sub.v = -neg_sub.v;
      Var idx = nn::cmul_const(t, nn::cadd_const(t, d, neg_sub), idx_mul);
      Var g_loc = nn::lookup_linear_c(t, vol_floored, idx, rt.lookup_radius);
      Var f_res = flow_residual(t, fl, fr, d, sentinel);
      Var x = nn::relu(t, nn::conv2d(t, nn::concat_c(t, {g_loc, f_res, d, mono}),
                                     t.param(ps, "rt.eng.w"), t.param(ps, "rt.eng.b"), 3, 3, 1));
      h = gru_cell(t, ps, "rt", h, x, ctx);
      Var delta = decode_residual(t, ps, "rt", h);
      double clamped = 0;
      d = nn::clamp_op(t, nn::add(t, d, delta), S(0), S(w_stage), &clamped);
      clamp_acc += clamped;
      ++clamp_n;
      fwd.update_history_full.push_back(
          nn::crop(t, nn::upsample(t, d, st.scale, S(st.scale)), fwd.pad.orig_h,
                   fwd.pad.orig_w));
    }
  }

  fwd.d_full = fwd.update_history_full.back();
  fwd.mean_clamp_rate = clamp_n ? clamp_acc / clamp_n : 0;
  return fwd;
}

template <class S>
Grid<S> infer_rt(nn::ParamStore<S>& ps, const ModelConfig& cfg, const Grid<S>& left,
                 const Grid<S>& right, const Grid<S>& prior_inv_depth,
                 InferStats* stats = nullptr) {
  nn::Tape<S> t;
  const auto fwd = rt_forward(t, ps, cfg, left, right, prior_inv_depth);
  if (stats) {
    stats->clamp_rate = fwd.mean_clamp_rate;
    stats->alignment_scale = fwd.alignment.scale;
    stats->alignment_shift = fwd.alignment.shift;
    stats->alignment_degenerate = fwd.alignment_degenerate;
  }
  return t.val(fwd.d_full);
}

}  // namespace duodepth::model
