#pragma once

#include <functional>
#include <vector>

#include "duodepth/align/alignment.hpp"
#include "duodepth/model/costvolume.hpp"

namespace duodepth::model {

// Channel-wise L1 between left features and right features sampled at x - d.
// Off-image samples produce sentinel_per_channel * C (low confidence).
template <class S>
Var flow_residual(nn::Tape<S>& t, Var f3_left, Var f3_right, Var disp, S sentinel_per_channel) {
  Grid<S> valid;
  Var sampled = nn::sample_x(t, f3_right, disp, &valid);
  Var l1 = nn::sum_c(t, nn::abs_op(t, nn::sub(t, f3_left, sampled)));
  const S sentinel = sentinel_per_channel * S(t.val(f3_left).c);
  return nn::blend_mask(t, l1, valid, sentinel);
}

template <class S>
void init_gru_params(nn::ParamStore<S>& ps, const std::string& prefix, int hidden, int cond,
                     int dec_mid, Rng& rng) {
  nn::init_conv(ps, prefix + ".gru.z", 3, 3, hidden + cond, hidden, rng);
  nn::init_conv(ps, prefix + ".gru.r", 3, 3, hidden + cond, hidden, rng);
  nn::init_conv(ps, prefix + ".gru.h", 3, 3, hidden + cond, hidden, rng);
  nn::init_conv(ps, prefix + ".dec1", 3, 3, hidden, dec_mid, rng);
  nn::init_conv(ps, prefix + ".dec2", 3, 3, dec_mid, 1, rng);
}

// Condition-guided ConvGRU update:
//   z = sigmoid(Conv([h, x], Wz) + cz)
//   r = sigmoid(Conv([h, x], Wr) + cr)
//   h~ = tanh(Conv([r .* h, x], Wh) + ch)
//   h' = (1 - z) .* h + z .* h~
template <class S>
Var gru_cell(nn::Tape<S>& t, nn::ParamStore<S>& ps, const std::string& prefix, Var h_prev, Var x,
             const ContextTriple& ctx) {
  auto gate_conv = [&](const std::string& gate, Var input) {
    Var w = t.param(ps, prefix + ".gru." + gate + ".w");
    Var b = t.param(ps, prefix + ".gru." + gate + ".b");
    return nn::conv2d(t, input, w, b, 3, 3, 1);
  };
  Var hx = nn::concat_c(t, {h_prev, x});
  Var z = nn::sigmoid(t, nn::add(t, gate_conv("z", hx), ctx.cz));
  Var r = nn::sigmoid(t, nn::add(t, gate_conv("r", hx), ctx.cr));
  Var rhx = nn::concat_c(t, {nn::mul(t, r, h_prev), x});
  Var h_tilde = nn::tanh_op(t, nn::add(t, gate_conv("h", rhx), ctx.ch));
  Var keep = nn::add_scalar(t, nn::scale(t, z, S(-1)), S(1));  // 1 - z
  return nn::add(t, nn::mul(t, keep, h_prev), nn::mul(t, z, h_tilde));
}

// Two convolution layers decoding the hidden state into a single-channel
// residual (delta-shift for the mono branch, delta-disparity for stereo).
template <class S>
Var decode_residual(nn::Tape<S>& t, nn::ParamStore<S>& ps, const std::string& prefix, Var h) {
  Var mid = nn::relu(t, nn::conv2d(t, h, t.param(ps, prefix + ".dec1.w"),
                                   t.param(ps, prefix + ".dec1.b"), 3, 3, 1));
  return nn::conv2d(t, mid, t.param(ps, prefix + ".dec2.w"), t.param(ps, prefix + ".dec2.b"), 3,
                    3, 1);
}

template <class S>
Var encode_geom(nn::Tape<S>& t, nn::ParamStore<S>& ps, const std::string& prefix, Var g, Var f,
                Var d) {
  Var cat = nn::concat_c(t, {g, f, d});
  return nn::relu(t, nn::conv2d(t, cat, t.param(ps, prefix + ".eng.w"),
                                t.param(ps, prefix + ".eng.b"), 3, 3, 1));
}

template <class S>
Var encode_disp(nn::Tape<S>& t, nn::ParamStore<S>& ps, const std::string& prefix, Var d) {
  return nn::relu(t, nn::conv2d(t, d, t.param(ps, prefix + ".end.w"),
                                t.param(ps, prefix + ".end.b"), 3, 3, 1));
}

// x_S = [En_g([G_S, F_S, D_S]), En_d(D_M), D_M]
template <class S>
Var stereo_condition(nn::Tape<S>& t, nn::ParamStore<S>& ps, Var g_s, Var f_s, Var d_s, Var d_m) {
  Var enc_g = encode_geom(t, ps, "sga", g_s, f_s, d_s);
  Var enc_d = encode_disp(t, ps, "sga", d_m);
  return nn::concat_c(t, {enc_g, enc_d, d_m});
}

// x_M = [En_g([G_M, F_M, D_M]), En_d(D_M), D_M, En_g([G_S, F_S, D_S]), En_d(D_S), D_S]
// with the two En_g (and En_d) applications sharing one set of weights.
template <class S>
Var mono_condition(nn::Tape<S>& t, nn::ParamStore<S>& ps, Var g_m, Var f_m, Var d_m, Var g_s,
                   Var f_s, Var d_s) {
  Var enc_gm = encode_geom(t, ps, "mgr", g_m, f_m, d_m);
  Var enc_dm = encode_disp(t, ps, "mgr", d_m);
  Var enc_gs = encode_geom(t, ps, "mgr", g_s, f_s, d_s);
  Var enc_ds = encode_disp(t, ps, "mgr", d_s);
  return nn::concat_c(t, {enc_gm, enc_dm, d_m, enc_gs, enc_ds, d_s});
}

// One branch of matching evidence feeding the refinement loop: how to compute
// the per-step confidence residual, where to look up geometry features, and
// the working range of the refined field.
template <class S>
struct BranchIO {
  std::function<Var(nn::Tape<S>&, Var)> residual;  // disparity -> confidence map
  std::vector<Var> vol_pyramid;
  S clamp_max = 0;
  int lookup_radius = 4;
  // disparities scale x4 when upsampled to full resolution; depth-bin indices
  // do not
  S upsample_value_scale = S(4);
};

template <class S>
struct RefineState {
  Var d_s = -1, d_m = -1;
  Var h_s = -1, h_m = -1;
  int j = 0;
};

struct StepStats {
  double clamp_rate = 0;
  double lookup_clamped = 0;
};

// Stereo-phase update (standard recurrent refinement, no monocular input).
template <class S>
RefineState<S> sp_step(nn::Tape<S>& t, nn::ParamStore<S>& ps, const BranchIO<S>& io,
                       const RefineState<S>& in, const ContextTriple& ctx, StepStats* stats) {
  RefineState<S> out = in;
  Var f_s = io.residual(t, in.d_s);
  double look = 0;
  Var g_s = lookup_geometry_features(t, io.vol_pyramid, in.d_s, io.lookup_radius, &look);
  Var x = encode_geom(t, ps, "sp", g_s, f_s, in.d_s);
  out.h_s = gru_cell(t, ps, "sp", in.h_s, x, ctx);
  Var delta = decode_residual(t, ps, "sp", out.h_s);
  double clamped = 0;
  out.d_s = nn::clamp_op(t, nn::add(t, in.d_s, delta), S(0), io.clamp_max, &clamped);
  out.j = in.j + 1;
  if (stats) {
    stats->clamp_rate = clamped;
    stats->lookup_clamped = look;
  }
  return out;
}

// SGA: stereo cues correct the per-pixel shift of the monocular disparity.
// Touches only (h_m, d_m).
template <class S>
RefineState<S> sga_step(nn::Tape<S>& t, nn::ParamStore<S>& ps, const BranchIO<S>& io,
                        const RefineState<S>& in, const ContextTriple& ctx, StepStats* stats) {
  RefineState<S> out = in;
  Var f_s = io.residual(t, in.d_s);
  double look = 0;
  Var g_s = lookup_geometry_features(t, io.vol_pyramid, in.d_s, io.lookup_radius, &look);
  Var x_s = stereo_condition(t, ps, g_s, f_s, in.d_s, in.d_m);
  out.h_m = gru_cell(t, ps, "sga", in.h_m, x_s, ctx);
  Var delta_shift = decode_residual(t, ps, "sga", out.h_m);
  double clamped = 0;
  out.d_m = nn::clamp_op(t, nn::add(t, in.d_m, delta_shift), S(0), io.clamp_max, &clamped);
  out.j = in.j + 1;
  if (stats) {
    stats->clamp_rate = clamped;
    stats->lookup_clamped = look;
  }
  return out;
}

// MGR: the aligned monocular disparity guides the stereo update in regions
// where matching fails. Touches only (h_s, d_s).
template <class S>
RefineState<S> mgr_step(nn::Tape<S>& t, nn::ParamStore<S>& ps, const BranchIO<S>& io,
                        const RefineState<S>& in, const ContextTriple& ctx, StepStats* stats) {
  RefineState<S> out = in;
  Var f_m = io.residual(t, in.d_m);
  Var f_s = io.residual(t, in.d_s);
  double look_m = 0, look_s = 0;
  Var g_m = lookup_geometry_features(t, io.vol_pyramid, in.d_m, io.lookup_radius, &look_m);
  Var g_s = lookup_geometry_features(t, io.vol_pyramid, in.d_s, io.lookup_radius, &look_s);
  Var x_m = mono_condition(t, ps, g_m, f_m, in.d_m, g_s, f_s, in.d_s);
  out.h_s = gru_cell(t, ps, "mgr", in.h_s, x_m, ctx);
  Var delta_d = decode_residual(t, ps, "mgr", out.h_s);
  double clamped = 0;
  out.d_s = nn::clamp_op(t, nn::add(t, in.d_s, delta_d), S(0), io.clamp_max, &clamped);
  out.j = in.j + 1;
  if (stats) {
    stats->clamp_rate = clamped;
    stats->lookup_clamped = (look_m + look_s) / 2;
  }
  return out;
}

template <class S>
void init_refine_params(nn::ParamStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
  const int geom_in = (2 * cfg.lookup_radius + 1) * cfg.lookup_levels + 2;  // [G, F, D]
  nn::init_conv(ps, "sp.eng", 3, 3, geom_in, cfg.eng_channels, rng);
  init_gru_params(ps, "sp", cfg.hidden_channels, cfg.eng_channels, cfg.dec_channels, rng);

  nn::init_conv(ps, "sga.eng", 3, 3, geom_in, cfg.eng_channels, rng);
  nn::init_conv(ps, "sga.end", 3, 3, 1, cfg.end_channels, rng);
  const int x_s_ch = cfg.eng_channels + cfg.end_channels + 1;
  init_gru_params(ps, "sga", cfg.hidden_channels, x_s_ch, cfg.dec_channels, rng);

  nn::init_conv(ps, "mgr.eng", 3, 3, geom_in, cfg.eng_channels, rng);
  nn::init_conv(ps, "mgr.end", 3, 3, 1, cfg.end_channels, rng);
  const int x_m_ch = 2 * x_s_ch;
  init_gru_params(ps, "mgr", cfg.hidden_channels, x_m_ch, cfg.dec_channels, rng);

  if (cfg.conv_fusion) {
    nn::init_conv(ps, "fus.c1", 3, 3, 2 + cfg.context_channels, 32, rng);
    nn::init_conv(ps, "fus.c2", 3, 3, 32, 32, rng);
    nn::init_conv(ps, "fus.c3", 3, 3, 32, 16, rng);
    nn::init_conv(ps, "fus.c4", 3, 3, 16, 1, rng);
  }
}

// Hourglass concat-fusion stand-in for MGR (ablation arm): directly decodes a
// stereo residual from the concatenated disparities and context.
template <class S>
Var conv_fusion_residual(nn::Tape<S>& t, nn::ParamStore<S>& ps, Var d_s, Var d_m, Var ctx_trunk) {
  Var x = nn::concat_c(t, {d_s, d_m, ctx_trunk});
  Var a = nn::relu(t, nn::conv2d(t, x, t.param(ps, "fus.c1.w"), t.param(ps, "fus.c1.b"), 3, 3, 2));
  Var b = nn::relu(t, nn::conv2d(t, a, t.param(ps, "fus.c2.w"), t.param(ps, "fus.c2.b"), 3, 3, 1));
  Var c = nn::relu(t, nn::conv2d(t, nn::upsample(t, b, 2, S(1)), t.param(ps, "fus.c3.w"),
                                 t.param(ps, "fus.c3.b"), 3, 3, 1));
  Var out = nn::conv2d(t, c, t.param(ps, "fus.c4.w"), t.param(ps, "fus.c4.b"), 3, 3, 1);
  // stride-2 + upsample can land one row/col short on odd dims; crop to match
  return nn::crop(t, out, t.val(d_s).h, t.val(d_s).w);
}

template <class S>
struct RefinementResult {
  Var d_s_full = -1;                     // final stereo disparity, full resolution
  std::vector<Var> stereo_history_full;  // per-update outputs, full resolution
  std::vector<Var> mono_history_full;    // SGA outputs, full resolution
  Var d_s_quarter = -1, d_m_quarter = -1;
  align::AffineAlignment<float> alignment;
  bool alignment_degenerate = false;
  double mean_clamp_rate = 0;
  double mean_lookup_clamped = 0;
};

// Full dual-branch driver: n1 stereo-phase updates, one global scale-shift
// alignment, then n2 rounds of (SGA; MGR). Ablation switches reshape the
// schedule but keep the stereo update count at n1 + n2 so arms stay
// comparable under equal seeds/steps.
template <class S>
RefinementResult<S> run_refinement(nn::Tape<S>& t, nn::ParamStore<S>& ps, const ModelConfig& cfg,
                                   const BranchIO<S>& io, Var d_init, Var prior_inv,
                                   Var ctx_trunk, int out_h, int out_w) {
  if (cfg.n1 < 1 || cfg.n2 < 0) throw ContractViolation("run_refinement: need n1 >= 1, n2 >= 0");
  const Grid<S>& d0 = t.val(d_init);
  RefinementResult<S> res;
  const bool use_sga = !cfg.no_sga && !cfg.conv_fusion;
  const bool use_mgr = !cfg.no_mgr && !cfg.conv_fusion;
  const bool use_mono = use_sga || use_mgr || cfg.conv_fusion;

  ContextTriple ctx_sp = context_head(t, ps, "sp", ctx_trunk, cfg.hidden_channels);
  ContextTriple ctx_sga, ctx_mgr;
  if (use_sga) ctx_sga = context_head(t, ps, "sga", ctx_trunk, cfg.hidden_channels);
  if (use_mgr) ctx_mgr = context_head(t, ps, "mgr", ctx_trunk, cfg.hidden_channels);

  RefineState<S> state;
  state.d_s = d_init;
  state.h_s = t.constant(Grid<S>(d0.h, d0.w, cfg.hidden_channels));
  state.h_m = t.constant(Grid<S>(d0.h, d0.w, cfg.hidden_channels));
  state.d_m = t.constant(Grid<S>(d0.h, d0.w, 1));

  std::vector<StepStats> stats;
  auto record_stereo = [&](Var d_q) {
    res.stereo_history_full.push_back(
        nn::crop(t, nn::upsample(t, d_q, 4, io.upsample_value_scale), out_h, out_w));
  };
  auto record_mono = [&](Var d_q) {
    res.mono_history_full.push_back(
        nn::crop(t, nn::upsample(t, d_q, 4, io.upsample_value_scale), out_h, out_w));
  };

  // phase 1: stereo-only recurrent refinement
  const int phase1 = (use_mgr || cfg.conv_fusion) ? cfg.n1 : cfg.n1 + cfg.n2;
  for (int i = 0; i < phase1; ++i) {
    StepStats st;
    state = sp_step(t, ps, io, state, ctx_sp, &st);
    stats.push_back(st);
    record_stereo(state.d_s);
  }

  // global scale-shift alignment (once, before the dual rounds)
  if (use_mono) {
    const Grid<S>& ds_val = t.val(state.d_s);
    const Grid<S>& pm_val = t.val(prior_inv);
    align::AffineAlignment<S> a;
    try {
      const auto mask = align::percentile_mask<S>(ds_val, nullptr, 0.20, 0.90);
      a = align::solve_global_scale_shift(pm_val, ds_val, mask.mask);
    } catch (const DegenerateFitError& e) {
      a.scale = S(e.fallback_scale);
      a.shift = S(e.fallback_shift);
      res.alignment_degenerate = true;
    }
    res.alignment.scale = float(a.scale);
    res.alignment.shift = float(a.shift);
    state.d_m = nn::clamp_op(
        t, nn::add_scalar(t, nn::scale(t, prior_inv, a.scale), a.shift), S(0), io.clamp_max);
  }

  // phase 2: dual-branched rounds
  for (int j = 0; j < cfg.n2 && (use_sga || use_mgr || cfg.conv_fusion); ++j) {
    if (use_sga) {
      StepStats st;
      state = sga_step(t, ps, io, state, ctx_sga, &st);
      stats.push_back(st);
      record_mono(state.d_m);
    }
    if (use_mgr) {
      StepStats st;
      state = mgr_step(t, ps, io, state, ctx_mgr, &st);
      stats.push_back(st);
      record_stereo(state.d_s);
    } else if (cfg.conv_fusion) {
      Var delta = conv_fusion_residual(t, ps, state.d_s, state.d_m, ctx_trunk);
      double clamped = 0;
      state.d_s = nn::clamp_op(t, nn::add(t, state.d_s, delta), S(0), io.clamp_max, &clamped);
      stats.push_back(StepStats{clamped, 0});
      record_stereo(state.d_s);
    }
  }

  res.d_s_quarter = state.d_s;
  res.d_m_quarter = state.d_m;
  res.d_s_full = res.stereo_history_full.back();
  for (const auto& st : stats) {
    res.mean_clamp_rate += st.clamp_rate / double(stats.size());
    res.mean_lookup_clamped += st.lookup_clamped / double(stats.size());
  }
  return res;
}

}  // namespace duodepth::model
