#pragma once

#include <array>

#include "duodepth/model/config.hpp"
#include "duodepth/nn/ops.hpp"

namespace duodepth::model {

using nn::Var;

struct PadInfo {
  int orig_h = 0, orig_w = 0;
  int padded_h = 0, padded_w = 0;
};

// Replication padding on the right/bottom up to the next multiple of m.
template <class S>
Grid<S> pad_to_multiple(const Grid<S>& img, int m, PadInfo* info = nullptr) {
  const int ph = (img.h + m - 1) / m * m;
  const int pw = (img.w + m - 1) / m * m;
  if (info) *info = PadInfo{img.h, img.w, ph, pw};
  if (ph == img.h && pw == img.w) return img;
  Grid<S> out(ph, pw, img.c);
  for (int y = 0; y < ph; ++y) {
    const int sy = std::min(y, img.h - 1);
    for (int x = 0; x < pw; ++x) {
      const int sx = std::min(x, img.w - 1);
      for (int c = 0; c < img.c; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

template <class S>
Grid<S> unpad(const Grid<S>& img, const PadInfo& info) {
  if (img.h == info.orig_h && img.w == info.orig_w) return img;
  Grid<S> out(info.orig_h, info.orig_w, img.c);
  for (int y = 0; y < info.orig_h; ++y)
    for (int x = 0; x < info.orig_w; ++x)
      for (int c = 0; c < img.c; ++c) out.at(y, x, c) = img.at(y, x, c);
  return out;
}

template <class S>
struct FeaturePyramid {
  // f[k] lives at 1/2^(5-k): f0 = 1/32 ... f3 = 1/4
  std::array<Var, 4> f{-1, -1, -1, -1};
  Var trunk = -1;  // shared 1/4 feature the transfer network consumed
};

namespace detail {

template <class S>
Var conv_block(nn::Tape<S>& t, nn::ParamStore<S>& ps, const std::string& name, Var x, int kh,
               int kw, int stride, bool act = true) {
  Var w = t.param(ps, name + ".w");
  Var b = t.param(ps, name + ".b");
  Var y = nn::conv2d(t, x, w, b, kh, kw, stride);
  return act ? nn::relu(t, y) : y;
}

}  // namespace detail

// Registers every encoder/transfer/context parameter. Weight keys follow the
// "<module>.<layer>.{w,b}" scheme documented in the README.
template <class S>
void init_backbone_params(nn::ParamStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
  const auto& ew = cfg.encoder_widths;
  nn::init_conv(ps, "enc.stem", 3, 3, 3, ew[0], rng);
  nn::init_conv(ps, "enc.s2", 3, 3, ew[0], ew[1], rng);
  nn::init_conv(ps, "enc.s3", 3, 3, ew[1], ew[2], rng);
  nn::init_conv(ps, "enc.s4", 3, 3, ew[2], ew[3], rng);
  nn::init_conv(ps, "enc.up8", 3, 3, ew[3] + ew[2], ew[2], rng);
  nn::init_conv(ps, "enc.up4", 3, 3, ew[2] + ew[1], cfg.trunk_channels, rng);
  nn::init_conv(ps, "transfer.f3", 3, 3, cfg.trunk_channels, cfg.pyramid_channels, rng);
  nn::init_conv(ps, "transfer.f2", 3, 3, cfg.pyramid_channels, cfg.pyramid_channels, rng);
  nn::init_conv(ps, "transfer.f1", 3, 3, cfg.pyramid_channels, cfg.pyramid_channels, rng);
  nn::init_conv(ps, "transfer.f0", 3, 3, cfg.pyramid_channels, cfg.pyramid_channels, rng);
  nn::init_conv(ps, "ctx.trunk", 3, 3, cfg.trunk_channels, cfg.context_channels, rng);
}

// Shared encoder: four stride-2 stages down to 1/16, fused back up to a
// single mid-resolution (1/4) trunk feature.
template <class S>
Var encoder_trunk(nn::Tape<S>& t, nn::ParamStore<S>& ps, const ModelConfig& cfg, Var image) {
  using detail::conv_block;
  Var s1 = conv_block(t, ps, "enc.stem", image, 3, 3, 2);  // 1/2
  Var s2 = conv_block(t, ps, "enc.s2", s1, 3, 3, 2);       // 1/4
  Var s3 = conv_block(t, ps, "enc.s3", s2, 3, 3, 2);       // 1/8
  Var s4 = conv_block(t, ps, "enc.s4", s3, 3, 3, 2);       // 1/16
  Var u8 = conv_block(t, ps, "enc.up8", nn::concat_c(t, {nn::upsample(t, s4, 2, S(1)), s3}), 3, 3,
                      1);
  return conv_block(t, ps, "enc.up4", nn::concat_c(t, {nn::upsample(t, u8, 2, S(1)), s2}), 3, 3,
                    1);
}

// Transfer network: trunk feature to the four-scale pyramid.
template <class S>
FeaturePyramid<S> extract_pyramid(nn::Tape<S>& t, nn::ParamStore<S>& ps, const ModelConfig& cfg,
                                  Var image) {
  const Grid<S>& img = t.val(image);
  if (img.h % 32 != 0 || img.w % 32 != 0)
    throw ContractViolation("extract_pyramid: image dims must be multiples of 32 (pad first)");
  using detail::conv_block;
  FeaturePyramid<S> pyr;
  pyr.trunk = encoder_trunk(t, ps, cfg, image);
  pyr.f[3] = conv_block(t, ps, "transfer.f3", pyr.trunk, 3, 3, 1, /*act=*/false);
  pyr.f[2] = conv_block(t, ps, "transfer.f2", pyr.f[3], 3, 3, 2, /*act=*/false);
  pyr.f[1] = conv_block(t, ps, "transfer.f1", pyr.f[2], 3, 3, 2, /*act=*/false);
  pyr.f[0] = conv_block(t, ps, "transfer.f0", pyr.f[1], 3, 3, 2, /*act=*/false);
  return pyr;
}

// Per-pixel bias features for one condition-guided GRU (Eq. 4 context terms).
struct ContextTriple {
  Var cz = -1, cr = -1, ch = -1;
};

template <class S>
void init_context_head(nn::ParamStore<S>& ps, const std::string& gru_name, const ModelConfig& cfg,
                       int hidden, Rng& rng) {
  nn::init_conv(ps, "ctx." + gru_name, 1, 1, cfg.context_channels, 3 * hidden, rng);
}

template <class S>
Var context_trunk(nn::Tape<S>& t, nn::ParamStore<S>& ps, Var image_trunk) {
  return detail::conv_block(t, ps, "ctx.trunk", image_trunk, 3, 3, 1);
}

template <class S>
ContextTriple context_head(nn::Tape<S>& t, nn::ParamStore<S>& ps, const std::string& gru_name,
                           Var ctx_trunk, int hidden) {
  Var all = detail::conv_block(t, ps, "ctx." + gru_name, ctx_trunk, 1, 1, 1, /*act=*/false);
  ContextTriple c;
  c.cz = nn::slice_c(t, all, 0, hidden);
  c.cr = nn::slice_c(t, all, hidden, hidden);
  c.ch = nn::slice_c(t, all, 2 * hidden, hidden);
  return c;
}

}  // namespace duodepth::model
