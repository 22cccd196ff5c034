#pragma once

#include "duodepth/model/backbone.hpp"

namespace duodepth::model {

// Monocular relative inverse depth and where it came from. The oracle
// provider (data::corrupt_prior) arrives precomputed on the sample; the
// learned provider is a small head built here.
struct MonocularPriorMeta {
  std::string provider_id;
};

template <class S>
void init_learned_prior_params(nn::ParamStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
  if (cfg.no_feature_sharing) {
    nn::init_conv(ps, "prior.e1", 3, 3, 3, cfg.encoder_widths[0], rng);
    nn::init_conv(ps, "prior.e2", 3, 3, cfg.encoder_widths[0], cfg.trunk_channels, rng);
  }
  nn::init_conv(ps, "prior.head", 3, 3, cfg.trunk_channels, 16, rng);
  nn::init_conv(ps, "prior.out", 3, 3, 16, 1, rng);
}

// Learned provider: a head on the shared trunk (or on its own tiny encoder
// under no_feature_sharing). Output is non-negative relative inverse depth at
// 1/4 resolution.
template <class S>
Var learned_prior_quarter(nn::Tape<S>& t, nn::ParamStore<S>& ps, const ModelConfig& cfg,
                          Var left_image, Var shared_trunk) {
  Var trunk = shared_trunk;
  if (cfg.no_feature_sharing) {
    Var a = nn::relu(t, nn::conv2d(t, left_image, t.param(ps, "prior.e1.w"),
                                   t.param(ps, "prior.e1.b"), 3, 3, 2));
    trunk = nn::relu(t, nn::conv2d(t, a, t.param(ps, "prior.e2.w"), t.param(ps, "prior.e2.b"), 3,
                                   3, 2));
  }
  Var mid = nn::relu(t, nn::conv2d(t, trunk, t.param(ps, "prior.head.w"),
                                   t.param(ps, "prior.head.b"), 3, 3, 1));
  return nn::relu(
      t, nn::conv2d(t, mid, t.param(ps, "prior.out.w"), t.param(ps, "prior.out.b"), 3, 3, 1));
}

}  // namespace duodepth::model
