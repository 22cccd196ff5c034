#include <cstring>

#include "doctest.h"
#include "duodepth/align/alignment.hpp"
#include "duodepth/data/render.hpp"
#include "duodepth/model/pipeline.hpp"

using namespace duodepth;
using namespace duodepth::model;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.encoder_widths = {8, 12, 16, 20};
  cfg.trunk_channels = 16;
  cfg.pyramid_channels = 16;
  cfg.context_channels = 16;
  cfg.hidden_channels = 16;
  cfg.eng_channels = 12;
  cfg.end_channels = 4;
  cfg.dec_channels = 8;
  cfg.max_disp_quarter = 12;
  cfg.lookup_radius = 2;
  cfg.lookup_levels = 2;
  cfg.n1 = 1;
  cfg.n2 = 1;
  return cfg;
}

}  // namespace

TEST_CASE("pad_to_multiple: identity, 65x130 -> 96x160, fuzz round trip") {
  Grid<float> aligned(64, 128, 3);
  PadInfo info;
  const auto same = pad_to_multiple(aligned, 32, &info);
  CHECK(same.h == 64);
  CHECK(same.w == 128);

  Grid<float> odd(65, 130, 2);
  Rng rng(3);
  for (std::int64_t i = 0; i < odd.size(); ++i) odd.v[i] = float(rng.normal());
  const auto padded = pad_to_multiple(odd, 32, &info);
  CHECK(padded.h == 96);
  CHECK(padded.w == 160);
  // replication on the bottom/right
  CHECK(padded.at(95, 10, 0) == odd.at(64, 10, 0));
  CHECK(padded.at(10, 159, 1) == odd.at(10, 129, 1));
  const auto back = unpad(padded, info);
  CHECK(back.same_shape(odd));
  for (std::int64_t i = 0; i < odd.size(); ++i) CHECK(back.v[i] == odd.v[i]);

  for (int trial = 0; trial < 50; ++trial) {
    const int h = 33 + int(rng.bits() % 100);
    const int w = 33 + int(rng.bits() % 150);
    Grid<float> g(h, w, 1);
    for (std::int64_t i = 0; i < g.size(); ++i) g.v[i] = float(rng.normal());
    PadInfo pi;
    const auto p = pad_to_multiple(g, 32, &pi);
    CHECK(p.h % 32 == 0);
    CHECK(p.w % 32 == 0);
    const auto u = unpad(p, pi);
    bool equal = true;
    for (std::int64_t i = 0; i < g.size(); ++i) equal = equal && u.v[i] == g.v[i];
    CHECK(equal);
  }
}

TEST_CASE("pyramid: shape contract and zero/determinism properties") {
  const ModelConfig cfg = tiny_config();
  nn::ParamStore<float> ps;
  Rng rng(5);
  init_backbone_params(ps, cfg, rng);

  nn::Tape<float> t;
  Grid<float> zero_img(64, 128, 3);
  const auto pyr = extract_pyramid(t, ps, cfg, t.constant(zero_img));
  // zero image with zero-initialized biases: the whole pyramid is zero
  for (int k = 0; k < 4; ++k) {
    const auto& f = t.val(pyr.f[std::size_t(k)]);
    const int div = 1 << (5 - k);
    CHECK(f.h == 64 / div);
    CHECK(f.w == 128 / div);
    CHECK(f.c == cfg.pyramid_channels);
    CHECK(f.v.abs().maxCoeff() == 0.0f);
  }

  // identical inputs through shared weights give bitwise-identical features
  Grid<float> img(64, 128, 3);
  for (std::int64_t i = 0; i < img.size(); ++i) img.v[i] = float(rng.normal());
  nn::Tape<float> t2;
  const auto pl = extract_pyramid(t2, ps, cfg, t2.constant(img));
  const auto pr = extract_pyramid(t2, ps, cfg, t2.constant(img));
  for (int k = 0; k < 4; ++k)
    CHECK(std::memcmp(t2.val(pl.f[std::size_t(k)]).v.data(),
                      t2.val(pr.f[std::size_t(k)]).v.data(),
                      std::size_t(t2.val(pl.f[std::size_t(k)]).size()) * 4) == 0);

  // non-multiple dims are a caller bug
  nn::Tape<float> t3;
  CHECK_THROWS_AS(extract_pyramid(t3, ps, cfg, t3.constant(Grid<float>(60, 128, 3))),
                  ContractViolation);

  // shape contract over fuzzed padded sizes
  for (int trial = 0; trial < 8; ++trial) {
    const int h = 33 + int(rng.bits() % 64);
    const int w = 33 + int(rng.bits() % 96);
    const auto padded = pad_to_multiple(Grid<float>(h, w, 3), 32);
    nn::Tape<float> tf;
    const auto p = extract_pyramid(tf, ps, cfg, tf.constant(padded));
    for (int k = 0; k < 4; ++k) {
      const int div = 1 << (5 - k);
      CHECK(tf.val(p.f[std::size_t(k)]).h == padded.h / div);
      CHECK(tf.val(p.f[std::size_t(k)]).w == padded.w / div);
    }
  }
}

TEST_CASE("oracle prior aligned against gt disparity recovers the conversion algebra") {
  // inv = a/z + b and disparity = k/z, so disparity = (k/a) * inv - k*b/a
  data::SceneSpec spec;
  spec.seed = 77;
  spec.width = 128;
  spec.height = 64;
  auto& cam = spec.rig.intrinsics;
  cam.fx = 70.4;
  cam.fy = 70.4;
  cam.cx = 64;
  cam.cy = 32;
  cam.width = 128;
  cam.height = 64;
  spec.rig.baseline = 0.3;
  data::PriorParams prior;
  prior.a_min = prior.a_max = 1.4;
  prior.b_min = prior.b_max = 0.05;
  prior.noise_amp = 0.0;
  const auto s = data::render_stereo(spec, 0, prior);
  const double k = spec.rig.disparity_depth_product();

  Grid<double> inv = s.prior_inv_depth.cast<double>();
  Grid<double> disp = s.gt_disparity.cast<double>();
  Grid<double> mask = s.valid.cast<double>();
  const auto a = align::solve_global_scale_shift(inv, disp, mask);
  CHECK(std::abs(a.scale - k / s.prior_record.a) < 1e-6 * k);
  CHECK(std::abs(a.shift + k * s.prior_record.b / s.prior_record.a) < 1e-6 * k);
}

TEST_CASE("learned prior: zero head weights give a constant field") {
  ModelConfig cfg = tiny_config();
  cfg.prior_provider = "learned";
  nn::ParamStore<float> ps;
  Rng rng(9);
  init_backbone_params(ps, cfg, rng);
  init_learned_prior_params(ps, cfg, rng);
  ps.at("prior.out.w").value.setZero();
  ps.at("prior.out.b").value.setZero();

  nn::Tape<float> t;
  Grid<float> img(64, 128, 3);
  for (std::int64_t i = 0; i < img.size(); ++i) img.v[i] = float(rng.normal());
  Var image = t.constant(img);
  const auto pyr = extract_pyramid(t, ps, cfg, image);
  Var out = learned_prior_quarter(t, ps, cfg, image, pyr.trunk);
  const auto& o = t.val(out);
  CHECK(o.h == 16);
  CHECK(o.w == 32);
  CHECK(o.v.abs().maxCoeff() == 0.0f);
}
