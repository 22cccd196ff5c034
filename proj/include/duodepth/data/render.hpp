#pragma once

#include <cstdint>
#include <vector>

#include "duodepth/data/ppm.hpp"
#include "duodepth/data/scene.hpp"
#include "duodepth/geometry/geometry.hpp"

namespace duodepth::data {

// Hidden affine corruption applied by the oracle prior provider; retained so
// tests can assert exact recovery.
struct CorruptionRecord {
  double a = 1.0, b = 0.0;
  double noise_rms = 0.0;
  std::int64_t clamp_count = 0;
};

struct PriorParams {
  double a_min = 0.6, a_max = 1.8;
  double b_min = 0.0, b_max = 0.15;
  double noise_amp = 0.0;    // RMS of the additive field, inverse-depth units
  double noise_scale = 16.0;  // lattice spacing in pixels
};

struct StereoSample {
  std::uint64_t id = 0;
  Image8 left, right;
  Grid<float> gt_disparity;   // left view, full resolution
  Grid<float> valid;          // 1 = usable for supervision/metrics
  Grid<float> textureless;    // 1 = flat-albedo surface
  Grid<float> prior_inv_depth;
  geo::StereoRig rig;
  CorruptionRecord prior_record;
};

struct MvsSample {
  std::uint64_t id = 0;
  std::vector<Image8> images;  // [0] = reference
  std::vector<geo::View> views;
  Grid<float> gt_depth;  // reference view
  Grid<float> valid;
  Grid<float> textureless;
  Grid<float> prior_inv_depth;
  geo::DepthBinSpec bins;
  CorruptionRecord prior_record;
};

struct ViewRender {
  Image8 image;
  Grid<float> depth;
  Grid<int> prim;
};

// Per-pixel analytic ray casting against the scene; depth is camera-frame z.
ViewRender render_view(const Scene& scene, const geo::View& view);

StereoSample render_stereo(const SceneSpec& spec, std::uint64_t sample_id,
                           const PriorParams& prior);
MvsSample render_mvs(const SceneSpec& spec, std::uint64_t sample_id, const PriorParams& prior);

// inv_depth = a / depth + b + band-limited noise; the record keeps the hidden
// parameters. Noise RMS is normalized to `noise_amp` exactly (before the
// non-negativity clamp).
Grid<float> corrupt_prior(const Grid<float>& gt_depth, const PriorParams& params, Rng& rng,
                          CorruptionRecord* record);

}  // namespace duodepth::data
