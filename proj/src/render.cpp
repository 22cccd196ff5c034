#include "duodepth/data/render.hpp"

#include <algorithm>
#include <cmath>

namespace duodepth::data {
namespace {

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Lattice value in [-1, 1], stable in (i, j, seed).
double lattice(std::int64_t i, std::int64_t j, std::uint64_t seed) {
  const std::uint64_t z =
      mix64(seed ^ (0x9e3779b97f4a7c15ULL * std::uint64_t(i + 0x10000) +
                    0xc2b2ae3d27d4eb4fULL * std::uint64_t(j + 0x10000)));
  return double(z >> 11) * 0x1.0p-52 - 1.0;
}

// C2 interpolation keeps the rendered pattern curvature small enough for the
// sub-pixel warp consistency contract.
double quintic(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double value_noise(double u, double v, std::uint64_t seed) {
  const double fu = std::floor(u), fv = std::floor(v);
  const std::int64_t i = std::int64_t(fu), j = std::int64_t(fv);
  const double su = quintic(u - fu), sv = quintic(v - fv);
  const double a = lattice(i, j, seed), b = lattice(i + 1, j, seed);
  const double c = lattice(i, j + 1, seed), d = lattice(i + 1, j + 1, seed);
  const double top = a + (b - a) * su;
  const double bot = c + (d - c) * su;
  return top + (bot - top) * sv;
}

}  // namespace

double Texture::pattern(double u, double v) const {
  switch (kind) {
    case Kind::Flat:
      return 0.0;
    case Kind::Smooth: {
      const double s1 = value_noise(u / cell, v / cell, seed);
      const double s2 = value_noise(u * 2.6 / cell + 17.31, v * 2.6 / cell + 9.17, seed ^ 0x5bd1);
      return 0.8 * s1 + 0.22 * s2;
    }
    case Kind::Checker: {
      const double cu = std::tanh(std::sin(2.0 * M_PI * u / cell) / soft);
      const double cv = std::tanh(std::sin(2.0 * M_PI * v / cell) / soft);
      return cu * cv;
    }
  }
  return 0.0;
}

bool Rect::intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                     RayHit* hit) const {
  const Eigen::Vector3d n = normal();
  const double denom = dir.dot(n);
  if (std::abs(denom) < 1e-12) return false;
  const double t = (p0 - origin).dot(n) / denom;
  if (t <= 1e-9) return false;
  const Eigen::Vector3d q = origin + t * dir - p0;
  const double a = q.dot(e1);
  const double b = q.dot(e2);
  if (a < 0 || a > len1 || b < 0 || b > len2) return false;
  hit->t = t;
  hit->u = a;
  hit->v = b;
  return true;
}

bool Box::intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                    RayHit* hit) const {
  double tmin = 1e-9, tmax = 1e30;
  int axis = -1;
  for (int k = 0; k < 3; ++k) {
    const double lo = center[k] - half[k], hi = center[k] + half[k];
    if (std::abs(dir[k]) < 1e-12) {
      if (origin[k] < lo || origin[k] > hi) return false;
      continue;
    }
    double t0 = (lo - origin[k]) / dir[k];
    double t1 = (hi - origin[k]) / dir[k];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > tmin) {
      tmin = t0;
      axis = k;
    }
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return false;
  }
  if (axis < 0) return false;  // origin inside the box: not a valid view
  const Eigen::Vector3d q = origin + tmin * dir - center;
  const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
  hit->t = tmin;
  hit->u = q[ua];
  hit->v = q[va];
  return true;
}

std::optional<RayHit> Scene::trace(const Eigen::Vector3d& origin,
                                   const Eigen::Vector3d& dir) const {
  RayHit best;
  best.t = 1e30;
  RayHit h;
  for (std::size_t i = 0; i < rects.size(); ++i) {
    if (rects[i].intersect(origin, dir, &h) && h.t < best.t) {
      best = h;
      best.prim = int(i);
    }
  }
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (boxes[i].intersect(origin, dir, &h) && h.t < best.t) {
      best = h;
      best.prim = int(rects.size() + i);
    }
  }
  if (best.prim < 0) return std::nullopt;
  return best;
}

void SceneSpec::validate() const {
  rig.validate();
  if (width < 32 || height < 32) throw RangeError("scene: image too small");
  if (textureless_fraction < 0 || textureless_fraction > 1)
    throw RangeError("scene: textureless_fraction outside [0,1]");
  if (num_planes < 1) throw RangeError("scene: need at least one plane");
}

namespace {

Texture make_texture(Rng& rng, double depth, double fx, bool flat) {
  Texture t;
  t.seed = rng.bits();
  t.color = Eigen::Vector3d(rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0));
  if (flat) {
    t.kind = Texture::Kind::Flat;
    t.base = rng.uniform(70, 190);
    return t;
  }
  const double px_per_unit = fx / depth;  // image scale of the surface pattern
  if (rng.uniform() < 0.6) {
    t.kind = Texture::Kind::Smooth;
    t.base = rng.uniform(95, 160);
    t.amp = rng.uniform(42, 58);
    t.cell = rng.uniform(9.0, 14.0) / px_per_unit;
  } else {
    t.kind = Texture::Kind::Checker;
    t.base = rng.uniform(95, 160);
    t.amp = rng.uniform(36, 50);
    t.cell = rng.uniform(16.0, 26.0) / px_per_unit;
    t.soft = rng.uniform(1.0, 1.4);
  }
  return t;
}

// Random unit vector within `max_angle` of -z (a surface normal facing the
// cameras).
Eigen::Vector3d facing_normal(Rng& rng, double max_angle) {
  const double a = rng.uniform(0, max_angle);
  const double b = rng.uniform(0, 2 * M_PI);
  return Eigen::Vector3d(std::sin(a) * std::cos(b), std::sin(a) * std::sin(b), -std::cos(a));
}

}  // namespace

Scene build_scene(const SceneSpec& spec, Rng& rng) {
  spec.validate();
  Scene scene;
  const double fx = spec.rig.intrinsics.fx;
  const double fy = spec.rig.intrinsics.fy;
  double z_far = spec.depth_max, z_near = spec.depth_min;
  if (z_far <= 0) {
    // target full-resolution disparities roughly in [6, 0.92 * fx*b / z_near]
    z_near = spec.rig.disparity_depth_product() / 44.0 * 48.0 / 48.0;
    z_near = spec.rig.disparity_depth_product() / 44.0;
    z_far = spec.rig.disparity_depth_product() / 6.5;
  }
  const double span_x = double(spec.width) / fx;   // frustum width per unit depth
  const double span_y = double(spec.height) / fy;

  auto add_texture = [&](double depth, bool flat) {
    scene.textures.push_back(make_texture(rng, depth, fx, flat));
    return int(scene.textures.size() - 1);
  };
  auto push_rect = [&](const Rect& r, bool flat) {
    scene.rects.push_back(r);
    scene.prim_textureless.push_back(flat);
  };

  // Background: slightly slanted, large enough to cover every view.
  {
    const double z = rng.uniform(0.9, 0.98) * z_far;
    Eigen::Vector3d n = facing_normal(rng, 10.0 * M_PI / 180.0);
    Eigen::Vector3d e1 = n.cross(Eigen::Vector3d::UnitY()).normalized();
    Eigen::Vector3d e2 = n.cross(e1).normalized();
    const double ext = 4.0 * z_far * std::max(span_x, span_y);
    Rect r;
    r.e1 = e1;
    r.e2 = e2;
    r.len1 = ext;
    r.len2 = ext;
    r.p0 = Eigen::Vector3d(0, 0, z) - 0.5 * ext * e1 - 0.5 * ext * e2;
    r.texture = add_texture(z, false);  // background always textured
    push_rect(r, false);
  }

  for (int i = 0; i < spec.num_planes; ++i) {
    const double z = rng.uniform(z_near * 1.35, z_far * 0.85);
    const bool flat = rng.uniform() < spec.textureless_fraction;
    Eigen::Vector3d n = facing_normal(rng, 35.0 * M_PI / 180.0);
    Eigen::Vector3d e1 = n.cross(Eigen::Vector3d::UnitY()).normalized();
    Eigen::Vector3d e2 = n.cross(e1).normalized();
    const double w_ext = rng.uniform(0.25, 0.6) * z * span_x;
    const double h_ext = rng.uniform(0.25, 0.6) * z * span_y;
    Eigen::Vector3d center(rng.uniform(-0.38, 0.38) * z * span_x,
                           rng.uniform(-0.38, 0.38) * z * span_y, z);
    Rect r;
    r.e1 = e1;
    r.e2 = e2;
    r.len1 = w_ext;
    r.len2 = h_ext;
    r.p0 = center - 0.5 * w_ext * e1 - 0.5 * h_ext * e2;
    r.texture = add_texture(z, flat);
    push_rect(r, flat);
  }

  for (int i = 0; i < spec.num_boxes; ++i) {
    const double z = rng.uniform(z_near * 1.05, z_near * 2.2);
    const bool flat = rng.uniform() < spec.textureless_fraction;
    Box b;
    b.center = Eigen::Vector3d(rng.uniform(-0.3, 0.3) * z * span_x,
                               rng.uniform(-0.3, 0.3) * z * span_y, z);
    b.half = Eigen::Vector3d(rng.uniform(0.05, 0.14) * z * span_x,
                             rng.uniform(0.05, 0.14) * z * span_y,
                             rng.uniform(0.02, 0.08) * z);
    b.texture = add_texture(z, flat);
    scene.boxes.push_back(b);
    scene.prim_textureless.push_back(flat);
  }
  return scene;
}

ViewRender render_view(const Scene& scene, const geo::View& view) {
  const auto& k = view.intrinsics;
  ViewRender out;
  out.image = Image8(k.height, k.width);
  out.depth = Grid<float>(k.height, k.width, 1);
  out.prim = Grid<int>(k.height, k.width, 1);
  out.prim.v.setConstant(-1);
  const Eigen::Matrix3d rt = view.pose.rotation.transpose();
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      // camera ray with unit z in the camera frame, so hit.t equals depth
      const Eigen::Vector3d dir_cam((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
      const Eigen::Vector3d dir = rt * dir_cam;
      const auto hit = scene.trace(view.pose.center, dir);
      if (!hit) continue;
      out.depth.at(y, x) = float(hit->t);
      out.prim.at(y, x) = hit->prim;
      const int tex_id = hit->prim < int(scene.rects.size())
                             ? scene.rects[hit->prim].texture
                             : scene.boxes[hit->prim - scene.rects.size()].texture;
      const Texture& tex = scene.textures[tex_id];
      const double val = tex.value(hit->u, hit->v);
      for (int ch = 0; ch < 3; ++ch) {
        const double c = std::clamp(val * tex.color[ch], 0.0, 255.0);
        out.image.at(y, x, ch) = std::uint8_t(std::lround(c));
      }
    }
  }
  return out;
}

Grid<float> corrupt_prior(const Grid<float>& gt_depth, const PriorParams& params, Rng& rng,
                          CorruptionRecord* record) {
  const int h = gt_depth.h, w = gt_depth.w;
  CorruptionRecord rec;
  rec.a = rng.uniform(params.a_min, params.a_max);
  rec.b = rng.uniform(params.b_min, params.b_max);

  Grid<float> noise(h, w, 1);
  if (params.noise_amp > 0) {
    const double cell = std::max(2.0, params.noise_scale);
    const int gh = int(std::ceil(h / cell)) + 2;
    const int gw = int(std::ceil(w / cell)) + 2;
    Grid<float> lat(gh, gw, 1);
    for (std::int64_t i = 0; i < lat.size(); ++i) lat.v[i] = float(rng.normal());
    double ss = 0;
    for (int y = 0; y < h; ++y) {
      const double gy = y / cell;
      const int j0 = int(gy);
      const double ty = quintic(gy - j0);
      for (int x = 0; x < w; ++x) {
        const double gx = x / cell;
        const int i0 = int(gx);
        const double tx = quintic(gx - i0);
        const double a = lat.at(j0, i0), b = lat.at(j0, i0 + 1);
        const double c = lat.at(j0 + 1, i0), d = lat.at(j0 + 1, i0 + 1);
        const double v = (a + (b - a) * tx) * (1 - ty) + (c + (d - c) * tx) * ty;
        noise.at(y, x) = float(v);
        ss += v * v;
      }
    }
    const double rms = std::sqrt(ss / double(h * w));
    if (rms > 1e-12) noise.v *= float(params.noise_amp / rms);
    rec.noise_rms = params.noise_amp;
  }

  Grid<float> inv(h, w, 1);
  for (std::int64_t i = 0; i < inv.size(); ++i) {
    const double depth = gt_depth.v[i] > 0 ? double(gt_depth.v[i]) : 1e6;
    double v = rec.a / depth + rec.b + double(noise.v[i]);
    if (v < 0) {
      v = 0;
      ++rec.clamp_count;
    }
    inv.v[i] = float(v);
  }
  if (record) *record = rec;
  return inv;
}

StereoSample render_stereo(const SceneSpec& spec, std::uint64_t sample_id,
                           const PriorParams& prior) {
  spec.validate();
  Rng layout_rng = sample_rng(spec.seed, sample_id);
  const Scene scene = build_scene(spec, layout_rng);

  geo::StereoRig rig = spec.rig;
  rig.intrinsics.width = spec.width;
  rig.intrinsics.height = spec.height;

  const ViewRender left = render_view(scene, rig.left_view());
  const ViewRender right = render_view(scene, rig.right_view());
  const double k = rig.disparity_depth_product();

  StereoSample s;
  s.id = sample_id;
  s.left = left.image;
  s.right = right.image;
  s.rig = rig;
  s.gt_disparity = Grid<float>(spec.height, spec.width, 1);
  s.valid = Grid<float>(spec.height, spec.width, 1);
  s.textureless = Grid<float>(spec.height, spec.width, 1);

  Grid<float> right_disp(spec.height, spec.width, 1);
  for (std::int64_t i = 0; i < right_disp.size(); ++i)
    right_disp.v[i] = right.depth.v[i] > 0 ? float(k / right.depth.v[i]) : -1.0f;

  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const float z = left.depth.at(y, x);
      if (!(z > 0)) continue;
      const float d = float(k / z);
      s.gt_disparity.at(y, x) = d;
      const int prim = left.prim.at(y, x);
      if (prim >= 0 && scene.prim_textureless[std::size_t(prim)]) s.textureless.at(y, x) = 1.0f;
      const float xr = float(x) - d;
      if (xr < 0.0f || xr > float(spec.width - 1)) continue;
      // left-right consistency: occluded if another surface maps nearer
      const float dr = right_disp.sample_clamped(float(y), xr);
      if (std::abs(dr - d) <= 0.5f) s.valid.at(y, x) = 1.0f;
    }
  }

  Rng prior_rng = sample_rng(spec.seed ^ 0x707172ULL, sample_id);
  s.prior_inv_depth = corrupt_prior(left.depth, prior, prior_rng, &s.prior_record);
  return s;
}

MvsSample render_mvs(const SceneSpec& spec, std::uint64_t sample_id, const PriorParams& prior) {
  spec.validate();
  if (spec.num_views < 2) throw RangeError("mvs: need at least 2 views");
  Rng layout_rng = sample_rng(spec.seed, sample_id);
  const Scene scene = build_scene(spec, layout_rng);

  geo::CameraIntrinsics intr = spec.rig.intrinsics;
  intr.width = spec.width;
  intr.height = spec.height;

  MvsSample s;
  s.id = sample_id;
  s.bins = spec.bins;
  if (s.bins.num_bins < 2) {
    s.bins.d_min = spec.rig.disparity_depth_product() / 48.0;
    s.bins.d_max = spec.rig.disparity_depth_product() / 5.0;
    s.bins.num_bins = 32;
  }

  Rng pose_rng = sample_rng(spec.seed ^ 0x9090ULL, sample_id);
  for (int v = 0; v < spec.num_views; ++v) {
    geo::CameraPose pose;
    if (v > 0) {
      // small sideways motion with a mild rotation, keeping strong overlap
      const double bx = spec.rig.baseline * pose_rng.uniform(0.6, 1.4) * (v % 2 ? 1.0 : -1.0);
      const double by = spec.rig.baseline * pose_rng.uniform(-0.3, 0.3);
      pose.center = Eigen::Vector3d(bx, by, pose_rng.uniform(-0.05, 0.05) * spec.rig.baseline);
      const double ang = pose_rng.uniform(-1.5, 1.5) * M_PI / 180.0;
      pose.rotation = Eigen::AngleAxisd(ang, Eigen::Vector3d::UnitY()).toRotationMatrix();
    }
    s.views.push_back(geo::View{intr, pose});
    const ViewRender r = render_view(scene, s.views.back());
    s.images.push_back(r.image);
    if (v == 0) {
      s.gt_depth = r.depth;
      s.valid = Grid<float>(spec.height, spec.width, 1);
      s.textureless = Grid<float>(spec.height, spec.width, 1);
      for (std::int64_t i = 0; i < s.gt_depth.size(); ++i)
        s.valid.v[i] = s.gt_depth.v[i] > 0 ? 1.0f : 0.0f;
      for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
          const int prim = r.prim.at(y, x);
          if (prim >= 0 && scene.prim_textureless[std::size_t(prim)])
            s.textureless.at(y, x) = 1.0f;
        }
    }
  }

  Rng prior_rng = sample_rng(spec.seed ^ 0x707172ULL, sample_id);
  s.prior_inv_depth = corrupt_prior(s.gt_depth, prior, prior_rng, &s.prior_record);
  return s;
}

}  // namespace duodepth::data
