#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "duodepth/core/rng.hpp"
#include "duodepth/geometry/camera.hpp"

namespace duodepth::data {

// Procedural surface albedo. Patterns are deliberately band-limited so that a
// bilinear warp between the two rendered views stays within one intensity
// level of the other image (the ground-truth self-consistency contract).
struct Texture {
  enum class Kind { Smooth, Checker, Flat };
  Kind kind = Kind::Flat;
  double base = 128.0;  // mean level
  double amp = 0.0;     // pattern amplitude
  double cell = 0.25;   // pattern period, scene units along the surface
  double soft = 0.5;    // checker edge softness (fraction of cell)
  std::uint64_t seed = 0;
  Eigen::Vector3d color = Eigen::Vector3d(1, 1, 1);  // per-channel multipliers

  double pattern(double u, double v) const;
  // Scalar albedo in [0, 255] before the color multipliers.
  double value(double u, double v) const {
    return std::clamp(base + amp * pattern(u, v), 4.0, 251.0);
  }
};

struct RayHit {
  double t = 0;       // ray parameter; equals camera-frame depth for our rays
  double u = 0, v = 0;  // surface coordinates for texturing
  int prim = -1;
};

// Finite textured rectangle: p0 + a*e1 + b*e2, a in [0, len1], b in [0, len2].
struct Rect {
  Eigen::Vector3d p0;
  Eigen::Vector3d e1, e2;  // unit, orthogonal
  double len1 = 1, len2 = 1;
  int texture = 0;

  Eigen::Vector3d normal() const { return e1.cross(e2); }
  bool intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, RayHit* hit) const;
};

// Axis-aligned box; textured per-face in the face's own plane coordinates.
struct Box {
  Eigen::Vector3d center;
  Eigen::Vector3d half;
  int texture = 0;

  bool intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, RayHit* hit) const;
};

struct Scene {
  std::vector<Texture> textures;
  std::vector<Rect> rects;
  std::vector<Box> boxes;
  std::vector<bool> prim_textureless;  // indexed by RayHit::prim

  // Nearest intersection along origin + t*dir, t > eps.
  std::optional<RayHit> trace(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int width = 128, height = 64;
  int num_planes = 4;
  int num_boxes = 2;
  double textureless_fraction = 0.25;
  double depth_min = 0, depth_max = 0;  // 0 = derive from rig and disparity range
  geo::StereoRig rig;
  // multi-view setup
  int num_views = 3;  // reference + sources
  geo::DepthBinSpec bins;

  void validate() const;
};

// Deterministic scene layout for a spec (same spec + seed => same scene).
Scene build_scene(const SceneSpec& spec, Rng& rng);

}  // namespace duodepth::data
