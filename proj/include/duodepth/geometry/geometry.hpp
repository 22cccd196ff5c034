#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "duodepth/core/grid.hpp"
#include "duodepth/geometry/camera.hpp"

namespace duodepth::geo {

// Depth hypotheses uniformly spaced in log space, endpoints exact.
inline std::vector<double> build_depth_bins(const DepthBinSpec& spec) {
  spec.validate();
  std::vector<double> bins(spec.num_bins);
  const double lo = std::log(spec.d_min);
  const double hi = std::log(spec.d_max);
  for (int i = 1; i + 1 < spec.num_bins; ++i)
    bins[i] = std::exp(lo + (hi - lo) * double(i) / double(spec.num_bins - 1));
  bins.front() = spec.d_min;
  bins.back() = spec.d_max;
  return bins;
}

// Continuous bin coordinate of a depth under the same log-uniform spacing
// (0 at d_min, num_bins-1 at d_max). Inverse of bin_to_depth.
inline double depth_to_bin_coord(double depth, const DepthBinSpec& spec) {
  const double lo = std::log(spec.d_min);
  const double hi = std::log(spec.d_max);
  return (std::log(depth) - lo) / (hi - lo) * double(spec.num_bins - 1);
}

inline double bin_coord_to_depth(double coord, const DepthBinSpec& spec) {
  const double lo = std::log(spec.d_min);
  const double hi = std::log(spec.d_max);
  return std::exp(lo + coord / double(spec.num_bins - 1) * (hi - lo));
}

// Plane-induced homography for the fronto-parallel plane at `depth` in the
// reference frame, mapping reference homogeneous pixels to source pixels.
//
// With camera centers t and the plane normal n1 = third row of R_ref:
//   H(d) = K_src * R_src * (I + (t_ref - t_src) * n1^T / d) * R_ref^T * K_ref^{-1}
// The inverse-intrinsics term and the sign of the translation term are the
// forms validated by the point-projection oracle.
inline Eigen::Matrix3d homography_for_depth(const View& ref, const View& src, double depth) {
  if (!(depth > 0)) throw RangeError("homography: depth must be positive");
  ref.intrinsics.validate();
  src.intrinsics.validate();
  const Eigen::Matrix3d k_ref = ref.intrinsics.matrix();
  if (std::abs(k_ref.determinant()) < 1e-12) throw NumericError("homography: singular intrinsics");
  const Eigen::Vector3d n1 = ref.pose.principal_axis();
  const Eigen::Vector3d dt = ref.pose.center - src.pose.center;
  const Eigen::Matrix3d plane = Eigen::Matrix3d::Identity() + dt * n1.transpose() / depth;
  return src.intrinsics.matrix() * src.pose.rotation * plane * ref.pose.rotation.transpose() *
         k_ref.inverse();
}

template <class S>
struct WarpedVolume {
  Grid<S> features;  // h x w x (num_bins * c), bin-major packing
  Grid<S> validity;  // h x w x num_bins, 1 where the mapped point is in range
  int num_bins = 0;
  int channels = 0;
};

// Sweep src features over the depth bins: for each bin d the source map is
// sampled at H(d)-mapped coordinates with bilinear interpolation. Samples
// mapping outside [0, W-1] x [0, H-1] are zeroed and flagged invalid.
// Intrinsics must already live on the feature grid (scale them if the
// features are coarser than the images).
template <class S>
WarpedVolume<S> warp_volume(const Grid<S>& src_features, const View& ref, const View& src,
                            const std::vector<double>& bins) {
  const int h = src_features.h, w = src_features.w, c = src_features.c;
  const int nb = int(bins.size());
  WarpedVolume<S> out;
  out.features = Grid<S>(h, w, nb * c);
  out.validity = Grid<S>(h, w, nb);
  out.num_bins = nb;
  out.channels = c;
  for (int b = 0; b < nb; ++b) {
    const Eigen::Matrix3d hm = homography_for_depth(ref, src, bins[b]);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const Eigen::Vector3d p = hm * Eigen::Vector3d(x, y, 1.0);
        if (std::abs(p.z()) < 1e-12) continue;  // behind/at the camera plane: invalid
        const double xs = p.x() / p.z();
        const double ys = p.y() / p.z();
        // 1e-9 px slack so border pixels survive round-off in the mapping
        constexpr double eps = 1e-9;
        const bool valid = p.z() > 0 && xs >= -eps && xs <= double(w - 1) + eps &&
                           ys >= -eps && ys <= double(h - 1) + eps;
        if (!valid) continue;
        out.validity.at(y, x, b) = S(1);
        for (int k = 0; k < c; ++k)
          out.features.at(y, x, b * c + k) = src_features.sample_clamped(S(ys), S(xs), k);
      }
    }
  }
  return out;
}

template <class S>
struct MaskedField {
  Grid<S> values;  // h x w x 1
  Grid<S> mask;    // h x w x 1, 1 = valid
};

// depth = fx * baseline / disparity; non-positive disparities are invalid.
template <class S>
MaskedField<S> disparity_to_depth(const Grid<S>& disparity, const StereoRig& rig) {
  rig.validate();
  const S k = S(rig.disparity_depth_product());
  MaskedField<S> out{Grid<S>(disparity.h, disparity.w, 1), Grid<S>(disparity.h, disparity.w, 1)};
  for (std::int64_t i = 0; i < disparity.size(); ++i) {
    const S d = disparity.v[i];
    if (d > S(0) && std::isfinite(double(d))) {
      out.values.v[i] = k / d;
      out.mask.v[i] = S(1);
    }
  }
  return out;
}

template <class S>
MaskedField<S> depth_to_disparity(const Grid<S>& depth, const StereoRig& rig) {
  return disparity_to_depth(depth, rig);  // same algebra: x -> fx*b/x
}

}  // namespace duodepth::geo
