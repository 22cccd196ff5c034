#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "duodepth/core/errors.hpp"

namespace duodepth::geo {

struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw RangeError("intrinsics: focal lengths must be positive");
    if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
      throw RangeError("intrinsics: principal point outside image");
  }

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }

  // Intrinsics of the same camera observed on a grid downscaled by `factor`
  // (grid node (y, x) of the scaled image sits at (factor*y, factor*x)).
  CameraIntrinsics scaled(double factor) const {
    CameraIntrinsics s = *this;
    s.fx = fx * factor;
    s.fy = fy * factor;
    s.cx = cx * factor;
    s.cy = cy * factor;
    s.width = int(std::lround(width * factor));
    s.height = int(std::lround(height * factor));
    return s;
  }
};

// World-to-camera rotation plus the camera center in world coordinates:
// x_cam = R * (x_world - center).
struct CameraPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d center = Eigen::Vector3d::Zero();

  void validate() const {
    const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).norm();
    if (ortho > 1e-6) throw RangeError("pose: rotation not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > 1e-6)
      throw RangeError("pose: rotation determinant != 1");
  }

  // Viewing-direction normal of the fronto-parallel sweep plane: the camera's
  // principal axis expressed in world coordinates (third rotation row).
  Eigen::Vector3d principal_axis() const { return rotation.row(2).transpose(); }
};

struct View {
  CameraIntrinsics intrinsics;
  CameraPose pose;
};

struct DepthBinSpec {
  double d_min = 0, d_max = 0;
  int num_bins = 0;

  void validate() const {
    if (!(d_min > 0) || !(d_max > d_min))
      throw RangeError("depth bins: need 0 < d_min < d_max");
    if (num_bins < 2) throw RangeError("depth bins: need num_bins >= 2");
  }
};

// Rectified pair: both views share intrinsics, the source camera sits at
// +baseline along the reference camera's x axis. disparity * depth = fx * baseline.
struct StereoRig {
  CameraIntrinsics intrinsics;
  double baseline = 0;

  void validate() const {
    intrinsics.validate();
    if (!(baseline > 0)) throw RangeError("rig: baseline must be positive");
  }

  double disparity_depth_product() const { return intrinsics.fx * baseline; }

  View left_view() const { return View{intrinsics, CameraPose{}}; }
  View right_view() const {
    CameraPose p;
    p.center = Eigen::Vector3d(baseline, 0, 0);
    return View{intrinsics, p};
  }
};

}  // namespace duodepth::geo
