#include <cmath>

#include "doctest.h"
#include "duodepth/core/rng.hpp"
#include "duodepth/geometry/geometry.hpp"

using namespace duodepth;
using namespace duodepth::geo;

namespace {

// Point-projection oracle, independent of the homography algebra: place a
// point on the fronto-parallel plane through the ref pixel, reproject into
// the source view with the full projection equations.
Eigen::Vector2d project_via_plane(const View& ref, const View& src, double depth, double u,
                                  double v) {
  const Eigen::Vector3d dir((u - ref.intrinsics.cx) / ref.intrinsics.fx,
                            (v - ref.intrinsics.cy) / ref.intrinsics.fy, 1.0);
  const Eigen::Vector3d p_cam = depth * dir;  // camera z equals plane depth
  const Eigen::Vector3d p_world = ref.pose.rotation.transpose() * p_cam + ref.pose.center;
  const Eigen::Vector3d q = src.pose.rotation * (p_world - src.pose.center);
  return {src.intrinsics.fx * q.x() / q.z() + src.intrinsics.cx,
          src.intrinsics.fy * q.y() / q.z() + src.intrinsics.cy};
}

View random_view(Rng& rng, int w, int h) {
  View view;
  view.intrinsics.fx = rng.uniform(80, 200);
  view.intrinsics.fy = rng.uniform(80, 200);
  view.intrinsics.cx = w / 2.0 + rng.uniform(-5, 5);
  view.intrinsics.cy = h / 2.0 + rng.uniform(-5, 5);
  view.intrinsics.width = w;
  view.intrinsics.height = h;
  const Eigen::Vector3d axis =
      Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
  view.pose.rotation = Eigen::AngleAxisd(rng.uniform(-0.15, 0.15), axis).toRotationMatrix();
  view.pose.center = Eigen::Vector3d(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                                     rng.uniform(-0.2, 0.2));
  return view;
}

}  // namespace

TEST_CASE("depth bins: log-space progression with exact endpoints") {
  const auto bins = build_depth_bins({1.0, 4.0, 3});
  REQUIRE(bins.size() == 3);
  CHECK(bins[0] == 1.0);
  CHECK(bins[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(bins[2] == 4.0);

  CHECK_THROWS_AS(build_depth_bins({5.0, 5.0, 4}), RangeError);
  CHECK_THROWS_AS(build_depth_bins({-1.0, 4.0, 4}), RangeError);
  CHECK_THROWS_AS(build_depth_bins({1.0, 4.0, 1}), RangeError);

  const auto b48 = build_depth_bins({0.5, 80.0, 48});
  for (int i = 0; i < 48; ++i) {
    const double expect = std::exp(std::log(0.5) + (std::log(80.0) - std::log(0.5)) * i / 47.0);
    CHECK(std::abs(b48[std::size_t(i)] - expect) <= 1e-12 * expect);
  }
  // constant ratio (geometric progression)
  const double r0 = b48[1] / b48[0];
  for (int i = 1; i + 1 < 48; ++i)
    CHECK(std::abs(b48[std::size_t(i) + 1] / b48[std::size_t(i)] - r0) < 1e-12 * r0);
  // bin coordinate round trip
  for (double d : {0.5, 1.7, 42.0, 80.0})
    CHECK(bin_coord_to_depth(depth_to_bin_coord(d, {0.5, 80.0, 48}), {0.5, 80.0, 48}) ==
          doctest::Approx(d).epsilon(1e-12));
}

TEST_CASE("homography: identical views collapse to identity") {
  Rng rng(11);
  const View v = random_view(rng, 128, 64);
  for (double depth : {0.5, 2.0, 50.0}) {
    const Eigen::Matrix3d h = homography_for_depth(v, v, depth);
    CHECK((h - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK_THROWS_AS(homography_for_depth(v, v, 0.0), RangeError);
  CHECK_THROWS_AS(homography_for_depth(v, v, -2.0), RangeError);
}

TEST_CASE("homography: rectified rig shifts x by fx*b/z") {
  CameraIntrinsics k;
  k.fx = 120;
  k.fy = 110;
  k.cx = 64;
  k.cy = 32;
  k.width = 128;
  k.height = 64;
  StereoRig rig{k, 0.35};
  const View ref = rig.left_view();
  const View src = rig.right_view();
  for (double z : {1.0, 2.5, 7.0}) {
    const Eigen::Matrix3d h = homography_for_depth(ref, src, z);
    const double shift = k.fx * rig.baseline / z;
    for (double u : {0.0, 31.5, 127.0})
      for (double v : {0.0, 17.25, 63.0}) {
        const Eigen::Vector3d p = h * Eigen::Vector3d(u, v, 1);
        CHECK(std::abs(p.x() / p.z() - (u - shift)) < 1e-9);
        CHECK(std::abs(p.y() / p.z() - v) < 1e-9);
      }
  }
}

TEST_CASE("homography matches point-projection oracle on random pose pairs") {
  Rng rng(17);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const View ref = random_view(rng, 128, 64);
    const View src = random_view(rng, 128, 64);
    for (int di = 0; di < 5; ++di) {
      const double depth = rng.uniform(2.0, 20.0);
      const Eigen::Matrix3d h = homography_for_depth(ref, src, depth);
      for (int pi = 0; pi < 100; ++pi) {
        const double u = rng.uniform(0, 127);
        const double v = rng.uniform(0, 63);
        const Eigen::Vector3d m = h * Eigen::Vector3d(u, v, 1);
        const Eigen::Vector2d oracle = project_via_plane(ref, src, depth, u, v);
        worst = std::max(worst, (Eigen::Vector2d(m.x() / m.z(), m.y() / m.z()) - oracle).norm());
      }
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("warp_volume: identity views reproduce the source features") {
  Rng rng(23);
  const View v = random_view(rng, 32, 16);
  Grid<double> feat(16, 32, 3);
  for (std::int64_t i = 0; i < feat.size(); ++i) feat.v[i] = rng.normal();
  const auto bins = build_depth_bins({1.0, 8.0, 4});
  const auto vol = warp_volume(feat, v, v, bins);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 32; ++x)
      for (int b = 0; b < 4; ++b) {
        CHECK(vol.validity.at(y, x, b) == 1.0);
        for (int c = 0; c < 3; ++c)
          CHECK(std::abs(vol.features.at(y, x, b * 3 + c) - feat.at(y, x, c)) < 1e-6);
      }
}

TEST_CASE("warp_volume: constant map stays constant wherever valid") {
  Rng rng(29);
  const View ref = random_view(rng, 32, 16);
  const View src = random_view(rng, 32, 16);
  Grid<double> feat = Grid<double>::constant(16, 32, 2, 3.25);
  const auto vol = warp_volume(feat, ref, src, build_depth_bins({1.0, 9.0, 5}));
  std::int64_t valid = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 32; ++x)
      for (int b = 0; b < 5; ++b)
        if (vol.validity.at(y, x, b) > 0) {
          ++valid;
          CHECK(vol.features.at(y, x, b * 2) == doctest::Approx(3.25).epsilon(1e-9));
          CHECK(vol.features.at(y, x, b * 2 + 1) == doctest::Approx(3.25).epsilon(1e-9));
        }
  CHECK(valid > 0);
}

TEST_CASE("warp_volume: validity mask is exactly the in-bounds set") {
  Rng rng(31);
  const View ref = random_view(rng, 32, 16);
  const View src = random_view(rng, 32, 16);
  Grid<double> feat(16, 32, 1);
  const auto bins = build_depth_bins({1.0, 9.0, 3});
  const auto vol = warp_volume(feat, ref, src, bins);
  for (int b = 0; b < 3; ++b) {
    const Eigen::Matrix3d h = homography_for_depth(ref, src, bins[std::size_t(b)]);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 32; ++x) {
        const Eigen::Vector3d p = h * Eigen::Vector3d(x, y, 1);
        const double xs = p.x() / p.z(), ys = p.y() / p.z();
        constexpr double eps = 1e-9;
        const bool in = p.z() > 0 && xs >= -eps && xs <= 31 + eps && ys >= -eps &&
                        ys <= 15 + eps;
        CHECK(bool(vol.validity.at(y, x, b) > 0) == in);
      }
  }
}

TEST_CASE("disparity/depth conversion") {
  CameraIntrinsics k;
  k.fx = 100;
  k.fy = 100;
  k.cx = 32;
  k.cy = 16;
  k.width = 64;
  k.height = 32;
  StereoRig rig{k, 0.5};

  Grid<float> disp = Grid<float>::constant(4, 4, 1, float(rig.disparity_depth_product()));
  const auto depth = disparity_to_depth(disp, rig);
  for (std::int64_t i = 0; i < depth.values.size(); ++i) {
    CHECK(depth.values.v[i] == 1.0f);
    CHECK(depth.mask.v[i] == 1.0f);
  }

  Rng rng(41);
  Grid<double> field(8, 8, 1);
  for (std::int64_t i = 0; i < field.size(); ++i) field.v[i] = rng.uniform(0.5, 40.0);
  const auto fwd = disparity_to_depth(field, rig);
  const auto back = depth_to_disparity(fwd.values, rig);
  for (std::int64_t i = 0; i < field.size(); ++i)
    CHECK(std::abs(back.values.v[i] - field.v[i]) <= 1e-9 * field.v[i]);

  // zero/negative disparity means invalid, carried in the mask
  Grid<float> bad = Grid<float>::constant(2, 2, 1, 0.0f);
  bad.at(0, 1) = -3.0f;
  bad.at(1, 1) = 2.0f;
  const auto conv = disparity_to_depth(bad, rig);
  CHECK(conv.mask.at(0, 0) == 0.0f);
  CHECK(conv.mask.at(0, 1) == 0.0f);
  CHECK(conv.mask.at(1, 1) == 1.0f);
}
