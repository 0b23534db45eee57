#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "legoslam/errors.hpp"
#include "legoslam/gicp.hpp"
#include "legoslam/random.hpp"

using namespace lego;

namespace {

std::vector<Vec3> random_surface_cloud(int n, Rng& rng) {
  // two slabs and a bump so the cloud constrains all six degrees of freedom
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double pick = rng.uniform();
    if (pick < 0.4) {
      pts.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.05 * rng.normal());
    } else if (pick < 0.7) {
      pts.emplace_back(rng.uniform(-1, 1), 0.05 * rng.normal(), rng.uniform(0, 1));
    } else {
      Vec3 dir(rng.normal(), rng.normal(), rng.normal());
      dir.normalize();
      pts.emplace_back(Vec3(0.3, 0.4, 0.5) + 0.3 * dir);
    }
  }
  return pts;
}

}  // namespace

TEST_CASE("planar covariance aligns its small axis with the normal") {
  Rng rng(21);
  std::vector<Vec3> pts;
  for (int i = 0; i < 300; ++i) {
    pts.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0);
  }
  const auto cloud = estimate_covariances(pts, 10);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    Eigen::SelfAdjointEigenSolver<Mat3> es(cloud.covariances[i]);
    const Vec3 normal = es.eigenvectors().col(0);
    CHECK(std::abs(normal.z()) > 0.999);
  }
}

TEST_CASE("regularization is unconditional") {
  Rng rng(22);
  std::vector<Vec3> pts;
  for (int i = 0; i < 200; ++i) {
    Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    pts.push_back(dir * std::cbrt(rng.uniform()));
  }
  const auto cloud = estimate_covariances(pts, 10);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    Eigen::SelfAdjointEigenSolver<Mat3> es(cloud.covariances[i]);
    CHECK(es.eigenvalues()[0] == doctest::Approx(1e-3).epsilon(1e-9));
    CHECK(es.eigenvalues()[1] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(es.eigenvalues()[2] == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("too few points is an error") {
  std::vector<Vec3> pts = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  CHECK_THROWS_AS(estimate_covariances(pts, 4), std::invalid_argument);
}

TEST_CASE("self alignment is exact") {
  Rng rng(23);
  const auto pts = random_surface_cloud(500, rng);
  const auto cloud = estimate_covariances(pts, 10);
  const auto result = gicp_align(cloud, cloud, Pose::identity());
  CHECK(result.inlier_ratio == doctest::Approx(1.0));
  CHECK(result.rmse < 1e-9);
  CHECK(result.pose.translation.norm() < 1e-9);
  CHECK(rotation_angle(result.pose) < 1e-9);
}

TEST_CASE("recovers a known in-basin transform") {
  Rng rng(24);
  const auto pts = random_surface_cloud(2000, rng);
  const auto source = estimate_covariances(pts, 10);

  for (int trial = 0; trial < 5; ++trial) {
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    Twist xi;
    xi.head<3>() = axis * rng.uniform(0.0, 10.0 * M_PI / 180.0);
    xi.tail<3>() =
        Vec3(rng.normal(), rng.normal(), rng.normal()).normalized() * rng.uniform(0.0, 0.1);
    const Pose truth = se3_exp(xi);

    CovPointCloud target = source;
    for (auto& p : target.points) p = truth.apply(p);
    const Mat3 r = truth.rotation_matrix();
    for (auto& c : target.covariances) c = r * c * r.transpose();

    const auto result = gicp_align(source, target, Pose::identity());
    const Pose err = compose(inverse(result.pose), truth);
    CHECK(rotation_angle(err) < 0.5 * M_PI / 180.0);
    CHECK(err.translation.norm() < 0.005);
  }
}

TEST_CASE("disjoint clouds lose tracking") {
  Rng rng(25);
  const auto pts = random_surface_cloud(300, rng);
  const auto source = estimate_covariances(pts, 10);
  CovPointCloud target = source;
  for (auto& p : target.points) p += Vec3(10, 0, 0);
  CHECK_THROWS_AS(gicp_align(source, target, Pose::identity()), TrackingLost);
}

TEST_CASE("cost is non-increasing within every Gauss-Newton step") {
  Rng rng(26);
  const auto pts = random_surface_cloud(800, rng);
  const auto source = estimate_covariances(pts, 10);
  Twist xi;
  xi << 0.05, -0.03, 0.08, 0.04, -0.02, 0.06;
  const Pose truth = se3_exp(xi);
  CovPointCloud target = source;
  for (auto& p : target.points) p = truth.apply(p);
  const Mat3 r = truth.rotation_matrix();
  for (auto& c : target.covariances) c = r * c * r.transpose();

  const auto result = gicp_align(source, target, Pose::identity());
  REQUIRE(!result.cost_history.empty());
  for (const auto& [before, after] : result.cost_history) {
    CHECK(after <= before + 1e-12);
  }
}

TEST_CASE("alignment is deterministic") {
  Rng rng(27);
  const auto pts = random_surface_cloud(600, rng);
  const auto source = estimate_covariances(pts, 10);
  Twist xi;
  xi << 0.02, 0.01, -0.03, 0.05, 0.02, -0.04;
  const Pose truth = se3_exp(xi);
  CovPointCloud target = source;
  for (auto& p : target.points) p = truth.apply(p);

  const auto a = gicp_align(source, target, Pose::identity());
  const auto b = gicp_align(source, target, Pose::identity());
  CHECK(a.pose.translation == b.pose.translation);
  CHECK(a.pose.rotation.coeffs() == b.pose.rotation.coeffs());
  CHECK(a.inlier_ratio == b.inlier_ratio);
  CHECK(a.rmse == b.rmse);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("keyframe rule is a strict inequality") {
  AlignmentResult r;
  r.inlier_ratio = 0.79;
  CHECK(is_keyframe(r, 0.80));
  r.inlier_ratio = 0.80;
  CHECK_FALSE(is_keyframe(r, 0.80));
  r.inlier_ratio = 1.0;
  CHECK_FALSE(is_keyframe(r, 0.80));
}

TEST_CASE("voxel downsample keeps one centroid per cell") {
  std::vector<Vec3> pts = {{0.01, 0.01, 0.01}, {0.02, 0.02, 0.02}, {0.30, 0.01, 0.01}};
  const auto down = voxel_downsample(pts, 0.05);
  REQUIRE(down.size() == 2);
  CHECK((down[0] - Vec3(0.015, 0.015, 0.015)).norm() < 1e-12);
  CHECK((down[1] - Vec3(0.30, 0.01, 0.01)).norm() < 1e-12);
}

TEST_CASE("track_frame rejects an all-invalid depth image") {
  ImageF depth(16, 16, 1, 0.0f);
  CameraIntrinsics k;
  k.fx = k.fy = 20;
  k.cx = k.cy = 8;
  k.width = k.height = 16;
  CovPointCloud target;
  CHECK_THROWS_AS(track_frame(depth, k, target, Pose::identity(), TrackConfig{}),
                  TrackingLost);
}
