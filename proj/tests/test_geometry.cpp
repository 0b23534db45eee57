#include <doctest.h>

#include <cmath>

#include "legoslam/geometry.hpp"
#include "legoslam/random.hpp"

using namespace lego;

namespace {
Pose rot_z(double angle) {
  return Pose(Quat(Eigen::AngleAxisd(angle, Vec3::UnitZ())), Vec3::Zero());
}
}  // namespace

TEST_CASE("compose identity and inverse") {
  Rng rng(7);
  Twist xi;
  for (int i = 0; i < 6; ++i) xi[i] = rng.uniform(-0.8, 0.8);
  const Pose p = se3_exp(xi);

  const Pose left = compose(Pose::identity(), p);
  CHECK((left.translation - p.translation).norm() < 1e-12);
  CHECK(left.rotation.angularDistance(p.rotation) < 1e-12);

  const Pose round = compose(p, inverse(p));
  CHECK(round.translation.norm() < 1e-9);
  CHECK(rotation_angle(round) < 1e-9);
}

TEST_CASE("rotation composition turns x into -x") {
  const Pose r = compose(rot_z(M_PI / 2), rot_z(M_PI / 2));
  const Vec3 v = r.apply(Vec3(1, 0, 0));
  CHECK((v - Vec3(-1, 0, 0)).norm() < 1e-12);
}

TEST_CASE("compose is associative") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Twist a, b, c;
    for (int i = 0; i < 6; ++i) {
      a[i] = rng.uniform(-1, 1);
      b[i] = rng.uniform(-1, 1);
      c[i] = rng.uniform(-1, 1);
    }
    const Pose pa = se3_exp(a), pb = se3_exp(b), pc = se3_exp(c);
    const Pose lhs = compose(compose(pa, pb), pc);
    const Pose rhs = compose(pa, compose(pb, pc));
    CHECK((lhs.translation - rhs.translation).norm() < 1e-9);
    CHECK(lhs.rotation.angularDistance(rhs.rotation) < 1e-9);
  }
}

TEST_CASE("exp of zero twist is identity") {
  const Pose p = se3_exp(Twist::Zero());
  CHECK(p.translation.norm() == 0.0);
  CHECK(rotation_angle(p) < 1e-15);
}

TEST_CASE("log exp round trip") {
  Twist xi;
  xi << 0.1, 0, 0, 0.2, 0, 0;
  const Twist back = se3_log(se3_exp(xi));
  CHECK((back - xi).norm() < 1e-10);

  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    Twist t;
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    const double angle = rng.uniform(0.0, 2.99);
    t.head<3>() = axis * angle;
    t.tail<3>() = Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    const Twist back2 = se3_log(se3_exp(t));
    CHECK((back2 - t).norm() < 1e-8);
  }
}

TEST_CASE("exp rotates about z") {
  Twist xi;
  xi << 0, 0, M_PI / 2, 0, 0, 0;
  const Vec3 v = se3_exp(xi).apply(Vec3(1, 0, 0));
  CHECK((v - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("log flags the angle-pi branch") {
  bool degenerate = false;
  se3_log(rot_z(M_PI), &degenerate);
  CHECK(degenerate);
  degenerate = true;
  se3_log(rot_z(0.5), &degenerate);
  CHECK_FALSE(degenerate);
}

TEST_CASE("quaternion norm stays unit over a million composes") {
  Rng rng(11);
  Twist xi;
  for (int i = 0; i < 6; ++i) xi[i] = rng.uniform(-0.01, 0.01);
  const Pose step = se3_exp(xi);
  Pose p;
  for (int i = 0; i < 1000000; ++i) p = compose(p, step);
  CHECK(std::abs(p.rotation.norm() - 1.0) < 1e-9);
}

TEST_CASE("project basics") {
  CameraIntrinsics k;
  k.fx = k.fy = 100;
  k.cx = k.cy = 32;
  k.width = k.height = 64;

  const auto c = project(Vec3(0, 0, 1), k);
  CHECK(c.u == doctest::Approx(32));
  CHECK(c.v == doctest::Approx(32));
  CHECK(c.z == doctest::Approx(1));

  const auto off = project(Vec3(0.32, 0, 1), k);
  CHECK(off.u == doctest::Approx(64));
  CHECK(off.v == doctest::Approx(32));

  CHECK_THROWS_AS(project(Vec3(0, 0, -1), k), std::domain_error);
}

TEST_CASE("backproject inverts project") {
  CameraIntrinsics k;
  k.fx = k.fy = 100;
  k.cx = k.cy = 32;
  k.width = k.height = 64;

  const auto p = backproject(32, 32, 2, k);
  REQUIRE(p.has_value());
  CHECK((*p - Vec3(0, 0, 2)).norm() < 1e-12);

  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const double u = rng.uniform(0, 63);
    const double v = rng.uniform(0, 63);
    const double depth = rng.uniform(0.1, 5.0);
    const auto q = backproject(u, v, depth, k);
    REQUIRE(q.has_value());
    const auto px = project(*q, k);
    CHECK(std::abs(px.u - u) < 1e-9);
    CHECK(std::abs(px.v - v) < 1e-9);
    CHECK(std::abs(px.z - depth) < 1e-9);
  }

  CHECK_FALSE(backproject(32, 32, 0.0, k).has_value());
  CHECK_FALSE(backproject(-5, 32, 1.0, k).has_value());
}
