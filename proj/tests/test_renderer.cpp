#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "legoslam/gaussian_map.hpp"
#include "legoslam/random.hpp"
#include "legoslam/renderer.hpp"

using namespace lego;

namespace {

CameraIntrinsics small_camera() {
  CameraIntrinsics k;
  k.fx = k.fy = 100;
  k.cx = k.cy = 31.5;
  k.width = k.height = 64;
  return k;
}

LanguageGaussian splat_at(const Vec3& p, double scale, double opacity_logit,
                          const Vec3& color, int d) {
  LanguageGaussian g;
  g.position = p;
  g.rotation = Quat::Identity();
  g.log_scale = Vec3::Constant(std::log(scale));
  g.opacity_logit = opacity_logit;
  g.color = color;
  g.feature = Eigen::VectorXd::Zero(d);
  return g;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

TEST_CASE("on-axis projection matches the hand-evaluated jacobian") {
  GaussianMap map(4);
  map.insert(splat_at(Vec3(0, 0, 1), 0.1, 0.0, Vec3(1, 0, 0), 4), 0);
  const auto p = project_gaussian(map, 0, Pose::identity(), small_camera(),
                                  RenderConfig{});
  REQUIRE(p.has_value());
  // isotropic 0.1 m at z=1 with fx=100: (100*0.1)^2 + dilation on the diagonal
  CHECK(p->cov2d(0, 0) == doctest::Approx(100.3).epsilon(1e-9));
  CHECK(p->cov2d(1, 1) == doctest::Approx(100.3).epsilon(1e-9));
  CHECK(std::abs(p->cov2d(0, 1)) < 1e-9);
  CHECK(p->depth == doctest::Approx(1.0));
}

TEST_CASE("behind-camera gaussians are culled") {
  GaussianMap map(4);
  map.insert(splat_at(Vec3(0, 0, -1), 0.1, 0.0, Vec3(1, 0, 0), 4), 0);
  CHECK_FALSE(project_gaussian(map, 0, Pose::identity(), small_camera(),
                               RenderConfig{})
                  .has_value());
}

TEST_CASE("doubling fx doubles the principal-point offset") {
  GaussianMap map(4);
  map.insert(splat_at(Vec3(0.2, 0.1, 1.5), 0.05, 0.0, Vec3(1, 0, 0), 4), 0);
  CameraIntrinsics k = small_camera();
  const auto p1 = project_gaussian(map, 0, Pose::identity(), k, RenderConfig{});
  k.fx *= 2;
  k.fy *= 2;
  const auto p2 = project_gaussian(map, 0, Pose::identity(), k, RenderConfig{});
  REQUIRE(p1.has_value());
  REQUIRE(p2.has_value());
  CHECK((p2->u - k.cx) == doctest::Approx(2 * (p1->u - k.cx)).epsilon(1e-12));
  CHECK((p2->v - k.cy) == doctest::Approx(2 * (p1->v - k.cy)).epsilon(1e-12));
}

TEST_CASE("empty map renders background") {
  GaussianMap map(4);
  const auto out = render(map, Pose::identity(), small_camera());
  for (const auto v : out.rgb.data) CHECK(v == 0.0);
  for (const auto v : out.acc.data) CHECK(v == 0.0);
  for (const auto v : out.depth.data) CHECK(v == 0.0);
  for (const auto v : out.feat.data) CHECK(v == 0.0);
}

TEST_CASE("single opaque splat dominates its center pixel") {
  GaussianMap map(4);
  // big in screen space, nearly opaque
  map.insert(splat_at(Vec3(0, 0, 1.0), 0.2, logit(0.99), Vec3(1, 0, 0), 4), 0);
  const auto k = small_camera();
  const auto out = render(map, Pose::identity(), k);
  const int cy = 31, cx = 31;  // cx,cy = 31.5: four center pixels are symmetric
  CHECK(out.rgb.at(cy, cx, 0) == doctest::Approx(0.99).epsilon(1e-3));
  CHECK(out.rgb.at(cy, cx, 1) == 0.0);
  CHECK(out.depth.at(cy, cx) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(out.acc.at(cy, cx) == doctest::Approx(0.99).epsilon(1e-3));
}

TEST_CASE("two coincident splats composite front to back") {
  GaussianMap map(4);
  // same center, slightly different depths so the order is fixed
  map.insert(splat_at(Vec3(0, 0, 1.0), 0.5, logit(0.5), Vec3(1, 0, 0), 4), 0);
  map.insert(splat_at(Vec3(0, 0, 1.0001), 0.5, logit(0.5), Vec3(0, 1, 0), 4), 0);
  const auto k = small_camera();
  const auto out = render(map, Pose::identity(), k);
  // at the exact centers alpha = 0.5 each (huge sigma -> G ~ 1 at center)
  const int cy = 31, cx = 31;
  CHECK(out.rgb.at(cy, cx, 0) == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(out.rgb.at(cy, cx, 1) == doctest::Approx(0.25).epsilon(1e-3));
}

TEST_CASE("render is invariant to gaussian insertion order") {
  Rng rng(31);
  GaussianMap fwd(8), rev(8);
  std::vector<LanguageGaussian> gs;
  for (int i = 0; i < 12; ++i) {
    LanguageGaussian g = splat_at(
        Vec3(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(0.8, 2.0)),
        rng.uniform(0.03, 0.08), rng.uniform(-1, 2),
        Vec3(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)), 8);
    for (int c = 0; c < 8; ++c) g.feature[c] = rng.normal();
    gs.push_back(g);
  }
  for (const auto& g : gs) fwd.insert(g, 0);
  for (auto it = gs.rbegin(); it != gs.rend(); ++it) rev.insert(*it, 0);

  const auto k = small_camera();
  const auto a = render(fwd, Pose::identity(), k);
  const auto b = render(rev, Pose::identity(), k);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < a.rgb.data.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(a.rgb.data[i] - b.rgb.data[i]));
  }
  CHECK(max_diff < 1e-12);
}

TEST_CASE("transmittance is non-increasing and outputs stay bounded") {
  Rng rng(32);
  GaussianMap map(8);
  double max_feat_norm = 0.0;
  for (int i = 0; i < 30; ++i) {
    LanguageGaussian g = splat_at(
        Vec3(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(0.6, 2.5)),
        rng.uniform(0.02, 0.1), rng.uniform(-1, 3),
        Vec3(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)), 8);
    for (int c = 0; c < 8; ++c) g.feature[c] = rng.normal();
    max_feat_norm = std::max(max_feat_norm, g.feature.norm());
    map.insert(g, 0);
  }
  const auto k = small_camera();
  const auto out = render(map, Pose::identity(), k);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      CHECK(out.acc.at(y, x) >= 0.0);
      CHECK(out.acc.at(y, x) <= 1.0 + 1e-12);
      for (int c = 0; c < 3; ++c) {
        CHECK(out.rgb.at(y, x, c) <= 1.01);
        CHECK(out.rgb.at(y, x, c) >= 0.0);
      }
      Eigen::VectorXd f(8);
      for (int c = 0; c < 8; ++c) f[c] = out.feat.at(y, x, c);
      CHECK(f.norm() <= max_feat_norm + 1e-9);
    }
  }
}

TEST_CASE("zero cotangent produces zero gradients") {
  Rng rng(33);
  GaussianMap map(4);
  map.insert(splat_at(Vec3(0, 0, 1), 0.1, 0.5, Vec3(0.5, 0.5, 0.5), 4), 0);
  const auto k = small_camera();
  const auto out = render(map, Pose::identity(), k);
  const ImageD zero_feat(k.height, k.width, 4);
  const auto grads = render_backward(map, out, ImageD{}, ImageD{}, zero_feat);
  CHECK(grads.feature.cwiseAbs().maxCoeff() == 0.0);
  CHECK(grads.position[0].norm() == 0.0);
}

TEST_CASE("color gradient of a single splat equals its compositing weight") {
  GaussianMap map(4);
  map.insert(splat_at(Vec3(0, 0, 1), 0.2, logit(0.8), Vec3(0.3, 0.3, 0.3), 4), 0);
  const auto k = small_camera();
  const auto out = render(map, Pose::identity(), k);
  ImageD grad_rgb(k.height, k.width, 3);
  const int cy = 31, cx = 31;
  grad_rgb.at(cy, cx, 0) = 1.0;
  const auto grads = render_backward(map, out, grad_rgb, ImageD{}, ImageD{});
  // d rgb(center)/d c0 = alpha * T = effective alpha = acc at that pixel
  CHECK(grads.color[0][0] == doctest::Approx(out.acc.at(cy, cx)).epsilon(1e-12));
  CHECK(grads.color[0][1] == 0.0);
}

TEST_CASE("mismatched cotangent shapes throw") {
  GaussianMap map(4);
  map.insert(splat_at(Vec3(0, 0, 1), 0.1, 0.0, Vec3(1, 1, 1), 4), 0);
  const auto k = small_camera();
  const auto out = render(map, Pose::identity(), k);
  CHECK_THROWS_AS(render_backward(map, out, ImageD(8, 8, 3), ImageD{}, ImageD{}),
                  std::invalid_argument);
}

TEST_CASE("analytic gradients match finite differences") {
  using namespace legotest;
  auto scene = make_grad_scene(12, 16, 8, 101);
  const auto res = gradcheck_scene(scene);
  INFO("worst group: ", res.worst);
  CHECK(res.max_rel_error < 1e-3);
}
