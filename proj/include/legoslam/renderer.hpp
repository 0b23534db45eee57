#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "legoslam/gaussian_map.hpp"
#include "legoslam/geometry.hpp"
#include "legoslam/image.hpp"

namespace lego {

using Mat2 = Eigen::Matrix2d;

struct RenderConfig {
  double near_plane = 0.01;
  double dilation = 0.3;  // px^2 added to cov2d
  double alpha_clamp = 0.99;
  double alpha_skip = 1.0 / 255.0;
  double transmittance_min = 1e-4;  // early stop per pixel
  double radius_sigma = 3.0;        // bounding ellipse, in sigmas
};

struct ProjectedGaussian {
  double u = 0.0, v = 0.0;  // mean, pixel coords
  Mat2 cov2d = Mat2::Zero();
  Mat2 conic = Mat2::Zero();  // cov2d^-1
  double depth = 0.0;         // camera z of the center
  double radius = 0.0;        // 3-sigma bound, px
  int index = -1;             // map index
};

struct RenderOutput {
  ImageD rgb;    // HxWx3
  ImageD depth;  // HxW, alpha-normalized
  ImageD feat;   // HxWxd
  ImageD acc;    // HxW accumulated opacity

  // retained for the backward pass
  std::vector<ProjectedGaussian> projected;          // depth-sorted
  std::vector<std::vector<int>> pixel_contribs;      // per pixel: indices into projected, front-to-back
  Pose cam_pose;
  CameraIntrinsics intrinsics;
  RenderConfig config;
};

// EWA-style first-order projection. Returns nullopt when culled (center
// behind the near plane or the 3-sigma ellipse misses the image).
std::optional<ProjectedGaussian> project_gaussian(const GaussianMap& map,
                                                  std::size_t index,
                                                  const Pose& cam_pose,
                                                  const CameraIntrinsics& k,
                                                  const RenderConfig& cfg);

RenderOutput render(const GaussianMap& map, const Pose& cam_pose,
                    const CameraIntrinsics& k, const RenderConfig& cfg = {});

// Dense per-attribute gradients, row i = map Gaussian i.
struct MapGradients {
  std::vector<Vec3> position;
  std::vector<Eigen::Vector4d> rotation;  // d/d(w,x,y,z) of the raw quaternion
  std::vector<Vec3> log_scale;
  std::vector<double> opacity_logit;
  std::vector<Vec3> color;
  Eigen::MatrixXd feature;  // N x d

  void resize(std::size_t n, int d);
};

// Analytic adjoint of render. Cotangents may be empty images (treated as
// zero). Shapes must otherwise match the render output.
MapGradients render_backward(const GaussianMap& map, const RenderOutput& out,
                             const ImageD& grad_rgb, const ImageD& grad_depth,
                             const ImageD& grad_feat);

}  // namespace lego
