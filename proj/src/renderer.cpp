#include "legoslam/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lego {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// projection Jacobian at camera point t
inline Eigen::Matrix<double, 2, 3> proj_jacobian(const Vec3& t,
                                                 const CameraIntrinsics& k) {
  const double z = t.z();
  Eigen::Matrix<double, 2, 3> j;
  j << k.fx / z, 0.0, -k.fx * t.x() / (z * z),
       0.0, k.fy / z, -k.fy * t.y() / (z * z);
  return j;
}

struct Dq {
  Mat3 dw, dx, dy, dz;
};

// derivative of R(q) w.r.t. the unit quaternion components
Dq rotation_derivatives(const Quat& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Dq d;
  d.dw << 0, -z, y, z, 0, -x, -y, x, 0;
  d.dx << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
  d.dy << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
  d.dz << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
  d.dw *= 2.0;
  d.dx *= 2.0;
  d.dy *= 2.0;
  d.dz *= 2.0;
  return d;
}

}  // namespace

void MapGradients::resize(std::size_t n, int d) {
  position.assign(n, Vec3::Zero());
  rotation.assign(n, Eigen::Vector4d::Zero());
  log_scale.assign(n, Vec3::Zero());
  opacity_logit.assign(n, 0.0);
  color.assign(n, Vec3::Zero());
  feature = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), d);
}

std::optional<ProjectedGaussian> project_gaussian(const GaussianMap& map,
                                                  std::size_t index,
                                                  const Pose& cam_pose,
                                                  const CameraIntrinsics& k,
                                                  const RenderConfig& cfg) {
  const Pose w2c = inverse(cam_pose);
  const Vec3 t = w2c.apply(map.positions()[index]);
  if (t.z() <= cfg.near_plane) return std::nullopt;

  const Mat3 rot_cw = w2c.rotation_matrix();
  const Mat3 rot_g = map.rotations()[index].normalized().toRotationMatrix();
  const Vec3 s2 = (2.0 * map.log_scales()[index]).array().exp();
  const Mat3 sigma3 = rot_g * s2.asDiagonal() * rot_g.transpose();
  const Mat3 sigma_c = rot_cw * sigma3 * rot_cw.transpose();

  const auto j = proj_jacobian(t, k);
  Mat2 cov2d = j * sigma_c * j.transpose();
  cov2d(0, 0) += cfg.dilation;
  cov2d(1, 1) += cfg.dilation;

  // largest eigenvalue of a 2x2 symmetric matrix
  const double mid = 0.5 * (cov2d(0, 0) + cov2d(1, 1));
  const double det = cov2d(0, 0) * cov2d(1, 1) - cov2d(0, 1) * cov2d(1, 0);
  const double lam_max = mid + std::sqrt(std::max(mid * mid - det, 0.0));

  ProjectedGaussian p;
  p.u = k.fx * t.x() / t.z() + k.cx;
  p.v = k.fy * t.y() / t.z() + k.cy;
  p.depth = t.z();
  p.cov2d = cov2d;
  p.radius = cfg.radius_sigma * std::sqrt(lam_max);
  p.index = static_cast<int>(index);

  if (p.u + p.radius < -0.5 || p.u - p.radius > k.width - 0.5 ||
      p.v + p.radius < -0.5 || p.v - p.radius > k.height - 0.5) {
    return std::nullopt;
  }
  p.conic = cov2d.inverse();
  return p;
}

RenderOutput render(const GaussianMap& map, const Pose& cam_pose,
                    const CameraIntrinsics& k, const RenderConfig& cfg) {
  RenderOutput out;
  out.cam_pose = cam_pose;
  out.intrinsics = k;
  out.config = cfg;
  out.rgb = ImageD(k.height, k.width, 3);
  out.depth = ImageD(k.height, k.width, 1);
  out.feat = ImageD(k.height, k.width, map.feature_dim());
  out.acc = ImageD(k.height, k.width, 1);
  out.pixel_contribs.assign(static_cast<std::size_t>(k.height) * k.width, {});

  out.projected.reserve(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (auto p = project_gaussian(map, i, cam_pose, k, cfg)) {
      out.projected.push_back(*p);
    }
  }
  // global front-to-back order; depth ties broken by insertion order (IDs
  // are assigned in insertion order, so map index order matches ID order)
  std::sort(out.projected.begin(), out.projected.end(),
            [](const ProjectedGaussian& a, const ProjectedGaussian& b) {
              return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
            });

  const int d = map.feature_dim();
  std::vector<double> transmittance(
      static_cast<std::size_t>(k.height) * k.width, 1.0);
  std::vector<double> depth_raw(
      static_cast<std::size_t>(k.height) * k.width, 0.0);

  for (std::size_t gi = 0; gi < out.projected.size(); ++gi) {
    const ProjectedGaussian& g = out.projected[gi];
    const double opacity = sigmoid(map.opacity_logits()[static_cast<std::size_t>(g.index)]);
    const Vec3& color = map.colors()[static_cast<std::size_t>(g.index)];
    const auto feature = map.features().row(g.index);

    const int x0 = std::max(0, static_cast<int>(std::floor(g.u - g.radius)));
    const int x1 = std::min(k.width - 1, static_cast<int>(std::ceil(g.u + g.radius)));
    const int y0 = std::max(0, static_cast<int>(std::floor(g.v - g.radius)));
    const int y1 = std::min(k.height - 1, static_cast<int>(std::ceil(g.v + g.radius)));

    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const std::size_t pix = static_cast<std::size_t>(y) * k.width + x;
        double& t_pix = transmittance[pix];
        if (t_pix < cfg.transmittance_min) continue;
        const double dx = x - g.u;
        const double dy = y - g.v;
        const double q = g.conic(0, 0) * dx * dx +
                         (g.conic(0, 1) + g.conic(1, 0)) * dx * dy +
                         g.conic(1, 1) * dy * dy;
        double alpha = opacity * std::exp(-0.5 * q);
        if (!(alpha >= cfg.alpha_skip)) continue;
        alpha = std::min(alpha, cfg.alpha_clamp);

        const double w = alpha * t_pix;
        double* rgb = out.rgb.pixel(y, x);
        for (int c = 0; c < 3; ++c) rgb[c] += w * color[c];
        double* ft = out.feat.pixel(y, x);
        for (int c = 0; c < d; ++c) ft[c] += w * feature[c];
        depth_raw[pix] += w * g.depth;
        out.acc.data[pix] += w;
        out.pixel_contribs[pix].push_back(static_cast<int>(gi));
        t_pix *= 1.0 - alpha;
      }
    }
  }

  for (std::size_t pix = 0; pix < depth_raw.size(); ++pix) {
    out.depth.data[pix] = depth_raw[pix] / std::max(out.acc.data[pix], 1e-6);
  }
  return out;
}

MapGradients render_backward(const GaussianMap& map, const RenderOutput& out,
                             const ImageD& grad_rgb, const ImageD& grad_depth,
                             const ImageD& grad_feat) {
  const CameraIntrinsics& k = out.intrinsics;
  const int d = map.feature_dim();
  auto check = [&](const ImageD& g, int channels, const char* name) {
    if (g.empty()) return false;
    if (g.height != k.height || g.width != k.width || g.channels != channels) {
      throw std::invalid_argument(std::string("render_backward: bad shape for ") + name);
    }
    return true;
  };
  const bool has_rgb = check(grad_rgb, 3, "grad_rgb");
  const bool has_depth = check(grad_depth, 1, "grad_depth");
  const bool has_feat = check(grad_feat, d, "grad_feat");

  MapGradients grads;
  grads.resize(map.size(), d);

  const std::size_t np = out.projected.size();
  // per projected gaussian accumulators (screen-space quantities)
  std::vector<Eigen::Vector2d> g_mu(np, Eigen::Vector2d::Zero());
  std::vector<Mat2> g_conic(np, Mat2::Zero());
  std::vector<double> g_center_z(np, 0.0);

  std::vector<double> alphas;
  std::vector<double> ts;
  std::vector<double> dldw;

  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const std::size_t pix = static_cast<std::size_t>(y) * k.width + x;
      const auto& contribs = out.pixel_contribs[pix];
      if (contribs.empty()) continue;

      const double acc = out.acc.data[pix];
      const double m = std::max(acc, 1e-6);
      const double depth_norm = out.depth.data[pix];

      const double* g_rgb_px = has_rgb ? grad_rgb.pixel(y, x) : nullptr;
      const double* g_feat_px = has_feat ? grad_feat.pixel(y, x) : nullptr;
      const double g_d = has_depth ? grad_depth.at(y, x) : 0.0;
      const double g_draw = g_d / m;
      const double g_acc = acc > 1e-6 ? -g_d * depth_norm / m : 0.0;

      // recompute the compositing chain exactly as forward
      const std::size_t nc = contribs.size();
      alphas.resize(nc);
      ts.resize(nc);
      dldw.resize(nc);
      double t_pix = 1.0;
      for (std::size_t ci = 0; ci < nc; ++ci) {
        const ProjectedGaussian& g = out.projected[static_cast<std::size_t>(contribs[ci])];
        const double opacity = sigmoid(map.opacity_logits()[static_cast<std::size_t>(g.index)]);
        const double dx = x - g.u;
        const double dy = y - g.v;
        const double q = g.conic(0, 0) * dx * dx +
                         (g.conic(0, 1) + g.conic(1, 0)) * dx * dy +
                         g.conic(1, 1) * dy * dy;
        alphas[ci] = std::min(opacity * std::exp(-0.5 * q), out.config.alpha_clamp);
        ts[ci] = t_pix;
        t_pix *= 1.0 - alphas[ci];
      }

      for (std::size_t ci = 0; ci < nc; ++ci) {
        const ProjectedGaussian& g = out.projected[static_cast<std::size_t>(contribs[ci])];
        const auto mi = static_cast<std::size_t>(g.index);
        double v = g_draw * g.depth + g_acc;
        if (g_rgb_px != nullptr) {
          const Vec3& col = map.colors()[mi];
          v += g_rgb_px[0] * col[0] + g_rgb_px[1] * col[1] + g_rgb_px[2] * col[2];
        }
        if (g_feat_px != nullptr) {
          const auto feature = map.features().row(g.index);
          for (int c = 0; c < d; ++c) v += g_feat_px[c] * feature[c];
        }
        dldw[ci] = v;
      }

      double accum = 0.0;
      for (std::size_t r = nc; r-- > 0;) {
        const std::size_t pj = static_cast<std::size_t>(contribs[r]);
        const ProjectedGaussian& g = out.projected[pj];
        const auto mi = static_cast<std::size_t>(g.index);
        const double alpha = alphas[r];
        const double w = alpha * ts[r];

        const double dl_dalpha = ts[r] * dldw[r] - accum / (1.0 - alpha);
        accum += dldw[r] * w;

        if (g_rgb_px != nullptr) {
          for (int c = 0; c < 3; ++c) grads.color[mi][c] += g_rgb_px[c] * w;
        }
        if (g_feat_px != nullptr) {
          for (int c = 0; c < d; ++c) grads.feature(g.index, c) += g_feat_px[c] * w;
        }
        g_center_z[pj] += g_draw * w;

        const double opacity = sigmoid(map.opacity_logits()[mi]);
        const double dx = x - g.u;
        const double dy = y - g.v;
        const double q = g.conic(0, 0) * dx * dx +
                         (g.conic(0, 1) + g.conic(1, 0)) * dx * dy +
                         g.conic(1, 1) * dy * dy;
        const double gauss = std::exp(-0.5 * q);
        if (opacity * gauss > out.config.alpha_clamp) continue;  // clamped: flat

        grads.opacity_logit[mi] += dl_dalpha * gauss * opacity * (1.0 - opacity);
        const double dl_dg = dl_dalpha * opacity;
        const double dg_dq = -0.5 * gauss;
        const double dq_ddx = 2.0 * (g.conic(0, 0) * dx) +
                              (g.conic(0, 1) + g.conic(1, 0)) * dy;
        const double dq_ddy = 2.0 * (g.conic(1, 1) * dy) +
                              (g.conic(0, 1) + g.conic(1, 0)) * dx;
        g_mu[pj][0] += dl_dg * dg_dq * -dq_ddx;
        g_mu[pj][1] += dl_dg * dg_dq * -dq_ddy;
        g_conic[pj](0, 0) += dl_dg * dg_dq * dx * dx;
        g_conic[pj](0, 1) += dl_dg * dg_dq * dx * dy;
        g_conic[pj](1, 0) += dl_dg * dg_dq * dx * dy;
        g_conic[pj](1, 1) += dl_dg * dg_dq * dy * dy;
      }
    }
  }

  // chain screen-space gradients to the 3D attributes
  const Pose w2c = inverse(out.cam_pose);
  const Mat3 rot_cw = w2c.rotation_matrix();

  for (std::size_t pj = 0; pj < np; ++pj) {
    const ProjectedGaussian& g = out.projected[pj];
    if (g_mu[pj].isZero(0.0) && g_conic[pj].isZero(0.0) && g_center_z[pj] == 0.0) {
      continue;
    }
    const auto mi = static_cast<std::size_t>(g.index);

    const Vec3 t = w2c.apply(map.positions()[mi]);
    const double z = t.z();
    const Quat q_raw = map.rotations()[mi];
    const Quat q_hat = q_raw.normalized();
    const Mat3 rot_g = q_hat.toRotationMatrix();
    const Vec3 s2 = (2.0 * map.log_scales()[mi]).array().exp();
    const Mat3 sigma3 = rot_g * s2.asDiagonal() * rot_g.transpose();
    const Mat3 sigma_c = rot_cw * sigma3 * rot_cw.transpose();
    const auto j = proj_jacobian(t, k);

    // conic = cov2d^-1
    const Mat2 g_sigma2 = -g.conic * g_conic[pj] * g.conic;
    const Mat3 g_sigma_c = j.transpose() * g_sigma2 * j;
    const Eigen::Matrix<double, 2, 3> g_j =
        (g_sigma2 + g_sigma2.transpose()) * j * sigma_c;

    Vec3 g_t = j.transpose() * g_mu[pj];
    const double z2 = z * z;
    const double z3 = z2 * z;
    g_t.x() += g_j(0, 2) * (-k.fx / z2);
    g_t.y() += g_j(1, 2) * (-k.fy / z2);
    g_t.z() += g_j(0, 0) * (-k.fx / z2) + g_j(0, 2) * (2.0 * k.fx * t.x() / z3) +
               g_j(1, 1) * (-k.fy / z2) + g_j(1, 2) * (2.0 * k.fy * t.y() / z3);
    g_t.z() += g_center_z[pj];

    grads.position[mi] += rot_cw.transpose() * g_t;

    const Mat3 g_sigma3 = rot_cw.transpose() * g_sigma_c * rot_cw;
    const Mat3 sym = g_sigma3 + g_sigma3.transpose();
    const Mat3 g_rot = sym * rot_g * Vec3(s2).asDiagonal();

    const Mat3 rtgr = rot_g.transpose() * g_sigma3 * rot_g;
    for (int a = 0; a < 3; ++a) {
      grads.log_scale[mi][a] += rtgr(a, a) * 2.0 * s2[a];
    }

    const Dq dq = rotation_derivatives(q_hat);
    Eigen::Vector4d g_qhat;  // order w,x,y,z
    g_qhat[0] = (g_rot.array() * dq.dw.array()).sum();
    g_qhat[1] = (g_rot.array() * dq.dx.array()).sum();
    g_qhat[2] = (g_rot.array() * dq.dy.array()).sum();
    g_qhat[3] = (g_rot.array() * dq.dz.array()).sum();

    // chain through normalization q_hat = q / |q|
    Eigen::Vector4d qv;
    qv << q_raw.w(), q_raw.x(), q_raw.y(), q_raw.z();
    const double norm = qv.norm();
    Eigen::Vector4d qh;
    qh << q_hat.w(), q_hat.x(), q_hat.y(), q_hat.z();
    grads.rotation[mi] += (g_qhat - qh * qh.dot(g_qhat)) / norm;
  }
  return grads;
}

}  // namespace lego
