#include "legoslam/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace lego {

Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.rotation = (a.rotation * b.rotation).normalized();
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

Pose inverse(const Pose& p) {
  Pose out;
  out.rotation = p.rotation.conjugate();
  out.translation = -(out.rotation * p.translation);
  return out;
}

Pose se3_exp(const Twist& xi) {
  const Vec3 omega = xi.head<3>();
  const Vec3 nu = xi.tail<3>();
  const double theta = omega.norm();
  const Mat3 w = skew(omega);

  Mat3 rot;
  Mat3 v;
  if (theta < 1e-10) {
    rot = Mat3::Identity() + w + 0.5 * w * w;
    v = Mat3::Identity() + 0.5 * w + (1.0 / 6.0) * w * w;
  } else {
    const double t2 = theta * theta;
    rot = Mat3::Identity() + (std::sin(theta) / theta) * w +
          ((1.0 - std::cos(theta)) / t2) * w * w;
    v = Mat3::Identity() + ((1.0 - std::cos(theta)) / t2) * w +
        ((theta - std::sin(theta)) / (t2 * theta)) * w * w;
  }
  return Pose(Quat(rot), v * nu);
}

Twist se3_log(const Pose& p, bool* degenerate) {
  Quat q = p.rotation.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();

  const double sin_half = q.vec().norm();
  const double cos_half = q.w();
  const double theta = 2.0 * std::atan2(sin_half, cos_half);
  if (degenerate != nullptr) *degenerate = theta > M_PI - 1e-9;

  Vec3 omega;
  if (sin_half < 1e-12) {
    omega = 2.0 * q.vec();
  } else {
    omega = (theta / sin_half) * q.vec();
  }

  const Mat3 w = skew(omega);
  Mat3 v_inv;
  if (theta < 1e-10) {
    v_inv = Mat3::Identity() - 0.5 * w + (1.0 / 12.0) * w * w;
  } else {
    // V^-1 = I - w/2 + (1/theta^2 - (1+cos)/(2 theta sin)) w^2
    const double half = 0.5 * theta;
    const double coeff =
        (1.0 / (theta * theta)) - std::cos(half) / (2.0 * theta * std::sin(half));
    v_inv = Mat3::Identity() - 0.5 * w + coeff * w * w;
  }

  Twist xi;
  xi.head<3>() = omega;
  xi.tail<3>() = v_inv * p.translation;
  return xi;
}

double rotation_angle(const Pose& p) {
  Quat q = p.rotation.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return 2.0 * std::atan2(q.vec().norm(), q.w());
}

PixelPoint project(const Vec3& p_cam, const CameraIntrinsics& k) {
  if (p_cam.z() <= 0.0) {
    throw std::domain_error("project: point behind camera");
  }
  PixelPoint out;
  out.u = k.fx * p_cam.x() / p_cam.z() + k.cx;
  out.v = k.fy * p_cam.y() / p_cam.z() + k.cy;
  out.z = p_cam.z();
  return out;
}

std::optional<Vec3> backproject(double u, double v, double depth,
                                const CameraIntrinsics& k) {
  if (depth <= 0.0) return std::nullopt;
  if (u < 0.0 || u > k.width - 1 || v < 0.0 || v > k.height - 1) {
    return std::nullopt;
  }
  return Vec3((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
}

}  // namespace lego
