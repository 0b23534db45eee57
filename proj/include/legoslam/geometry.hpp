#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <optional>

namespace lego {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

// Twist ordering: rotational part first (radians), translational second (m).
using Twist = Eigen::Matrix<double, 6, 1>;

// Rigid transform. Quaternion is Hamilton convention, serialized (w,x,y,z),
// kept unit-norm by every constructor and composing operation.
struct Pose {
  Quat rotation{1.0, 0.0, 0.0, 0.0};
  Vec3 translation{0.0, 0.0, 0.0};

  Pose() = default;
  Pose(const Quat& q, const Vec3& t) : rotation(q.normalized()), translation(t) {}

  static Pose identity() { return Pose(); }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }
};

// result applies b first, then a
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

Pose se3_exp(const Twist& xi);

// Branch with non-negative quaternion w. `degenerate` (optional) is set when
// the rotation angle is within 1e-9 of pi, where the axis sign is a choice.
Twist se3_log(const Pose& p, bool* degenerate = nullptr);

double rotation_angle(const Pose& p);  // radians, in [0, pi]

struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  bool valid() const {
    return fx > 0.0 && fy > 0.0 && width > 0 && height > 0 && cx >= 0.0 &&
           cx < width && cy >= 0.0 && cy < height;
  }
};

struct PixelPoint {
  double u = 0.0, v = 0.0, z = 0.0;
};

// Pinhole projection of a camera-frame point. Throws std::domain_error for
// non-positive depth.
PixelPoint project(const Vec3& p_cam, const CameraIntrinsics& k);

// Inverse of project. Rejects (nullopt) non-positive depth and pixels outside
// the image bounds.
std::optional<Vec3> backproject(double u, double v, double depth,
                                const CameraIntrinsics& k);

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

}  // namespace lego
