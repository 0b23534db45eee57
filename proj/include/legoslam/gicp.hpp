#pragma once

#include <utility>
#include <vector>

#include "legoslam/geometry.hpp"
#include "legoslam/image.hpp"

namespace lego {

// Point cloud with per-point covariances. `covariances` carry the
// plane-favoring eigenvalue regularization used by the G-ICP cost;
// `scatter` keeps the raw k-NN scatter matrices, which map insertion reuses
// to derive initial scale and rotation.
struct CovPointCloud {
  std::vector<Vec3> points;
  std::vector<Mat3> covariances;
  std::vector<Mat3> scatter;

  std::size_t size() const { return points.size(); }
};

struct GicpConfig {
  double max_corr_dist = 0.1;       // m
  int max_iter = 30;
  double convergence_twist = 1e-6;  // update norm
  int min_correspondences = 10;
  double regularization_eps = 1e-3;
};

struct AlignmentResult {
  Pose pose;  // source -> target
  double inlier_ratio = 0.0;
  double rmse = 0.0;  // meters, over inliers at the final pose
  int iterations = 0;
  bool converged = false;
  // (cost before, cost after) per Gauss-Newton step, both evaluated on that
  // step's fixed correspondences and weights
  std::vector<std::pair<double, double>> cost_history;
};

// Replace eigenvalues by (eps, 1, 1), smallest direction gets eps.
Mat3 plane_regularize(const Mat3& cov, double eps);

// k-NN scatter covariances (neighborhood includes the query point itself).
// Requires |points| > k_neighbors >= 4.
CovPointCloud estimate_covariances(const std::vector<Vec3>& points,
                                   int k_neighbors, double eps = 1e-3);

// Generalized-ICP alignment of source onto target. Throws TrackingLost when
// fewer than cfg.min_correspondences matches survive the distance gate.
AlignmentResult gicp_align(const CovPointCloud& source,
                           const CovPointCloud& target, const Pose& init,
                           const GicpConfig& cfg = {});

std::vector<Vec3> backproject_depth(const ImageF& depth,
                                    const CameraIntrinsics& k);

// Centroid per occupied voxel, emitted in first-touch order.
std::vector<Vec3> voxel_downsample(const std::vector<Vec3>& points,
                                   double voxel);

struct TrackConfig {
  GicpConfig gicp;
  double voxel_size = 0.05;
  int k_neighbors = 10;
};

struct TrackResult {
  AlignmentResult alignment;  // pose: world <- camera of this frame
  CovPointCloud source;       // camera-frame downsampled cloud
};

// Build the source cloud from the depth image, then align it against map
// samples (world frame) starting from the previous pose.
TrackResult track_frame(const ImageF& depth, const CameraIntrinsics& k,
                        const CovPointCloud& map_samples, const Pose& prev_pose,
                        const TrackConfig& cfg);

inline bool is_keyframe(const AlignmentResult& r, double threshold = 0.8) {
  return r.inlier_ratio < threshold;
}

}  // namespace lego
