#include "legoslam/gicp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>

#include "legoslam/errors.hpp"
#include "legoslam/kdtree.hpp"

namespace lego {

Mat3 plane_regularize(const Mat3& cov, double eps) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  const Mat3 u = es.eigenvectors();  // ascending eigenvalues
  Vec3 lam(eps, 1.0, 1.0);
  return u * lam.asDiagonal() * u.transpose();
}

CovPointCloud estimate_covariances(const std::vector<Vec3>& points,
                                   int k_neighbors, double eps) {
  if (k_neighbors < 4) {
    throw std::invalid_argument("estimate_covariances: k_neighbors must be >= 4");
  }
  if (static_cast<int>(points.size()) <= k_neighbors) {
    throw std::invalid_argument(
        "estimate_covariances: need more points than k_neighbors");
  }
  KdTree3 tree(points);
  CovPointCloud out;
  out.points = points;
  out.covariances.resize(points.size());
  out.scatter.resize(points.size());

  std::vector<KdTree3::Neighbor> nn;
  for (std::size_t i = 0; i < points.size(); ++i) {
    tree.knn(points[i], k_neighbors, nn);
    Vec3 mean = Vec3::Zero();
    for (const auto& n : nn) mean += tree.point(n.index);
    mean /= static_cast<double>(nn.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& n : nn) {
      const Vec3 d = tree.point(n.index) - mean;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(nn.size());
    out.scatter[i] = cov;
    out.covariances[i] = plane_regularize(cov, eps);
  }
  return out;
}

namespace {

struct Correspondence {
  int src = 0;
  int tgt = 0;
};

double weighted_cost(const CovPointCloud& source, const CovPointCloud& target,
                     const std::vector<Correspondence>& corr,
                     const std::vector<Mat3>& weights, const Pose& pose) {
  double cost = 0.0;
  for (std::size_t c = 0; c < corr.size(); ++c) {
    const Vec3 r = target.points[corr[c].tgt] - pose.apply(source.points[corr[c].src]);
    cost += r.dot(weights[c] * r);
  }
  return cost;
}

}  // namespace

AlignmentResult gicp_align(const CovPointCloud& source,
                           const CovPointCloud& target, const Pose& init,
                           const GicpConfig& cfg) {
  if (source.size() < 50 || target.size() < 50) {
    throw TrackingLost("gicp_align: clouds must have at least 50 points");
  }

  KdTree3 tree(target.points);
  const double gate_sq = cfg.max_corr_dist * cfg.max_corr_dist;

  AlignmentResult result;
  Pose pose = init;

  std::vector<Correspondence> corr;
  std::vector<Mat3> weights;
  corr.reserve(source.size());
  weights.reserve(source.size());

  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    const Mat3 rot = pose.rotation_matrix();
    corr.clear();
    weights.clear();
    for (std::size_t i = 0; i < source.size(); ++i) {
      const Vec3 p = pose.apply(source.points[i]);
      const auto nn = tree.nearest(p);
      if (nn.index >= 0 && nn.dist_sq <= gate_sq) {
        corr.push_back({static_cast<int>(i), nn.index});
        const Mat3 m = target.covariances[nn.index] +
                       rot * source.covariances[i] * rot.transpose();
        weights.push_back(m.inverse());
      }
    }
    if (static_cast<int>(corr.size()) < cfg.min_correspondences) {
      throw TrackingLost("gicp_align: too few correspondences");
    }

    const double cost0 = weighted_cost(source, target, corr, weights, pose);

    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Twist g = Twist::Zero();
    for (std::size_t c = 0; c < corr.size(); ++c) {
      const Vec3 p = pose.apply(source.points[corr[c].src]);
      const Vec3 r = target.points[corr[c].tgt] - p;
      Eigen::Matrix<double, 3, 6> jac;
      jac.block<3, 3>(0, 0) = skew(p);
      jac.block<3, 3>(0, 3) = -Mat3::Identity();
      const Mat3& w = weights[c];
      h += jac.transpose() * w * jac;
      g += jac.transpose() * w * r;
    }
    Twist step = h.ldlt().solve(-g);

    // backtracking on the fixed-weight cost keeps the iteration monotone
    double scale = 1.0;
    double cost1 = cost0;
    bool improved = false;
    for (int ls = 0; ls < 24; ++ls) {
      const Pose cand = compose(se3_exp(scale * step), pose);
      const double c = weighted_cost(source, target, corr, weights, cand);
      if (c <= cost0 + 1e-12) {
        cost1 = c;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    result.cost_history.emplace_back(cost0, cost1);
    if (!improved) {
      result.converged = true;
      break;
    }

    pose = compose(se3_exp(scale * step), pose);
    ++result.iterations;
    if ((scale * step).norm() < cfg.convergence_twist) {
      result.converged = true;
      break;
    }
  }
  if (result.iterations >= cfg.max_iter) result.converged = true;

  // inlier statistics at the final pose
  std::size_t inliers = 0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3 p = pose.apply(source.points[i]);
    const auto nn = tree.nearest(p);
    if (nn.index >= 0 && nn.dist_sq <= gate_sq) {
      ++inliers;
      sum_sq += nn.dist_sq;
    }
  }
  result.pose = pose;
  result.inlier_ratio =
      static_cast<double>(inliers) / static_cast<double>(source.size());
  result.rmse = inliers > 0 ? std::sqrt(sum_sq / static_cast<double>(inliers)) : 0.0;
  return result;
}

std::vector<Vec3> backproject_depth(const ImageF& depth,
                                    const CameraIntrinsics& k) {
  std::vector<Vec3> pts;
  pts.reserve(depth.size());
  for (int y = 0; y < depth.height; ++y) {
    for (int x = 0; x < depth.width; ++x) {
      const float d = depth.at(y, x);
      if (d <= 0.0f || !std::isfinite(d)) continue;
      if (auto p = backproject(x, y, d, k)) pts.push_back(*p);
    }
  }
  return pts;
}

std::vector<Vec3> voxel_downsample(const std::vector<Vec3>& points,
                                   double voxel) {
  struct Cell {
    Vec3 sum = Vec3::Zero();
    int count = 0;
  };
  auto key_of = [voxel](const Vec3& p) {
    const auto qx = static_cast<std::int64_t>(std::floor(p.x() / voxel));
    const auto qy = static_cast<std::int64_t>(std::floor(p.y() / voxel));
    const auto qz = static_cast<std::int64_t>(std::floor(p.z() / voxel));
    return (static_cast<std::uint64_t>(qx) & 0x1fffff) |
           ((static_cast<std::uint64_t>(qy) & 0x1fffff) << 21) |
           ((static_cast<std::uint64_t>(qz) & 0x1fffff) << 42);
  };
  std::unordered_map<std::uint64_t, Cell> grid;
  std::vector<std::uint64_t> order;
  grid.reserve(points.size());
  for (const Vec3& p : points) {
    const auto key = key_of(p);
    auto [it, fresh] = grid.try_emplace(key);
    if (fresh) order.push_back(key);
    it->second.sum += p;
    it->second.count += 1;
  }
  std::vector<Vec3> out;
  out.reserve(order.size());
  for (const auto key : order) {
    const Cell& c = grid.at(key);
    out.push_back(c.sum / static_cast<double>(c.count));
  }
  return out;
}

TrackResult track_frame(const ImageF& depth, const CameraIntrinsics& k,
                        const CovPointCloud& map_samples, const Pose& prev_pose,
                        const TrackConfig& cfg) {
  const auto raw = backproject_depth(depth, k);
  if (raw.size() < 50) {
    throw TrackingLost("track_frame: fewer than 50 valid depth pixels");
  }
  auto down = voxel_downsample(raw, cfg.voxel_size);
  if (static_cast<int>(down.size()) <= cfg.k_neighbors) {
    throw TrackingLost("track_frame: downsampled cloud too small");
  }
  TrackResult out;
  out.source = estimate_covariances(down, cfg.k_neighbors,
                                    cfg.gicp.regularization_eps);
  out.alignment = gicp_align(out.source, map_samples, prev_pose, cfg.gicp);
  return out;
}

}  // namespace lego
