#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "legoslam/codec.hpp"
#include "legoslam/geometry.hpp"
#include "legoslam/gicp.hpp"
#include "legoslam/image.hpp"

namespace lego {

// One map primitive. Scale is stored as log-scale and opacity as a logit so
// both can be optimized unconstrained.
struct LanguageGaussian {
  Vec3 position = Vec3::Zero();
  Quat rotation{1.0, 0.0, 0.0, 0.0};
  Vec3 log_scale = Vec3::Zero();
  double opacity_logit = 0.0;
  Vec3 color = Vec3::Zero();
  Eigen::VectorXd feature;
};

struct Keyframe {
  std::uint64_t id = 0;
  Pose pose;       // world <- camera
  ImageF rgb;      // HxWx3, [0,1]
  ImageF depth;    // HxW meters, 0 = invalid
  ImageF feat_gt;  // HxWxD teacher features; empty in geometric-only mode
  Image<int> labels;          // synthetic GT class ids, -1 void; may be empty
  Eigen::VectorXd signature;  // codebook histogram, empty until computed
  CameraIntrinsics intrinsics;
};

// Language-embedded Gaussian map. Storage is struct-of-arrays; IDs are
// stable until the owning Gaussian is pruned.
class GaussianMap {
 public:
  explicit GaussianMap(int feature_dim) : feature_dim_(feature_dim) {}

  int feature_dim() const { return feature_dim_; }
  std::size_t size() const { return positions_.size(); }

  std::uint64_t insert(const LanguageGaussian& g, std::uint64_t anchor_kf);

  // `indices` must be sorted ascending, unique and in range.
  void remove_indices(const std::vector<std::size_t>& indices);

  std::optional<std::size_t> index_of(std::uint64_t id) const;

  LanguageGaussian gaussian(std::size_t i) const;

  std::vector<Vec3>& positions() { return positions_; }
  const std::vector<Vec3>& positions() const { return positions_; }
  std::vector<Quat>& rotations() { return rotations_; }
  const std::vector<Quat>& rotations() const { return rotations_; }
  std::vector<Vec3>& log_scales() { return log_scales_; }
  const std::vector<Vec3>& log_scales() const { return log_scales_; }
  std::vector<double>& opacity_logits() { return opacity_logits_; }
  const std::vector<double>& opacity_logits() const { return opacity_logits_; }
  std::vector<Vec3>& colors() { return colors_; }
  const std::vector<Vec3>& colors() const { return colors_; }
  Eigen::MatrixXd& features() { return features_; }  // size() x d, row per Gaussian
  const Eigen::MatrixXd& features() const { return features_; }

  const std::vector<std::uint64_t>& ids() const { return ids_; }
  const std::vector<std::uint64_t>& anchors() const { return anchors_; }
  bool known_anchor(std::uint64_t kf_id) const {
    return known_anchors_.count(kf_id) > 0;
  }

  double opacity(std::size_t i) const {
    return 1.0 / (1.0 + std::exp(-opacity_logits_[i]));
  }

  bool finite() const;  // no NaN/Inf in any attribute

 private:
  int feature_dim_;
  std::uint64_t next_id_ = 0;
  std::vector<Vec3> positions_;
  std::vector<Quat> rotations_;
  std::vector<Vec3> log_scales_;
  std::vector<double> opacity_logits_;
  std::vector<Vec3> colors_;
  Eigen::MatrixXd features_{0, 0};
  std::vector<std::uint64_t> ids_;
  std::vector<std::uint64_t> anchors_;
  std::set<std::uint64_t> known_anchors_;
};

struct InsertConfig {
  double scale_min = 1e-4;  // m, clamp on sqrt-eigenvalues
  double scale_max = 1.0;
  double init_opacity = 0.5;
  bool random_features = false;  // ablation: random instead of encoder prior
  double random_feature_sigma = 0.1;
  bool duplicate = false;  // redundancy stress for the pruning study
  double duplicate_jitter = 0.004;
};

// Creates one Gaussian per source point whose projection lands on a covered
// pixel. Scale/rotation come from the reused tracking scatter covariance,
// the feature from the encoder prior at that pixel. Returns new IDs.
std::vector<std::uint64_t> insert_from_keyframe(
    GaussianMap& map, const Keyframe& kf, const CovPointCloud& source,
    const Image<std::uint8_t>& coverage, const Codec& codec,
    const InsertConfig& cfg, Rng& rng);

// Rigidly moves every Gaussian anchored to kf_id. Throws
// std::invalid_argument for an unknown keyframe.
void apply_rigid_correction(GaussianMap& map, std::uint64_t kf_id,
                            const Pose& delta);

// Little-endian binary map file (magic "LEGOMAP1").
void serialize_map(const GaussianMap& map, const std::string& path);
GaussianMap deserialize_map(const std::string& path,
                            std::optional<int> expected_dim = std::nullopt);

std::uint64_t map_content_hash(const GaussianMap& map);

}  // namespace lego
