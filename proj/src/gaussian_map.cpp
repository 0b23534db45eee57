#include "legoslam/gaussian_map.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "legoslam/errors.hpp"

namespace lego {

namespace {
constexpr char kMagic[8] = {'L', 'E', 'G', 'O', 'M', 'A', 'P', '1'};

double logit(double p) { return std::log(p / (1.0 - p)); }
}  // namespace

std::uint64_t GaussianMap::insert(const LanguageGaussian& g,
                                  std::uint64_t anchor_kf) {
  positions_.push_back(g.position);
  // renormalize only when off-unit; file-born values stay bit-exact
  Quat q = g.rotation;
  if (std::abs(q.norm() - 1.0) > 1e-6) q.normalize();
  rotations_.push_back(q);
  log_scales_.push_back(g.log_scale);
  opacity_logits_.push_back(g.opacity_logit);
  colors_.push_back(g.color);
  features_.conservativeResize(static_cast<Eigen::Index>(size()), feature_dim_);
  features_.row(static_cast<Eigen::Index>(size()) - 1) =
      g.feature.transpose();
  const std::uint64_t id = next_id_++;
  ids_.push_back(id);
  anchors_.push_back(anchor_kf);
  known_anchors_.insert(anchor_kf);
  return id;
}

void GaussianMap::remove_indices(const std::vector<std::size_t>& indices) {
  if (indices.empty()) return;
  const std::size_t n = size();
  std::vector<bool> dead(n, false);
  for (const auto i : indices) dead[i] = true;

  std::size_t w = 0;
  Eigen::MatrixXd new_features(
      static_cast<Eigen::Index>(n - indices.size()), feature_dim_);
  for (std::size_t r = 0; r < n; ++r) {
    if (dead[r]) continue;
    positions_[w] = positions_[r];
    rotations_[w] = rotations_[r];
    log_scales_[w] = log_scales_[r];
    opacity_logits_[w] = opacity_logits_[r];
    colors_[w] = colors_[r];
    ids_[w] = ids_[r];
    anchors_[w] = anchors_[r];
    new_features.row(static_cast<Eigen::Index>(w)) =
        features_.row(static_cast<Eigen::Index>(r));
    ++w;
  }
  positions_.resize(w);
  rotations_.resize(w);
  log_scales_.resize(w);
  opacity_logits_.resize(w);
  colors_.resize(w);
  ids_.resize(w);
  anchors_.resize(w);
  features_ = std::move(new_features);
}

std::optional<std::size_t> GaussianMap::index_of(std::uint64_t id) const {
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (ids_[i] == id) return i;
  }
  return std::nullopt;
}

LanguageGaussian GaussianMap::gaussian(std::size_t i) const {
  LanguageGaussian g;
  g.position = positions_[i];
  g.rotation = rotations_[i];
  g.log_scale = log_scales_[i];
  g.opacity_logit = opacity_logits_[i];
  g.color = colors_[i];
  g.feature = features_.row(static_cast<Eigen::Index>(i)).transpose();
  return g;
}

bool GaussianMap::finite() const {
  for (std::size_t i = 0; i < size(); ++i) {
    if (!positions_[i].allFinite() || !log_scales_[i].allFinite() ||
        !colors_[i].allFinite() || !std::isfinite(opacity_logits_[i]) ||
        !rotations_[i].coeffs().allFinite()) {
      return false;
    }
  }
  return features_.allFinite();
}

std::vector<std::uint64_t> insert_from_keyframe(
    GaussianMap& map, const Keyframe& kf, const CovPointCloud& source,
    const Image<std::uint8_t>& coverage, const Codec& codec,
    const InsertConfig& cfg, Rng& rng) {
  std::vector<std::uint64_t> new_ids;
  const bool has_features = !kf.feat_gt.empty();

  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3& p_cam = source.points[i];
    if (p_cam.z() <= 0.0) continue;
    const double u = kf.intrinsics.fx * p_cam.x() / p_cam.z() + kf.intrinsics.cx;
    const double v = kf.intrinsics.fy * p_cam.y() / p_cam.z() + kf.intrinsics.cy;
    const int px = static_cast<int>(std::lround(u));
    const int py = static_cast<int>(std::lround(v));
    if (px < 0 || px >= kf.intrinsics.width || py < 0 ||
        py >= kf.intrinsics.height) {
      continue;
    }
    if (!coverage.at(py, px)) continue;

    LanguageGaussian g;
    g.position = kf.pose.apply(p_cam);

    // scale and rotation from the reused tracking scatter covariance
    Eigen::SelfAdjointEigenSolver<Mat3> es(source.scatter[i]);
    Mat3 axes = es.eigenvectors();
    if (axes.determinant() < 0.0) axes.col(0) = -axes.col(0);
    g.rotation = Quat(kf.pose.rotation_matrix() * axes).normalized();
    for (int a = 0; a < 3; ++a) {
      const double s = std::sqrt(std::max(es.eigenvalues()[a], 0.0));
      g.log_scale[a] = std::log(std::clamp(s, cfg.scale_min, cfg.scale_max));
    }

    g.opacity_logit = logit(cfg.init_opacity);
    for (int c = 0; c < 3; ++c) g.color[c] = kf.rgb.at(py, px, c);

    if (has_features && !cfg.random_features) {
      Eigen::VectorXd pixel(kf.feat_gt.channels);
      for (int c = 0; c < kf.feat_gt.channels; ++c) pixel[c] = kf.feat_gt.at(py, px, c);
      g.feature = codec.encode_vec(pixel);
    } else {
      g.feature = Eigen::VectorXd::Zero(map.feature_dim());
      if (cfg.random_features) {
        for (int c = 0; c < map.feature_dim(); ++c) {
          g.feature[c] = cfg.random_feature_sigma * rng.normal();
        }
      }
    }

    new_ids.push_back(map.insert(g, kf.id));
    if (cfg.duplicate) {
      LanguageGaussian dup = g;
      for (int a = 0; a < 3; ++a) {
        dup.position[a] += rng.uniform(-cfg.duplicate_jitter, cfg.duplicate_jitter);
      }
      new_ids.push_back(map.insert(dup, kf.id));
    }
  }
  return new_ids;
}

void apply_rigid_correction(GaussianMap& map, std::uint64_t kf_id,
                            const Pose& delta) {
  if (!map.known_anchor(kf_id)) {
    throw std::invalid_argument("apply_rigid_correction: unknown keyframe id");
  }
  const bool is_identity = delta.rotation.w() == 1.0 &&
                           delta.rotation.vec().isZero(0.0) &&
                           delta.translation.isZero(0.0);
  if (is_identity) return;

  const auto& anchors = map.anchors();
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (anchors[i] != kf_id) continue;
    map.positions()[i] = delta.apply(map.positions()[i]);
    map.rotations()[i] = (delta.rotation * map.rotations()[i]).normalized();
  }
}

namespace {

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError(std::string("map file truncated reading ") + what);
  return v;
}

}  // namespace

void serialize_map(const GaussianMap& map, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open map file for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, static_cast<std::uint32_t>(map.feature_dim()));
  write_pod(os, static_cast<std::uint64_t>(map.size()));
  for (std::size_t i = 0; i < map.size(); ++i) {
    for (int a = 0; a < 3; ++a) write_pod(os, static_cast<float>(map.positions()[i][a]));
    write_pod(os, static_cast<float>(map.rotations()[i].w()));
    write_pod(os, static_cast<float>(map.rotations()[i].x()));
    write_pod(os, static_cast<float>(map.rotations()[i].y()));
    write_pod(os, static_cast<float>(map.rotations()[i].z()));
    for (int a = 0; a < 3; ++a) write_pod(os, static_cast<float>(map.log_scales()[i][a]));
    write_pod(os, static_cast<float>(map.opacity_logits()[i]));
    for (int a = 0; a < 3; ++a) write_pod(os, static_cast<float>(map.colors()[i][a]));
    for (int c = 0; c < map.feature_dim(); ++c) {
      write_pod(os, static_cast<float>(map.features()(static_cast<Eigen::Index>(i), c)));
    }
    write_pod(os, map.anchors()[i]);
  }
  if (!os) throw IoError("failed writing map file: " + path);
}

GaussianMap deserialize_map(const std::string& path,
                            std::optional<int> expected_dim) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open map file: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("bad map file magic: " + path);
  }
  const auto dim = read_pod<std::uint32_t>(is, "feature dim");
  if (dim == 0 || dim > 4096) {
    throw IoError("map file declares unreasonable feature dim");
  }
  if (expected_dim && static_cast<int>(dim) != *expected_dim) {
    throw IoError("map feature dimension mismatch: file has " +
                  std::to_string(dim) + ", expected " +
                  std::to_string(*expected_dim));
  }
  const auto count = read_pod<std::uint64_t>(is, "count");

  GaussianMap map(static_cast<int>(dim));
  for (std::uint64_t i = 0; i < count; ++i) {
    LanguageGaussian g;
    g.feature.resize(dim);
    for (int a = 0; a < 3; ++a) g.position[a] = read_pod<float>(is, "position");
    const float qw = read_pod<float>(is, "rotation");
    const float qx = read_pod<float>(is, "rotation");
    const float qy = read_pod<float>(is, "rotation");
    const float qz = read_pod<float>(is, "rotation");
    g.rotation = Quat(qw, qx, qy, qz);
    for (int a = 0; a < 3; ++a) g.log_scale[a] = read_pod<float>(is, "scale");
    g.opacity_logit = read_pod<float>(is, "opacity");
    for (int a = 0; a < 3; ++a) g.color[a] = read_pod<float>(is, "color");
    for (std::uint32_t c = 0; c < dim; ++c) {
      g.feature[c] = read_pod<float>(is, "feature");
    }
    const auto anchor = read_pod<std::uint64_t>(is, "anchor");
    map.insert(g, anchor);
  }
  return map;
}

std::uint64_t map_content_hash(const GaussianMap& map) {
  // FNV-1a over the serialized attribute stream
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (std::size_t i = 0; i < map.size(); ++i) {
    mix(map.positions()[i].data(), sizeof(double) * 3);
    mix(map.rotations()[i].coeffs().data(), sizeof(double) * 4);
    mix(map.log_scales()[i].data(), sizeof(double) * 3);
    mix(&map.opacity_logits()[i], sizeof(double));
    mix(map.colors()[i].data(), sizeof(double) * 3);
    mix(&map.ids()[i], sizeof(std::uint64_t));
    mix(&map.anchors()[i], sizeof(std::uint64_t));
  }
  mix(map.features().data(),
      sizeof(double) * static_cast<std::size_t>(map.features().size()));
  return h;
}

}  // namespace lego
