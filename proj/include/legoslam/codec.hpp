#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "legoslam/image.hpp"
#include "legoslam/random.hpp"

namespace lego {

// Scene-adaptive per-pixel codec: a two-layer ReLU encoder compressing
// D-dim teacher features to the compact d-dim map space, and a mirrored
// decoder lifting them back. Per-pixel means 1x1 receptive field: encoding an
// image equals encoding each pixel vector independently.
class Codec {
 public:
  Codec(int high_dim, int hidden, int low_dim, Rng& rng);

  int high_dim() const { return static_cast<int>(we1_.cols()); }
  int hidden() const { return static_cast<int>(we1_.rows()); }
  int low_dim() const { return static_cast<int>(we2_.rows()); }
  std::size_t parameter_count() const;

  Eigen::VectorXd encode_vec(const Eigen::VectorXd& x) const;
  Eigen::VectorXd decode_vec(const Eigen::VectorXd& z) const;

  // Alias of encode_vec for query projection into the compact space.
  Eigen::VectorXd encode_query(const Eigen::VectorXd& q) const;

  ImageD encode(const ImageD& x) const;  // HxWxD -> HxWxd
  ImageD decode(const ImageD& z) const;  // HxWxd -> HxWxD

  // Gradient of a scalar loss w.r.t. the decoder input, given the cotangent
  // on the decoder output. Decoder weights are untouched.
  ImageD decode_backward_input(const ImageD& z, const ImageD& grad_out) const;

  struct PretrainConfig {
    int epochs = 150;
    int batch = 1024;
    double lr = 1e-3;
    // staged decay keeps the L1 floor low without per-step schedules
    double decay1_at = 0.6, decay1_lr = 1e-4;
    double decay2_at = 0.85, decay2_lr = 2e-5;
  };

  // Autoencoder pretraining, L1 reconstruction, Adam with beta1 = 0.
  // Returns the final corpus reconstruction L1 (mean abs per channel).
  double pretrain(const std::vector<Eigen::VectorXd>& corpus,
                  const PretrainConfig& cfg, Rng& rng);

  // Decoupled online adaptation: gradient steps on
  // L_enc = L1(encode(f_gt), f_render) updating encoder weights only.
  // Returns the loss after the last step.
  double adapt_encoder(const ImageD& f_gt, const ImageD& f_render, int steps,
                       double lr = 1e-4);

  double encoder_loss(const ImageD& f_gt, const ImageD& f_render) const;

  void save(const std::string& path) const;
  static Codec load(const std::string& path);

  bool encoder_equals(const Codec& o) const;
  bool decoder_equals(const Codec& o) const;

 private:
  Codec() = default;

  // encoder: we2 * relu(we1 x + be1) + be2 ; decoder mirrored
  Eigen::MatrixXd we1_, we2_, wd1_, wd2_;
  Eigen::VectorXd be1_, be2_, bd1_, bd2_;
};

}  // namespace lego
