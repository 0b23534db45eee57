#include "legoslam/codec.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "legoslam/errors.hpp"

namespace lego {

namespace {

constexpr char kMagic[10] = {'L', 'E', 'G', 'O', 'C', 'O', 'D', 'E', 'C', '1'};

Eigen::MatrixXd xavier(int rows, int cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-a, a);
  }
  return m;
}

// Adam with beta1 = 0 (no momentum term)
struct AdamNoMomentum {
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<Eigen::MatrixXd> v;

  void init(const std::vector<Eigen::MatrixXd*>& params) {
    v.clear();
    for (const auto* p : params) v.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
  }
  void step(const std::vector<Eigen::MatrixXd*>& params,
            const std::vector<Eigen::MatrixXd>& grads, double lr) {
    ++t;
    const double corr = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i].cwiseProduct(grads[i]);
      params[i]->array() -=
          lr * grads[i].array() / ((v[i].array() / corr).sqrt() + eps);
    }
  }
};

}  // namespace

Codec::Codec(int high_dim, int hidden, int low_dim, Rng& rng) {
  we1_ = xavier(hidden, high_dim, rng);
  be1_ = Eigen::VectorXd::Zero(hidden);
  we2_ = xavier(low_dim, hidden, rng);
  be2_ = Eigen::VectorXd::Zero(low_dim);
  wd1_ = xavier(hidden, low_dim, rng);
  bd1_ = Eigen::VectorXd::Zero(hidden);
  wd2_ = xavier(high_dim, hidden, rng);
  bd2_ = Eigen::VectorXd::Zero(high_dim);
}

std::size_t Codec::parameter_count() const {
  return static_cast<std::size_t>(we1_.size() + be1_.size() + we2_.size() +
                                  be2_.size() + wd1_.size() + bd1_.size() +
                                  wd2_.size() + bd2_.size());
}

Eigen::VectorXd Codec::encode_vec(const Eigen::VectorXd& x) const {
  if (x.size() != we1_.cols()) {
    throw std::invalid_argument("encode: wrong input dimension");
  }
  return we2_ * (we1_ * x + be1_).cwiseMax(0.0) + be2_;
}

Eigen::VectorXd Codec::decode_vec(const Eigen::VectorXd& z) const {
  if (z.size() != wd1_.cols()) {
    throw std::invalid_argument("decode: wrong input dimension");
  }
  return wd2_ * (wd1_ * z + bd1_).cwiseMax(0.0) + bd2_;
}

Eigen::VectorXd Codec::encode_query(const Eigen::VectorXd& q) const {
  return encode_vec(q);
}

namespace {

// batched per-pixel affine chain over an image: out = w2 relu(w1 x + b1) + b2
ImageD apply_net(const ImageD& in, const Eigen::MatrixXd& w1,
                 const Eigen::VectorXd& b1, const Eigen::MatrixXd& w2,
                 const Eigen::VectorXd& b2) {
  const int n = in.height * in.width;
  Eigen::MatrixXd xs(in.channels, n);  // channels x pixels
  for (int p = 0; p < n; ++p) {
    for (int c = 0; c < in.channels; ++c) xs(c, p) = in.data[static_cast<std::size_t>(p) * in.channels + c];
  }
  Eigen::MatrixXd h = ((w1 * xs).colwise() + b1).cwiseMax(0.0);
  Eigen::MatrixXd y = (w2 * h).colwise() + b2;
  ImageD out(in.height, in.width, static_cast<int>(y.rows()));
  for (int p = 0; p < n; ++p) {
    for (int c = 0; c < out.channels; ++c) out.data[static_cast<std::size_t>(p) * out.channels + c] = y(c, p);
  }
  return out;
}

}  // namespace

ImageD Codec::encode(const ImageD& x) const {
  if (x.channels != high_dim()) {
    throw std::invalid_argument("encode: image channel mismatch");
  }
  return apply_net(x, we1_, be1_, we2_, be2_);
}

ImageD Codec::decode(const ImageD& z) const {
  if (z.channels != low_dim()) {
    throw std::invalid_argument("decode: image channel mismatch");
  }
  return apply_net(z, wd1_, bd1_, wd2_, bd2_);
}

ImageD Codec::decode_backward_input(const ImageD& z,
                                    const ImageD& grad_out) const {
  if (z.channels != low_dim() || grad_out.channels != high_dim() ||
      z.height != grad_out.height || z.width != grad_out.width) {
    throw std::invalid_argument("decode_backward_input: shape mismatch");
  }
  const int n = z.height * z.width;
  Eigen::MatrixXd zs(z.channels, n);
  Eigen::MatrixXd gs(grad_out.channels, n);
  for (int p = 0; p < n; ++p) {
    for (int c = 0; c < z.channels; ++c) zs(c, p) = z.data[static_cast<std::size_t>(p) * z.channels + c];
    for (int c = 0; c < grad_out.channels; ++c) gs(c, p) = grad_out.data[static_cast<std::size_t>(p) * grad_out.channels + c];
  }
  const Eigen::MatrixXd pre = (wd1_ * zs).colwise() + bd1_;
  Eigen::MatrixXd gh = wd2_.transpose() * gs;
  gh = (pre.array() > 0.0).select(gh, 0.0);
  const Eigen::MatrixXd gz = wd1_.transpose() * gh;
  ImageD out(z.height, z.width, z.channels);
  for (int p = 0; p < n; ++p) {
    for (int c = 0; c < z.channels; ++c) out.data[static_cast<std::size_t>(p) * z.channels + c] = gz(c, p);
  }
  return out;
}

double Codec::pretrain(const std::vector<Eigen::VectorXd>& corpus,
                       const PretrainConfig& cfg, Rng& rng) {
  if (corpus.empty()) throw std::invalid_argument("pretrain: empty corpus");
  const int n = static_cast<int>(corpus.size());
  const int d_in = high_dim();

  Eigen::MatrixXd xs(d_in, n);
  for (int i = 0; i < n; ++i) xs.col(i) = corpus[static_cast<std::size_t>(i)];

  std::vector<Eigen::MatrixXd*> params = {&we1_, &we2_, &wd1_, &wd2_};
  Eigen::MatrixXd be1m = be1_, be2m = be2_, bd1m = bd1_, bd2m = bd2_;
  params.push_back(&be1m);
  params.push_back(&be2m);
  params.push_back(&bd1m);
  params.push_back(&bd2m);

  AdamNoMomentum adam;
  adam.init(params);

  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double frac = static_cast<double>(epoch + 1) / cfg.epochs;
    double lr = cfg.lr;
    if (frac > cfg.decay2_at) {
      lr = cfg.decay2_lr;
    } else if (frac > cfg.decay1_at) {
      lr = cfg.decay1_lr;
    }
    // Fisher-Yates with our own rng for reproducibility
    for (int i = n - 1; i > 0; --i) {
      const int j = rng.uniform_int(i + 1);
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    for (int start = 0; start < n; start += cfg.batch) {
      const int b = std::min(cfg.batch, n - start);
      Eigen::MatrixXd x(d_in, b);
      for (int i = 0; i < b; ++i) x.col(i) = xs.col(perm[static_cast<std::size_t>(start + i)]);

      const Eigen::MatrixXd h1p = ((we1_ * x).colwise() + Eigen::VectorXd(be1m));
      const Eigen::MatrixXd h1 = h1p.cwiseMax(0.0);
      const Eigen::MatrixXd z = ((we2_ * h1).colwise() + Eigen::VectorXd(be2m));
      const Eigen::MatrixXd h2p = ((wd1_ * z).colwise() + Eigen::VectorXd(bd1m));
      const Eigen::MatrixXd h2 = h2p.cwiseMax(0.0);
      const Eigen::MatrixXd y = ((wd2_ * h2).colwise() + Eigen::VectorXd(bd2m));

      const double scale = 1.0 / (static_cast<double>(b) * d_in);
      const Eigen::MatrixXd gy = (y - x).array().sign().matrix() * scale;

      Eigen::MatrixXd gh2 = wd2_.transpose() * gy;
      gh2 = (h2p.array() > 0.0).select(gh2, 0.0);
      const Eigen::MatrixXd gz = wd1_.transpose() * gh2;
      Eigen::MatrixXd gh1 = we2_.transpose() * gz;
      gh1 = (h1p.array() > 0.0).select(gh1, 0.0);

      std::vector<Eigen::MatrixXd> grads;
      grads.push_back(gh1 * x.transpose());              // we1
      grads.push_back(gz * h1.transpose());              // we2
      grads.push_back(gh2 * z.transpose());              // wd1
      grads.push_back(gy * h2.transpose());              // wd2
      grads.push_back(gh1.rowwise().sum());              // be1
      grads.push_back(gz.rowwise().sum());               // be2
      grads.push_back(gh2.rowwise().sum());              // bd1
      grads.push_back(gy.rowwise().sum());               // bd2
      adam.step(params, grads, lr);
    }
  }
  be1_ = be1m;
  be2_ = be2m;
  bd1_ = bd1m;
  bd2_ = bd2m;

  // final corpus reconstruction L1
  double l1 = 0.0;
  for (int i = 0; i < n; ++i) {
    l1 += (decode_vec(encode_vec(xs.col(i))) - xs.col(i)).cwiseAbs().sum();
  }
  return l1 / (static_cast<double>(n) * d_in);
}

double Codec::encoder_loss(const ImageD& f_gt, const ImageD& f_render) const {
  const ImageD enc = encode(f_gt);
  double l1 = 0.0;
  for (std::size_t i = 0; i < enc.data.size(); ++i) {
    l1 += std::abs(enc.data[i] - f_render.data[i]);
  }
  return l1 / static_cast<double>(enc.data.size());
}

double Codec::adapt_encoder(const ImageD& f_gt, const ImageD& f_render,
                            int steps, double lr) {
  if (f_gt.channels != high_dim() || f_render.channels != low_dim() ||
      f_gt.height != f_render.height || f_gt.width != f_render.width) {
    throw std::invalid_argument("adapt_encoder: shape mismatch");
  }
  if (steps <= 0) return encoder_loss(f_gt, f_render);

  const int n = f_gt.height * f_gt.width;
  Eigen::MatrixXd x(high_dim(), n);
  Eigen::MatrixXd target(low_dim(), n);
  for (int p = 0; p < n; ++p) {
    for (int c = 0; c < high_dim(); ++c) x(c, p) = f_gt.data[static_cast<std::size_t>(p) * f_gt.channels + c];
    for (int c = 0; c < low_dim(); ++c) target(c, p) = f_render.data[static_cast<std::size_t>(p) * f_render.channels + c];
  }

  Eigen::MatrixXd be1m = be1_, be2m = be2_;
  std::vector<Eigen::MatrixXd*> params = {&we1_, &we2_, &be1m, &be2m};
  AdamNoMomentum adam;
  adam.init(params);

  double loss = 0.0;
  const double scale = 1.0 / (static_cast<double>(n) * low_dim());
  for (int s = 0; s < steps; ++s) {
    const Eigen::MatrixXd h1p = ((we1_ * x).colwise() + Eigen::VectorXd(be1m));
    const Eigen::MatrixXd h1 = h1p.cwiseMax(0.0);
    const Eigen::MatrixXd z = ((we2_ * h1).colwise() + Eigen::VectorXd(be2m));
    loss = (z - target).cwiseAbs().sum() * scale;

    const Eigen::MatrixXd gz = (z - target).array().sign().matrix() * scale;
    Eigen::MatrixXd gh1 = we2_.transpose() * gz;
    gh1 = (h1p.array() > 0.0).select(gh1, 0.0);

    std::vector<Eigen::MatrixXd> grads;
    grads.push_back(gh1 * x.transpose());
    grads.push_back(gz * h1.transpose());
    grads.push_back(gh1.rowwise().sum());
    grads.push_back(gz.rowwise().sum());
    adam.step(params, grads, lr);
  }
  be1_ = be1m;
  be2_ = be2m;
  return encoder_loss(f_gt, f_render);
}

namespace {

void write_matrix(std::ofstream& os, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const auto v = static_cast<float>(m(r, c));
      os.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
}

template <typename Mat>
void read_matrix(std::ifstream& is, Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      float v;
      is.read(reinterpret_cast<char*>(&v), sizeof(v));
      m(r, c) = v;
    }
  }
  if (!is) throw IoError("codec file truncated");
}

}  // namespace

void Codec::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open codec file for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  const std::uint32_t dims[3] = {static_cast<std::uint32_t>(high_dim()),
                                 static_cast<std::uint32_t>(hidden()),
                                 static_cast<std::uint32_t>(low_dim())};
  os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  write_matrix(os, we1_);
  write_matrix(os, be1_);
  write_matrix(os, we2_);
  write_matrix(os, be2_);
  write_matrix(os, wd1_);
  write_matrix(os, bd1_);
  write_matrix(os, wd2_);
  write_matrix(os, bd2_);
  if (!os) throw IoError("failed writing codec file: " + path);
}

Codec Codec::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open codec file: " + path);
  char magic[10];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("bad codec file magic: " + path);
  }
  std::uint32_t dims[3];
  is.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!is) throw IoError("codec file truncated");
  Codec c;
  c.we1_.resize(dims[1], dims[0]);
  c.be1_.resize(dims[1]);
  c.we2_.resize(dims[2], dims[1]);
  c.be2_.resize(dims[2]);
  c.wd1_.resize(dims[1], dims[2]);
  c.bd1_.resize(dims[1]);
  c.wd2_.resize(dims[0], dims[1]);
  c.bd2_.resize(dims[0]);
  read_matrix(is, c.we1_);
  read_matrix(is, c.be1_);
  read_matrix(is, c.we2_);
  read_matrix(is, c.be2_);
  read_matrix(is, c.wd1_);
  read_matrix(is, c.bd1_);
  read_matrix(is, c.wd2_);
  read_matrix(is, c.bd2_);
  return c;
}

bool Codec::encoder_equals(const Codec& o) const {
  return we1_ == o.we1_ && be1_ == o.be1_ && we2_ == o.we2_ && be2_ == o.be2_;
}

bool Codec::decoder_equals(const Codec& o) const {
  return wd1_ == o.wd1_ && bd1_ == o.bd1_ && wd2_ == o.wd2_ && bd2_ == o.bd2_;
}

}  // namespace lego
