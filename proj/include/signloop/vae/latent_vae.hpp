#pragma once

// Pose VAE: 228 -> h1 -> h2 -> (mu, log_var) in R^D and D -> h2 -> h1 -> 228,
// tanh hidden activations, sum-of-squares reconstruction and closed-form KL.

#include "signloop/core/autodiff.hpp"
#include "signloop/core/errors.hpp"
#include "signloop/core/params.hpp"
#include "signloop/core/rng.hpp"
#include "signloop/motion/motion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace signloop {

using LatentVector = Eigen::VectorXd;

struct VaeConfig {
  int latent_dim = 128;
  int hidden1 = 256;
  int hidden2 = 192;
  int pose_dim = static_cast<int>(PoseVector::kSize);
  std::uint64_t seed = 2;

  void check() const {
    if (latent_dim < 1 || hidden1 < 1 || hidden2 < 1 || pose_dim < 1) throw ConfigError("bad VAE shape");
  }
};

struct Gaussian {
  Eigen::VectorXd mu;
  Eigen::VectorXd log_var;
};

struct VaeLosses {
  double recon = 0;
  double kl = 0;
};

/// Squared error ||p - p_hat||^2 and 0.5 * sum(exp(lv) + mu^2 - 1 - lv).
inline VaeLosses vae_loss(std::span<const double> p, std::span<const double> p_hat, const Eigen::VectorXd& mu,
                          const Eigen::VectorXd& log_var) {
  if (p.size() != p_hat.size() || mu.size() != log_var.size()) throw ConfigError("vae_loss: shape mismatch");
  VaeLosses out;
  for (std::size_t i = 0; i < p.size(); ++i) out.recon += (p[i] - p_hat[i]) * (p[i] - p_hat[i]);
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    out.kl += 0.5 * (std::exp(log_var(i)) + mu(i) * mu(i) - 1.0 - log_var(i));
  }
  return out;
}

/// z = mu + exp(log_var / 2) * eps with eps ~ N(0, I) drawn from `seed`.
inline LatentVector reparameterize(const Eigen::VectorXd& mu, const Eigen::VectorXd& log_var, std::uint64_t seed) {
  if (mu.size() != log_var.size()) throw ConfigError("reparameterize: shape mismatch");
  Rng rng = make_rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  LatentVector z(mu.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i) z(i) = mu(i) + std::exp(0.5 * log_var(i)) * n(rng);
  return z;
}

class LatentVae {
 public:
  explicit LatentVae(VaeConfig cfg) : cfg_(cfg) {
    cfg_.check();
    Rng rng = make_rng(hash_seed(cfg_.seed, "vae"));
    const int P = cfg_.pose_dim, D = cfg_.latent_dim;
    enc1_w_ = params_.add_normal("vae.enc1.w", P, cfg_.hidden1, rng);
    enc1_b_ = params_.add_zeros("vae.enc1.b", 1, cfg_.hidden1);
    enc2_w_ = params_.add_normal("vae.enc2.w", cfg_.hidden1, cfg_.hidden2, rng);
    enc2_b_ = params_.add_zeros("vae.enc2.b", 1, cfg_.hidden2);
    head_w_ = params_.add_normal("vae.head.w", cfg_.hidden2, 2 * D, rng, 0.5);
    head_b_ = params_.add_zeros("vae.head.b", 1, 2 * D);
    dec1_w_ = params_.add_normal("vae.dec1.w", D, cfg_.hidden2, rng);
    dec1_b_ = params_.add_zeros("vae.dec1.b", 1, cfg_.hidden2);
    dec2_w_ = params_.add_normal("vae.dec2.w", cfg_.hidden2, cfg_.hidden1, rng);
    dec2_b_ = params_.add_zeros("vae.dec2.b", 1, cfg_.hidden1);
    out_w_ = params_.add_normal("vae.out.w", cfg_.hidden1, P, rng);
    out_b_ = params_.add_zeros("vae.out.b", 1, P);
  }

  LatentVae(LatentVae&&) noexcept = default;
  LatentVae(const LatentVae&) = delete;
  LatentVae& operator=(const LatentVae&) = delete;

  [[nodiscard]] LatentVae clone() const {
    LatentVae copy(cfg_);
    copy.params_.assign(params_.flatten());
    return copy;
  }

  [[nodiscard]] const VaeConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  [[nodiscard]] const ParamSet& params() const { return params_; }

  /// Rows of `poses` are samples. Returns (mu, log_var), each n x D.
  [[nodiscard]] std::pair<ad::Var, ad::Var> encode_var(const ad::Var& poses) const {
    const ad::Var h1 = ad::tanh(ad::linear(poses, enc1_w_, enc1_b_));
    const ad::Var h2 = ad::tanh(ad::linear(h1, enc2_w_, enc2_b_));
    const ad::Var out = ad::linear(h2, head_w_, head_b_);
    return {ad::cols(out, 0, cfg_.latent_dim), ad::cols(out, cfg_.latent_dim, cfg_.latent_dim)};
  }

  /// Rows of `z` are latents. Returns n x pose_dim.
  [[nodiscard]] ad::Var decode_var(const ad::Var& z) const {
    const ad::Var h2 = ad::tanh(ad::linear(z, dec1_w_, dec1_b_));
    const ad::Var h1 = ad::tanh(ad::linear(h2, dec2_w_, dec2_b_));
    return ad::linear(h1, out_w_, out_b_);
  }

  [[nodiscard]] Gaussian encode(std::span<const double> pose) const {
    if (static_cast<int>(pose.size()) != cfg_.pose_dim) throw ConfigError("vae_encode: pose dimension mismatch");
    ad::NoGradGuard guard;
    const auto [mu, lv] = encode_var(ad::constant(Eigen::Map<const Eigen::RowVectorXd>(pose.data(), cfg_.pose_dim)));
    return {mu.value().row(0).transpose(), lv.value().row(0).transpose()};
  }

  [[nodiscard]] Gaussian encode(const PoseVector& p) const { return encode(std::span<const double>(p.values())); }

  [[nodiscard]] Eigen::VectorXd decode_raw(const LatentVector& z) const {
    if (z.size() != cfg_.latent_dim) throw ConfigError("vae decode: latent dimension mismatch");
    ad::NoGradGuard guard;
    return decode_var(ad::constant(z.transpose())).value().row(0).transpose();
  }

  /// Decoded pose; non-finite outputs are a hard error.
  [[nodiscard]] PoseVector decode(const LatentVector& z) const {
    if (cfg_.pose_dim != static_cast<int>(PoseVector::kSize)) throw ConfigError("decode: VAE pose_dim is not 228");
    const Eigen::VectorXd v = decode_raw(z);
    return PoseVector(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
  }

  /// Batched decode of latent rows (no graph).
  [[nodiscard]] Eigen::MatrixXd decode_rows(const Eigen::MatrixXd& z) const {
    ad::NoGradGuard guard;
    return decode_var(ad::constant(z)).value();
  }

  /// Mean over rows of recon_weight * ||p - p_hat||^2 + kl_weight * KL, with
  /// noise eps (n x D) supplied by the caller so the loss is deterministic.
  [[nodiscard]] ad::Var loss_var(const Eigen::MatrixXd& poses, const Eigen::MatrixXd& eps, double recon_weight = 1.0,
                                 double kl_weight = 1.0) const {
    const ad::Var x = ad::constant(poses);
    const auto [mu, lv] = encode_var(x);
    const ad::Var z = ad::add(mu, ad::mul(ad::exp(ad::scale(lv, 0.5)), ad::constant(eps)));
    const ad::Var recon = ad::sum(ad::square(ad::sub(x, decode_var(z))));
    const ad::Var kl = ad::scale(ad::sum(ad::add_scalar(ad::sub(ad::add(ad::exp(lv), ad::square(mu)), lv), -1.0)), 0.5);
    const ad::Var total = ad::add(ad::scale(recon, recon_weight), ad::scale(kl, kl_weight));
    return ad::scale(total, 1.0 / static_cast<double>(poses.rows()));
  }

 private:
  VaeConfig cfg_;
  ParamSet params_;
  ad::Var enc1_w_, enc1_b_, enc2_w_, enc2_b_, head_w_, head_b_;
  ad::Var dec1_w_, dec1_b_, dec2_w_, dec2_b_, out_w_, out_b_;
};

struct VaeTrainConfig {
  int epochs = 200;
  int batch = 64;
  double lr = 2e-3;
  double kl_weight = 1.0;
  std::uint64_t seed = 3;
};

/// Minibatch Adam on rows of `poses`. Returns the per-epoch mean loss.
inline std::vector<double> vae_train(LatentVae& vae, const Eigen::MatrixXd& poses, const VaeTrainConfig& tc) {
  Rng rng = make_rng(tc.seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Adam opt({.lr = tc.lr});
  std::vector<Eigen::Index> order(static_cast<std::size_t>(poses.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> history;
  const int D = vae.config().latent_dim;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch));
      Eigen::MatrixXd x(static_cast<Eigen::Index>(end - start), poses.cols());
      Eigen::MatrixXd eps(x.rows(), D);
      for (std::size_t i = start; i < end; ++i) x.row(static_cast<Eigen::Index>(i - start)) = poses.row(order[i]);
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = n(rng);
      vae.params().zero_grad();
      const ad::Var loss = vae.loss_var(x, eps, 1.0, tc.kl_weight);
      ad::backward(loss);
      opt.step(vae.params());
      total += loss.scalar();
      ++batches;
    }
    history.push_back(total / std::max(1, batches));
  }
  return history;
}

/// Fraction of total variance retained by decode(mu(p)) over the rows of `poses`.
inline double variance_retention(const LatentVae& vae, const Eigen::MatrixXd& poses) {
  ad::NoGradGuard guard;
  const auto [mu, lv] = vae.encode_var(ad::constant(poses));
  const Eigen::MatrixXd recon = vae.decode_var(mu).value();
  const Eigen::RowVectorXd mean = poses.colwise().mean();
  const double total = (poses.rowwise() - mean).squaredNorm();
  const double resid = (poses - recon).squaredNorm();
  return total > 0 ? 1.0 - resid / total : 1.0;
}

/// Relative error helper shared by the gradient checks: |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Max relative error between backprop gradients of (recon + KL) and central
/// finite differences, over every parameter of `vae`, on pose `p`.
inline double vae_grad_check(LatentVae& vae, std::span<const double> p, double eps, std::uint64_t seed = 7,
                             double recon_weight = 1.0) {
  if (eps < 1e-6 || eps > 1e-4) throw ConfigError("vae_grad_check: eps must lie in [1e-6, 1e-4]");
  const Eigen::MatrixXd x = Eigen::Map<const Eigen::RowVectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
  Rng rng = make_rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd noise(1, vae.config().latent_dim);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = n(rng);

  vae.params().zero_grad();
  ad::backward(vae.loss_var(x, noise, recon_weight));
  const ad::Vec analytic = vae.params().flatten_grad();
  ad::Vec theta = vae.params().flatten();
  auto loss_at = [&](const ad::Vec& t) {
    vae.params().assign(t);
    ad::NoGradGuard guard;
    return vae.loss_var(x, noise, recon_weight).scalar();
  };
  double worst = 0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double orig = theta(i);
    theta(i) = orig + eps;
    const double up = loss_at(theta);
    theta(i) = orig - eps;
    const double down = loss_at(theta);
    theta(i) = orig;
    worst = std::max(worst, relative_error(analytic(i), (up - down) / (2 * eps)));
  }
  vae.params().assign(theta);
  return worst;
}

}  // namespace signloop
