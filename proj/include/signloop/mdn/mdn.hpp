#pragma once

// Isotropic Gaussian mixtures over latents: sampling, likelihood, the
// uncertainty cue and the multi-task loss weights.

#include "signloop/core/autodiff.hpp"
#include "signloop/core/errors.hpp"
#include "signloop/core/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

namespace signloop {

/// pi (K), mu (K x D, one component per row), sigma (K, isotropic scale).
struct MDNParams {
  Eigen::VectorXd pi;
  Eigen::MatrixXd mu;
  Eigen::VectorXd sigma;

  [[nodiscard]] int components() const { return static_cast<int>(pi.size()); }
  [[nodiscard]] int dim() const { return static_cast<int>(mu.cols()); }

  void check() const {
    if (pi.size() < 1 || mu.rows() != pi.size() || sigma.size() != pi.size()) throw ConfigError("MDNParams: shape mismatch");
    for (Eigen::Index k = 0; k < pi.size(); ++k) {
      if (!(pi(k) >= 0) || !std::isfinite(pi(k))) throw ConfigError("MDNParams: mixture weight must be finite and >= 0");
      if (!(sigma(k) > 0) || !std::isfinite(sigma(k))) throw ConfigError("MDNParams: sigma must be finite and > 0");
    }
    if (!mu.allFinite()) throw ConfigError("MDNParams: non-finite mean");
  }

  /// Weighted mean of the component means.
  [[nodiscard]] Eigen::VectorXd expected() const { return mu.transpose() * (pi / pi.sum()); }
};

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 0.6;
  double lambda3 = 0.4;
  double hand_multiplier = 3.0;
};

/// Component index drawn from softmax(log pi / temperature).
inline int mdn_select(const Eigen::VectorXd& pi, double temperature, Rng& rng) {
  if (!(temperature > 0)) throw ConfigError("temperature must be > 0");
  if (pi.sum() <= 0) throw ConfigError("degenerate mixture weights (all zero)");
  Eigen::VectorXd logits(pi.size());
  for (Eigen::Index k = 0; k < pi.size(); ++k) {
    logits(k) = pi(k) > 0 ? std::log(pi(k)) / temperature : -std::numeric_limits<double>::infinity();
  }
  const double m = logits.maxCoeff();
  Eigen::VectorXd w = (logits.array() - m).exp();
  std::uniform_real_distribution<double> u(0.0, w.sum());
  double r = u(rng);
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    r -= w(k);
    if (r < 0) return static_cast<int>(k);
  }
  // rounding fell off the end: pick the heaviest component
  Eigen::Index best = 0;
  w.maxCoeff(&best);
  return static_cast<int>(best);
}

inline Eigen::VectorXd mdn_sample(const MDNParams& params, double temperature, Rng& rng) {
  params.check();
  const int k = mdn_select(params.pi, temperature, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd z(params.dim());
  for (int i = 0; i < params.dim(); ++i) z(i) = params.mu(k, i) + params.sigma(k) * n(rng);
  return z;
}

inline Eigen::VectorXd mdn_sample(const MDNParams& params, double temperature, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return mdn_sample(params, temperature, rng);
}

/// Per-component log(pi_k N(z | mu_k, sigma_k^2 I)).
inline Eigen::VectorXd mdn_component_log_density(const MDNParams& params, const Eigen::VectorXd& z) {
  const double D = params.dim();
  const double pi_sum = params.pi.sum();
  Eigen::VectorXd out(params.components());
  for (int k = 0; k < params.components(); ++k) {
    const double s2 = params.sigma(k) * params.sigma(k);
    const double sq = (z.transpose() - params.mu.row(k)).squaredNorm();
    const double log_pi = params.pi(k) > 0 ? std::log(params.pi(k) / pi_sum) : -std::numeric_limits<double>::infinity();
    out(k) = log_pi - 0.5 * D * std::log(2 * std::numbers::pi * s2) - sq / (2 * s2);
  }
  return out;
}

/// -log sum_k pi_k N(z | mu_k, sigma_k^2 I), via log-sum-exp.
inline double mdn_nll(const MDNParams& params, const Eigen::VectorXd& z) {
  params.check();
  if (z.size() != params.dim()) throw ConfigError("mdn_nll: dimension mismatch");
  const Eigen::VectorXd c = mdn_component_log_density(params, z);
  const double m = c.maxCoeff();
  return -(m + std::log((c.array() - m).exp().sum()));
}

/// sum_k pi_k * logistic(||mu_k - z_hat||), pi normalized first.
inline double uncertainty_alpha(const MDNParams& params, const Eigen::VectorXd& z_hat) {
  params.check();
  if (z_hat.size() != params.dim()) throw ConfigError("uncertainty_alpha: dimension mismatch");
  const double total = params.pi.sum();
  double alpha = 0;
  for (int k = 0; k < params.components(); ++k) {
    alpha += params.pi(k) / total * ad::logistic((params.mu.row(k) - z_hat.transpose()).norm());
  }
  return alpha;
}

// ---------------------------------------------------------------------------
// Differentiable forms used in training.

/// Mixture NLL of one step: pi logits (1 x K), mu (1 x K*D, component-major),
/// sigma (1 x K) and a constant target z (1 x D).
inline ad::Var mdn_nll_var(const ad::Var& pi_logits, const ad::Var& mu_flat, const ad::Var& sigma,
                           const Eigen::RowVectorXd& z) {
  const Eigen::Index K = pi_logits.cols();
  const Eigen::Index D = z.size();
  const ad::Var log_pi = ad::transpose(ad::log_softmax_rows(pi_logits));          // K x 1
  const ad::Var mu = ad::reshape(mu_flat, K, D);                                   // K x D
  const ad::Var sq = ad::row_sums(ad::square(ad::sub_row(mu, ad::constant(z))));   // K x 1
  const ad::Var s = ad::transpose(sigma);                                          // K x 1
  const ad::Var var2 = ad::scale(ad::square(s), 2.0);
  const ad::Var log_norm = ad::add_scalar(ad::scale(ad::log(s), static_cast<double>(D)),
                                          0.5 * static_cast<double>(D) * std::log(2 * std::numbers::pi));
  const ad::Var comp = ad::sub(ad::sub(log_pi, log_norm), ad::div(sq, var2));
  return ad::scale(ad::logsumexp_rows(ad::transpose(comp)), -1.0);
}

/// Matched-component upper bound on KL(p || q) between two K-component
/// isotropic mixtures: KL(pi_p || pi_q) + sum_k pi_p,k KL(N_p,k || N_q,k).
/// `q` is a constant reference; p is differentiable.
inline ad::Var mixture_kl_bound_var(const ad::Var& pi_logits, const ad::Var& mu_flat, const ad::Var& sigma,
                                    const MDNParams& q) {
  const Eigen::Index K = pi_logits.cols();
  const Eigen::Index D = q.dim();
  const ad::Var log_p = ad::transpose(ad::log_softmax_rows(pi_logits));  // K x 1
  const ad::Var p = ad::exp(log_p);
  Eigen::MatrixXd log_q(K, 1), q_sigma(K, 1);
  for (Eigen::Index k = 0; k < K; ++k) {
    log_q(k, 0) = std::log(std::max(q.pi(k) / q.pi.sum(), 1e-300));
    q_sigma(k, 0) = q.sigma(k);
  }
  const ad::Var cat = ad::sum(ad::mul(p, ad::sub(log_p, ad::constant(log_q))));
  const ad::Var mu = ad::reshape(mu_flat, K, D);
  const ad::Var sq = ad::row_sums(ad::square(ad::sub(mu, ad::constant(q.mu))));  // K x 1
  const ad::Var s = ad::transpose(sigma);
  const Eigen::MatrixXd qs2 = q_sigma.cwiseAbs2();
  // D log(sq/sp) + (D sp^2 + |mu_p - mu_q|^2) / (2 sq^2) - D/2
  const ad::Var log_ratio = ad::scale(ad::sub(ad::constant(q_sigma.array().log().matrix()), ad::log(s)), static_cast<double>(D));
  const ad::Var quad = ad::div(ad::add(ad::scale(ad::square(s), static_cast<double>(D)), sq), ad::constant(2.0 * qs2));
  const ad::Var gauss = ad::add_scalar(ad::add(log_ratio, quad), -0.5 * static_cast<double>(D));
  return ad::add(cat, ad::sum(ad::mul(p, gauss)));
}

/// Focal loss -(1 - p_t)^gamma log p_t averaged over rows; gamma = 0 is cross-entropy.
inline ad::Var focal_loss_var(const ad::Var& logits, const std::vector<int>& targets, double gamma) {
  const ad::Var log_p = ad::pick(ad::log_softmax_rows(logits), targets);  // n x 1
  ad::Var per_row = ad::scale(log_p, -1.0);
  if (gamma != 0.0) {
    const ad::Var one_minus = ad::add_scalar(ad::scale(ad::exp(log_p), -1.0), 1.0);
    per_row = ad::mul(ad::pow(one_minus, gamma), per_row);
  }
  return ad::mean(per_row);
}

inline ad::Var cross_entropy_var(const ad::Var& logits, const std::vector<int>& targets) {
  return focal_loss_var(logits, targets, 0.0);
}

}  // namespace signloop
