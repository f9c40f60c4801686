#include "signloop/motion/synthetic.hpp"
#include "signloop/vae/latent_vae.hpp"

#include <gtest/gtest.h>

using namespace signloop;

namespace {

VaeConfig tiny() {
  VaeConfig c;
  c.latent_dim = 4;
  c.hidden1 = 6;
  c.hidden2 = 5;
  return c;
}

// Oracle: the closed-form KL of a diagonal Gaussian against N(0, I).
double kl_oracle(const Eigen::VectorXd& mu, const Eigen::VectorXd& lv) {
  double s = 0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) s += std::exp(lv(i)) + mu(i) * mu(i) - 1 - lv(i);
  return s / 2;
}

}  // namespace

TEST(VaeLoss, KlSpotValues) {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(128);
  std::vector<double> p(228, 0.25);
  EXPECT_NEAR(vae_loss(p, p, zero, zero).kl, 0.0, 1e-9);
  EXPECT_EQ(vae_loss(p, p, zero, zero).recon, 0.0);
  Eigen::VectorXd e1 = zero;
  e1(0) = 1.0;
  EXPECT_NEAR(vae_loss(p, p, e1, zero).kl, 0.5, 1e-9);
}

TEST(VaeLoss, KlNonNegativeAndMatchesOracle) {
  Rng rng = make_rng(4);
  std::normal_distribution<double> n(0.0, 2.0);
  std::vector<double> p(3, 0.0);
  for (int trial = 0; trial < 2000; ++trial) {
    Eigen::VectorXd mu(6), lv(6);
    for (int i = 0; i < 6; ++i) {
      mu(i) = n(rng);
      lv(i) = n(rng);
    }
    const double kl = vae_loss(p, p, mu, lv).kl;
    ASSERT_GT(kl, 0.0);
    ASSERT_NEAR(kl, kl_oracle(mu, lv), 1e-9 * std::max(1.0, kl));
  }
}

TEST(VaeLoss, ReconIsSumOfSquares) {
  std::vector<double> a{1, 2, 3}, b{1, 0, 0};
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
  EXPECT_DOUBLE_EQ(vae_loss(a, b, z, z).recon, 13.0);
  EXPECT_THROW(vae_loss(a, std::vector<double>{1, 2}, z, z), ConfigError);
}

TEST(Reparameterize, MonteCarloMoments) {
  const int D = 8, N = 100000;
  const Eigen::VectorXd mu = Eigen::VectorXd::Zero(D), lv = Eigen::VectorXd::Zero(D);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(D), sq = Eigen::VectorXd::Zero(D);
  for (int i = 0; i < N; ++i) {
    const auto z = reparameterize(mu, lv, hash_seed(99, static_cast<std::uint64_t>(i)));
    sum += z;
    sq += z.cwiseAbs2();
  }
  const Eigen::VectorXd mean = sum / N;
  const Eigen::VectorXd var = sq / N - mean.cwiseAbs2();
  for (int d = 0; d < D; ++d) {
    EXPECT_LT(std::abs(mean(d)), 4.0 / std::sqrt(static_cast<double>(N)));
    EXPECT_NEAR(var(d), 1.0, 0.05);
  }
}

TEST(Reparameterize, ZeroNoiseLimitAndDeterminism) {
  Eigen::VectorXd mu(3);
  mu << 1.5, -2.0, 0.25;
  const Eigen::VectorXd lv = Eigen::VectorXd::Constant(3, -40.0);
  EXPECT_LT((reparameterize(mu, lv, 5) - mu).cwiseAbs().maxCoeff(), 1e-8);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  EXPECT_EQ(reparameterize(mu, zero, 5), reparameterize(mu, zero, 5));
  EXPECT_NE(reparameterize(mu, zero, 5), reparameterize(mu, zero, 6));
}

TEST(LatentVae, ZeroWeightsEncodeToStandardNormal) {
  LatentVae vae(tiny());
  vae.params().assign(ad::Vec::Zero(static_cast<Eigen::Index>(vae.params().scalar_count())));
  std::vector<double> p(228, 0.7);
  const auto g = vae.encode(p);
  EXPECT_EQ(g.mu, Eigen::VectorXd::Zero(4));
  EXPECT_EQ(g.log_var, Eigen::VectorXd::Zero(4));
  const auto g2 = vae.encode(p);
  EXPECT_EQ(g2.mu, g.mu);
}

TEST(LatentVae, EncodeIsDeterministicAndShapeChecked) {
  const LatentVae vae(tiny());
  std::vector<double> p(228);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::sin(static_cast<double>(i));
  EXPECT_EQ(vae.encode(p).mu, vae.encode(p).mu);
  EXPECT_THROW(vae.encode(std::vector<double>(10, 0.0)), ConfigError);
  EXPECT_THROW(vae.decode_raw(Eigen::VectorXd::Zero(3)), ConfigError);
  EXPECT_EQ(vae.decode(Eigen::VectorXd::Zero(4)).values().size(), 228u);
}

TEST(LatentVae, GradientCheckTinyNet) {
  LatentVae vae(tiny());
  Rng rng = make_rng(8);
  std::normal_distribution<double> n(0.0, 0.5);
  std::vector<double> p(228);
  for (auto& x : p) x = n(rng);
  EXPECT_LE(vae_grad_check(vae, p, 1e-5), 1e-4);
  EXPECT_THROW(vae_grad_check(vae, p, 1e-3), ConfigError);
}

TEST(LatentVae, ZeroLossConfigurationHasZeroGradient) {
  // zero weights, zero input, zero noise: recon 0 and KL 0 at the optimum
  LatentVae vae(tiny());
  vae.params().assign(ad::Vec::Zero(static_cast<Eigen::Index>(vae.params().scalar_count())));
  vae.params().zero_grad();
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(1, 228);
  const ad::Var loss = vae.loss_var(x, Eigen::MatrixXd::Zero(1, 4));
  EXPECT_EQ(loss.scalar(), 0.0);
  ad::backward(loss);
  EXPECT_EQ(vae.params().flatten_grad().cwiseAbs().maxCoeff(), 0.0);
}

TEST(LatentVae, ReconWeightScalesGradientLinearly) {
  LatentVae vae(tiny());
  const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(1, 228, 0.3);
  const Eigen::MatrixXd eps = Eigen::MatrixXd::Constant(1, 4, 0.2);
  auto grad = [&](double rw, double kw) {
    vae.params().zero_grad();
    ad::backward(vae.loss_var(x, eps, rw, kw));
    return vae.params().flatten_grad();
  };
  const ad::Vec g1 = grad(1.0, 0.0), g2 = grad(2.0, 0.0);
  EXPECT_LT((g2 - 2.0 * g1).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, g1.cwiseAbs().maxCoeff()));
}

TEST(LatentVae, TwoClusterSeparationAfterTraining) {
  std::vector<int> labels;
  const Eigen::MatrixXd poses = two_cluster_poses(200, 6.0, 0.3, 21, &labels);
  VaeConfig cfg = tiny();
  cfg.hidden1 = 24;
  cfg.hidden2 = 16;
  LatentVae vae(cfg);
  vae_train(vae, poses, {.epochs = 40, .batch = 32, .lr = 3e-3});
  ad::NoGradGuard guard;
  const Eigen::MatrixXd mu = vae.encode_var(ad::constant(poses)).first.value();
  // mean silhouette over all points
  double total = 0;
  for (Eigen::Index i = 0; i < mu.rows(); ++i) {
    double a = 0, b = 0;
    int na = 0, nb = 0;
    for (Eigen::Index j = 0; j < mu.rows(); ++j) {
      if (i == j) continue;
      const double d = (mu.row(i) - mu.row(j)).norm();
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
        a += d;
        ++na;
      } else {
        b += d;
        ++nb;
      }
    }
    a /= na;
    b /= nb;
    total += (b - a) / std::max(a, b);
  }
  EXPECT_GT(total / static_cast<double>(mu.rows()), 0.0);
}

TEST(LatentVae, ToyTrainingRetainsVariance) {
  const Eigen::MatrixXd poses = synthetic_poses({.rows = 512, .factors = 6, .factor_scale = 1.0, .noise = 0.01});
  VaeConfig cfg;
  cfg.latent_dim = 8;
  cfg.hidden1 = 64;
  cfg.hidden2 = 48;
  LatentVae vae(cfg);
  const auto hist = vae_train(vae, poses, {.epochs = 150, .batch = 64, .lr = 3e-3});
  EXPECT_LT(hist.back(), hist.front());
  const double kept = variance_retention(vae, poses);
  std::cout << "variance retained " << kept << "\n";
  EXPECT_GE(kept, 0.95);
}
