#pragma once

// Synthetic pose corpora for toy training and fixtures.

#include "signloop/core/rng.hpp"
#include "signloop/motion/motion.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

namespace signloop {

struct SyntheticPoseConfig {
  int rows = 512;
  int factors = 6;
  double factor_scale = 1.0;
  double noise = 0.01;
  std::uint64_t seed = 17;
};

/// Rows are poses: a low-rank linear map of Gaussian factors plus small noise.
inline Eigen::MatrixXd synthetic_poses(const SyntheticPoseConfig& c) {
  Rng rng = make_rng(hash_seed(c.seed, "poses"));
  std::normal_distribution<double> n(0.0, 1.0);
  const auto P = static_cast<Eigen::Index>(PoseVector::kSize);
  Eigen::MatrixXd basis(c.factors, P);
  for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = n(rng) / std::sqrt(static_cast<double>(c.factors));
  Eigen::MatrixXd f(c.rows, c.factors);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = c.factor_scale * n(rng);
  Eigen::MatrixXd out = f * basis;
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += c.noise * n(rng);
  return out;
}

/// Two Gaussian clusters of poses; labels returned through `labels` (0/1).
inline Eigen::MatrixXd two_cluster_poses(int rows, double separation, double spread, std::uint64_t seed,
                                         std::vector<int>* labels = nullptr) {
  Rng rng = make_rng(hash_seed(seed, "clusters"));
  std::normal_distribution<double> n(0.0, 1.0);
  const auto P = static_cast<Eigen::Index>(PoseVector::kSize);
  Eigen::RowVectorXd dir(P);
  for (Eigen::Index i = 0; i < P; ++i) dir(i) = n(rng);
  dir *= separation / (2.0 * dir.norm());
  Eigen::MatrixXd out(rows, P);
  if (labels != nullptr) labels->assign(static_cast<std::size_t>(rows), 0);
  for (int r = 0; r < rows; ++r) {
    const int lab = r % 2;
    for (Eigen::Index i = 0; i < P; ++i) out(r, i) = spread * n(rng);
    out.row(r) += lab == 0 ? dir : Eigen::RowVectorXd(-dir);
    if (labels != nullptr) (*labels)[static_cast<std::size_t>(r)] = lab;
  }
  return out;
}

}  // namespace signloop
