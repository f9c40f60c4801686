#pragma once

// Multi-task objective and teacher-forced training for the decoder.

#include "signloop/core/autodiff.hpp"
#include "signloop/core/params.hpp"
#include "signloop/mdn/decoder.hpp"
#include "signloop/mdn/mdn.hpp"
#include "signloop/motion/motion.hpp"
#include "signloop/vae/latent_vae.hpp"

#include <Eigen/Dense>

#include <vector>

namespace signloop {

/// One teacher-forced training sequence.
struct SequenceExample {
  Eigen::MatrixXd features;                     // H, n x feature_dim (n >= 1)
  Eigen::MatrixXd latents;                      // targets z_1..z_T, T x D
  std::vector<StepConditioning> conditioning;   // T
  std::vector<int> gloss;                       // T target gloss indices (empty: no gloss term)
  std::vector<int> au;                          // T target AU classes (empty: no AU term)
  Eigen::MatrixXd poses;                        // T x 228 target poses (empty: no pose terms)
  double weight = 1.0;
};

struct LossParts {
  double total = 0;
  double body = 0;
  double hand = 0;
  double gloss = 0;
  double au = 0;
};

struct LossVars {
  ad::Var total, body, hand, gloss, au;

  [[nodiscard]] LossParts values() const {
    return {total.scalar(), body.scalar(), hand.scalar(), gloss.scalar(), au.scalar()};
  }
};

/// total = l1 (body + hand_multiplier * hand) + l2 * gloss + l3 * au.
/// body/hand: per-step sum of squared error over the pose subranges, averaged
/// over steps. gloss: cross-entropy. au: focal loss with `focal_gamma`.
inline LossVars training_loss_var(const ad::Var& pred_poses, const Eigen::MatrixXd& target_poses,
                                  const ad::Var& gloss_logits, const std::vector<int>& gloss_targets,
                                  const ad::Var& au_logits, const std::vector<int>& au_targets, const LossWeights& w,
                                  double focal_gamma = 2.0) {
  const auto T = static_cast<double>(pred_poses.rows());
  const ad::Var diff = ad::sub(pred_poses, ad::constant(target_poses));
  const ad::Var body = ad::scale(
      ad::sum(ad::square(ad::cols(diff, PoseVector::kBodyBegin, PoseVector::kBodyEnd - PoseVector::kBodyBegin))), 1.0 / T);
  const ad::Var hand = ad::scale(
      ad::sum(ad::square(ad::cols(diff, PoseVector::kHandBegin, PoseVector::kHandEnd - PoseVector::kHandBegin))), 1.0 / T);
  const ad::Var gloss = cross_entropy_var(gloss_logits, gloss_targets);
  const ad::Var au = focal_loss_var(au_logits, au_targets, focal_gamma);
  const ad::Var pose_term = ad::scale(ad::add(body, ad::scale(hand, w.hand_multiplier)), w.lambda1);
  const ad::Var total = ad::add(ad::add(pose_term, ad::scale(gloss, w.lambda2)), ad::scale(au, w.lambda3));
  return {total, body, hand, gloss, au};
}

/// Plain-value form over a batch of steps (rows).
inline LossParts training_loss(const Eigen::MatrixXd& pred_poses, const Eigen::MatrixXd& target_poses,
                               const Eigen::MatrixXd& gloss_logits, const std::vector<int>& gloss_targets,
                               const Eigen::MatrixXd& au_logits, const std::vector<int>& au_targets,
                               const LossWeights& w, double focal_gamma = 2.0) {
  if (pred_poses.rows() != target_poses.rows() || pred_poses.cols() != target_poses.cols() ||
      gloss_logits.rows() != static_cast<Eigen::Index>(gloss_targets.size()) ||
      au_logits.rows() != static_cast<Eigen::Index>(au_targets.size())) {
    throw ConfigError("training_loss: misaligned shapes");
  }
  ad::NoGradGuard guard;
  return training_loss_var(ad::constant(pred_poses), target_poses, ad::constant(gloss_logits), gloss_targets,
                           ad::constant(au_logits), au_targets, w, focal_gamma)
      .values();
}

struct ObjectiveConfig {
  LossWeights weights{};
  double focal_gamma = 2.0;
  double nll_weight = 1.0;
};

namespace detail {

inline ad::Var stack_rows(const std::vector<StepForward>& steps, ad::Var StepForward::*field) {
  std::vector<ad::Var> rows;
  rows.reserve(steps.size());
  for (const auto& s : steps) rows.push_back(s.*field);
  return ad::vstack(rows);
}

/// Mixture mean sum_k softmax(pi)_k mu_k for one step, 1 x D.
inline ad::Var expected_latent(const StepForward& s, int K, int D) {
  return ad::matmul(ad::softmax_rows(s.pi_logits), ad::reshape(s.mu, K, D));
}

}  // namespace detail

/// Teacher-forced objective for one sequence: mean mixture NLL (scaled by
/// nll_weight) plus whichever multi-task terms the example carries. Pose
/// terms decode the mixture mean through the (frozen) VAE.
inline ad::Var sequence_objective(const Decoder& decoder, const LatentVae* vae, const SequenceExample& ex,
                                  const ObjectiveConfig& oc, std::vector<StepForward>* steps_out = nullptr) {
  const auto& cfg = decoder.config();
  std::vector<StepForward> steps = decoder.forward_sequence(ex.features, ex.latents, ex.conditioning);
  const auto T = static_cast<double>(steps.size());
  std::vector<ad::Var> nlls;
  nlls.reserve(steps.size());
  for (std::size_t t = 0; t < steps.size(); ++t) {
    nlls.push_back(mdn_nll_var(steps[t].pi_logits, steps[t].mu, steps[t].sigma, ex.latents.row(static_cast<Eigen::Index>(t))));
  }
  ad::Var total = ad::scale(ad::sum(ad::vstack(nlls)), oc.nll_weight / T);
  const LossWeights& w = oc.weights;
  if (!ex.gloss.empty()) {
    total = ad::add(total, ad::scale(cross_entropy_var(detail::stack_rows(steps, &StepForward::gloss_logits), ex.gloss), w.lambda2));
  }
  if (!ex.au.empty()) {
    total = ad::add(total, ad::scale(focal_loss_var(detail::stack_rows(steps, &StepForward::au_logits), ex.au, oc.focal_gamma),
                                     w.lambda3));
  }
  if (vae != nullptr && ex.poses.size() > 0) {
    std::vector<ad::Var> zs;
    for (const auto& s : steps) zs.push_back(detail::expected_latent(s, cfg.components, cfg.latent_dim));
    const ad::Var pred = vae->decode_var(ad::vstack(zs));
    const ad::Var diff = ad::sub(pred, ad::constant(ex.poses));
    const ad::Var body = ad::scale(ad::sum(ad::square(ad::cols(diff, 0, PoseVector::kBodyEnd))), 1.0 / T);
    const ad::Var hand = ad::scale(
        ad::sum(ad::square(ad::cols(diff, PoseVector::kHandBegin, PoseVector::kHandEnd - PoseVector::kHandBegin))), 1.0 / T);
    total = ad::add(total, ad::scale(ad::add(body, ad::scale(hand, w.hand_multiplier)), w.lambda1));
  }
  if (steps_out != nullptr) *steps_out = std::move(steps);
  return total;
}

/// Mean mixture NLL of a sequence under teacher forcing (no graph).
inline double sequence_nll(const Decoder& decoder, const SequenceExample& ex) {
  ad::NoGradGuard guard;
  ObjectiveConfig oc;
  SequenceExample bare = ex;
  bare.gloss.clear();
  bare.au.clear();
  bare.poses.resize(0, 0);
  return sequence_objective(decoder, nullptr, bare, oc).scalar();
}

struct DecoderTrainConfig {
  int steps = 200;
  double lr = 1e-2;
  int batch = 1;  // sequences averaged per optimizer step
  ObjectiveConfig objective{};
};

/// Adam over the decoder, cycling through `data` `batch` sequences at a time.
/// Returns the per-step objective.
inline std::vector<double> train_decoder(Decoder& decoder, const LatentVae* vae, const std::vector<SequenceExample>& data,
                                         const DecoderTrainConfig& tc) {
  if (data.empty()) throw ConfigError("train_decoder: empty dataset");
  if (tc.batch < 1) throw ConfigError("train_decoder: batch must be >= 1");
  Adam opt({.lr = tc.lr});
  std::vector<double> history;
  std::size_t cursor = 0;
  for (int s = 0; s < tc.steps; ++s) {
    decoder.params().zero_grad();
    std::vector<ad::Var> losses;
    for (int b = 0; b < tc.batch; ++b) {
      losses.push_back(sequence_objective(decoder, vae, data[cursor % data.size()], tc.objective));
      ++cursor;
    }
    const ad::Var loss = ad::scale(ad::sum(ad::vstack(losses)), 1.0 / tc.batch);
    ad::backward(loss);
    opt.step(decoder.params());
    history.push_back(loss.scalar());
  }
  return history;
}

/// Max relative error of backprop vs central differences over all decoder parameters.
inline double decoder_grad_check(Decoder& decoder, const LatentVae* vae, const SequenceExample& ex, double eps,
                                 const ObjectiveConfig& oc = {}) {
  decoder.params().zero_grad();
  ad::backward(sequence_objective(decoder, vae, ex, oc));
  const ad::Vec analytic = decoder.params().flatten_grad();
  ad::Vec theta = decoder.params().flatten();
  auto loss_at = [&](const ad::Vec& t) {
    decoder.params().assign(t);
    ad::NoGradGuard guard;
    return sequence_objective(decoder, vae, ex, oc).scalar();
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
  decoder.params().assign(theta);
  return worst;
}

}  // namespace signloop
