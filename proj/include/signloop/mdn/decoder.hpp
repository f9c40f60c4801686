#pragma once

// Autoregressive Transformer-MDN decoder.
//
// Step t consumes the previous latent z_{t-1} (a learned start token at t = 1)
// plus a conditioning vector (gloss embedding, duration, emphasis). Each block
// runs causal self-attention over cached inputs, cross-attention over the
// encoder features aligned with steps [t - cross_context + 1, t], and a
// feed-forward layer, each with a residual and layer norm. Heads emit mixture
// logits, means, scales, gloss logits and AU logits.

#include "signloop/core/autodiff.hpp"
#include "signloop/core/errors.hpp"
#include "signloop/core/params.hpp"
#include "signloop/core/rng.hpp"
#include "signloop/mdn/mdn.hpp"

#include <Eigen/Dense>

#include <deque>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace signloop {

struct DecoderConfig {
  int latent_dim = 128;
  int model_dim = 256;
  int feature_dim = 256;
  int blocks = 2;
  int components = 5;
  int vocab = 3000;
  int au_classes = 7;
  int max_context = 64;
  int cross_context = 16;
  double sigma_floor = 1e-4;
  std::uint64_t seed = 4;

  void check() const {
    if (latent_dim < 1 || model_dim < 1 || feature_dim < 1 || blocks < 1) throw ConfigError("bad decoder shape");
    if (components < 1) throw ConfigError("decoder needs at least one mixture component");
    if (vocab < 1 || au_classes < 1) throw ConfigError("decoder vocab/au_classes must be positive");
    if (max_context < 1 || cross_context < 1) throw ConfigError("decoder contexts must be positive");
    if (!(sigma_floor > 0)) throw ConfigError("sigma_floor must be > 0");
  }
};

/// Per-step conditioning taken from the action-segment IR.
struct StepConditioning {
  int gloss = 0;          // vocabulary index; 0 is the unknown/unspecified token
  double duration = 0.0;  // seconds of the owning segment
  double emphasis = 0.0;  // none 0, mild 0.5, strong 1

  bool operator==(const StepConditioning&) const = default;
};

struct StepForward {
  ad::Var pi_logits;  // 1 x K
  ad::Var mu;         // 1 x K*D, component-major
  ad::Var sigma;      // 1 x K
  ad::Var gloss_logits;
  ad::Var au_logits;
};

struct DecoderStepOutput {
  MDNParams mdn;
  Eigen::VectorXd gloss_logits;
  Eigen::VectorXd au_logits;
};

/// Cached per-block keys/values over past step inputs; bounded by max_context.
struct DecoderState {
  long position = 1;  // absolute 1-based index of the next step
  std::vector<std::deque<ad::Var>> keys;
  std::vector<std::deque<ad::Var>> values;

  [[nodiscard]] std::size_t cached() const { return keys.empty() ? 0 : keys.front().size(); }
};

struct SampleMode {
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct TeacherMode {
  Eigen::VectorXd z_true;
};

using DecodeMode = std::variant<SampleMode, TeacherMode>;

class Decoder {
 public:
  explicit Decoder(DecoderConfig cfg) : cfg_(cfg) {
    cfg_.check();
    Rng rng = make_rng(hash_seed(cfg_.seed, "decoder"));
    const int d = cfg_.model_dim, D = cfg_.latent_dim, K = cfg_.components;
    in_z_ = params_.add_normal("dec.in.z", D, d, rng);
    in_b_ = params_.add_zeros("dec.in.b", 1, d);
    start_ = params_.add_normal("dec.in.start", 1, d, rng);
    cond_gloss_ = params_.add_normal("dec.cond.gloss", cfg_.vocab, d, rng, std::sqrt(static_cast<double>(cfg_.vocab)) * 0.5);
    cond_dur_ = params_.add_normal("dec.cond.duration", 1, d, rng, 0.5);
    cond_emph_ = params_.add_normal("dec.cond.emphasis", 1, d, rng, 0.5);
    for (int b = 0; b < cfg_.blocks; ++b) {
      const std::string p = "dec.block" + std::to_string(b) + ".";
      Block blk;
      blk.sq = params_.add_normal(p + "self.q", d, d, rng);
      blk.sk = params_.add_normal(p + "self.k", d, d, rng);
      blk.sv = params_.add_normal(p + "self.v", d, d, rng);
      blk.so = params_.add_normal(p + "self.o", d, d, rng);
      blk.ln1_g = params_.add_ones(p + "ln1.g", 1, d);
      blk.ln1_b = params_.add_zeros(p + "ln1.b", 1, d);
      blk.cq = params_.add_normal(p + "cross.q", d, d, rng);
      blk.ck = params_.add_normal(p + "cross.k", cfg_.feature_dim, d, rng);
      blk.cv = params_.add_normal(p + "cross.v", cfg_.feature_dim, d, rng);
      blk.co = params_.add_normal(p + "cross.o", d, d, rng);
      blk.ln2_g = params_.add_ones(p + "ln2.g", 1, d);
      blk.ln2_b = params_.add_zeros(p + "ln2.b", 1, d);
      blk.f1 = params_.add_normal(p + "ffn.w1", d, 2 * d, rng);
      blk.f1b = params_.add_zeros(p + "ffn.b1", 1, 2 * d);
      blk.f2 = params_.add_normal(p + "ffn.w2", 2 * d, d, rng);
      blk.f2b = params_.add_zeros(p + "ffn.b2", 1, d);
      blk.ln3_g = params_.add_ones(p + "ln3.g", 1, d);
      blk.ln3_b = params_.add_zeros(p + "ln3.b", 1, d);
      blocks_.push_back(std::move(blk));
    }
    pi_w_ = params_.add_normal("dec.head.pi.w", d, K, rng, 0.1);
    pi_b_ = params_.add_zeros("dec.head.pi.b", 1, K);
    mu_w_ = params_.add_normal("dec.head.mu.w", d, K * D, rng);
    mu_b_ = params_.add_zeros("dec.head.mu.b", 1, K * D);
    sigma_w_ = params_.add_normal("dec.head.sigma.w", d, K, rng, 0.1);
    sigma_b_ = params_.add_zeros("dec.head.sigma.b", 1, K);
    gloss_w_ = params_.add_normal("dec.head.gloss.w", d, cfg_.vocab, rng);
    gloss_b_ = params_.add_zeros("dec.head.gloss.b", 1, cfg_.vocab);
    au_w_ = params_.add_normal("dec.head.au.w", d, cfg_.au_classes, rng);
    au_b_ = params_.add_zeros("dec.head.au.b", 1, cfg_.au_classes);
  }

  Decoder(Decoder&&) noexcept = default;
  Decoder(const Decoder&) = delete;
  Decoder& operator=(const Decoder&) = delete;

  [[nodiscard]] Decoder clone() const {
    Decoder copy(cfg_);
    copy.params_.assign(params_.flatten());
    return copy;
  }

  [[nodiscard]] const DecoderConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  [[nodiscard]] const ParamSet& params() const { return params_; }

  [[nodiscard]] DecoderState initial_state(long position = 1) const {
    DecoderState s;
    s.position = position;
    s.keys.resize(static_cast<std::size_t>(cfg_.blocks));
    s.values.resize(static_cast<std::size_t>(cfg_.blocks));
    return s;
  }

  /// Differentiable forward for step state.position. `prev_z` absent -> start token.
  /// Advances the state.
  StepForward forward_step(DecoderState& state, const Eigen::MatrixXd& H, const std::optional<ad::Var>& prev_z,
                           const StepConditioning& cond) const {
    if (H.rows() == 0) throw ConfigError("decode_step: empty feature sequence");
    if (H.cols() != cfg_.feature_dim) throw ConfigError("decode_step: feature dimension mismatch");
    if (state.keys.size() != static_cast<std::size_t>(cfg_.blocks)) throw ConfigError("decode_step: state/config mismatch");
    if (cond.gloss < 0 || cond.gloss >= cfg_.vocab) throw RangeError("decode_step: gloss index outside vocabulary");
    if (prev_z && prev_z->cols() != cfg_.latent_dim) throw ConfigError("decode_step: latent dimension mismatch");

    ad::Var x = prev_z ? ad::add(ad::linear(*prev_z, in_z_, in_b_), ad::row(cond_gloss_, cond.gloss))
                       : ad::add(ad::add(start_, in_b_), ad::row(cond_gloss_, cond.gloss));
    if (cond.duration != 0.0) x = ad::add(x, ad::scale(cond_dur_, cond.duration));
    if (cond.emphasis != 0.0) x = ad::add(x, ad::scale(cond_emph_, cond.emphasis));

    const Eigen::Index hi = std::min<Eigen::Index>(state.position, H.rows());
    const Eigen::Index lo = std::max<Eigen::Index>(1, hi - cfg_.cross_context + 1);
    const ad::Var h_win = ad::constant(H.middleRows(lo - 1, hi - lo + 1));

    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const Block& blk = blocks_[b];
      auto& keys = state.keys[b];
      auto& values = state.values[b];
      keys.push_back(ad::matmul(x, blk.sk));
      values.push_back(ad::matmul(x, blk.sv));
      if (keys.size() > static_cast<std::size_t>(cfg_.max_context)) {
        keys.pop_front();
        values.pop_front();
      }
      const std::vector<ad::Var> kv(keys.begin(), keys.end()), vv(values.begin(), values.end());
      const ad::Var a = ad::matmul(ad::attention(ad::matmul(x, blk.sq), ad::vstack(kv), ad::vstack(vv)), blk.so);
      x = ad::layer_norm_rows(ad::add(x, a), blk.ln1_g, blk.ln1_b);
      const ad::Var c = ad::matmul(
          ad::attention(ad::matmul(x, blk.cq), ad::matmul(h_win, blk.ck), ad::matmul(h_win, blk.cv)), blk.co);
      x = ad::layer_norm_rows(ad::add(x, c), blk.ln2_g, blk.ln2_b);
      const ad::Var f = ad::linear(ad::silu(ad::linear(x, blk.f1, blk.f1b)), blk.f2, blk.f2b);
      x = ad::layer_norm_rows(ad::add(x, f), blk.ln3_g, blk.ln3_b);
    }
    ++state.position;
    return {ad::linear(x, pi_w_, pi_b_), ad::linear(x, mu_w_, mu_b_),
            ad::add_scalar(ad::softplus(ad::linear(x, sigma_w_, sigma_b_)), cfg_.sigma_floor),
            ad::linear(x, gloss_w_, gloss_b_), ad::linear(x, au_w_, au_b_)};
  }

  [[nodiscard]] MDNParams to_params(const StepForward& f) const {
    MDNParams p;
    p.pi = ad::softmax_rows_value(f.pi_logits.value()).row(0).transpose();
    p.mu.resize(cfg_.components, cfg_.latent_dim);
    for (int k = 0; k < cfg_.components; ++k) p.mu.row(k) = f.mu.value().block(0, k * cfg_.latent_dim, 1, cfg_.latent_dim);
    p.sigma = f.sigma.value().row(0).transpose();
    return p;
  }

  /// Inference step: teacher mode returns z_true, sample mode draws from the
  /// predicted mixture with temperature-scaled component logits.
  std::pair<DecoderStepOutput, Eigen::VectorXd> decode_step(DecoderState& state, const Eigen::MatrixXd& H,
                                                            const std::optional<Eigen::VectorXd>& prev_z,
                                                            const StepConditioning& cond, const DecodeMode& mode) const {
    if (const auto* s = std::get_if<SampleMode>(&mode); s && !(s->temperature > 0)) {
      throw ConfigError("decode_step: temperature must be > 0");
    }
    ad::NoGradGuard guard;
    std::optional<ad::Var> prev;
    if (prev_z) prev = ad::constant(prev_z->transpose());
    const StepForward f = forward_step(state, H, prev, cond);
    DecoderStepOutput out{to_params(f), f.gloss_logits.value().row(0).transpose(), f.au_logits.value().row(0).transpose()};
    Eigen::VectorXd z;
    if (const auto* t = std::get_if<TeacherMode>(&mode)) {
      if (t->z_true.size() != cfg_.latent_dim) throw ConfigError("decode_step: teacher latent dimension mismatch");
      z = t->z_true;
    } else {
      const auto& s = std::get<SampleMode>(mode);
      z = mdn_sample(out.mdn, s.temperature, s.seed);
    }
    return {std::move(out), std::move(z)};
  }

  /// Teacher-forced differentiable pass over targets z_1..z_T (rows of Z).
  std::vector<StepForward> forward_sequence(const Eigen::MatrixXd& H, const Eigen::MatrixXd& Z,
                                            const std::vector<StepConditioning>& conds) const {
    if (static_cast<Eigen::Index>(conds.size()) != Z.rows()) throw ConfigError("forward_sequence: conditioning length mismatch");
    DecoderState state = initial_state();
    std::vector<StepForward> out;
    out.reserve(static_cast<std::size_t>(Z.rows()));
    for (Eigen::Index t = 0; t < Z.rows(); ++t) {
      std::optional<ad::Var> prev;
      if (t > 0) prev = ad::constant(Z.row(t - 1));
      out.push_back(forward_step(state, H, prev, conds[static_cast<std::size_t>(t)]));
    }
    return out;
  }

 private:
  struct Block {
    ad::Var sq, sk, sv, so, ln1_g, ln1_b;
    ad::Var cq, ck, cv, co, ln2_g, ln2_b;
    ad::Var f1, f1b, f2, f2b, ln3_g, ln3_b;
  };

  DecoderConfig cfg_;
  ParamSet params_;
  ad::Var in_z_, in_b_, start_, cond_gloss_, cond_dur_, cond_emph_;
  std::vector<Block> blocks_;
  ad::Var pi_w_, pi_b_, mu_w_, mu_b_, sigma_w_, sigma_b_, gloss_w_, gloss_b_, au_w_, au_b_;
};

}  // namespace signloop
