#pragma once

// Causal Conformer-style encoder with per-layer state caching.
//
// Each block: u1 = LN(u + Conv(u) + Attn(u)); u = LN(u1 + FFN(u1)), where Conv
// is a causal depthwise convolution followed by a pointwise projection and
// Attn is single-head attention over a bounded window of past frames
// (including the current one). A feature is emitted every
// `downsample_factor`-th post-stack frame.
//
// encode_step runs time-major with cached keys/values; encode_batch runs
// layer-major over the whole sequence and is the causal reference.

#include "signloop/core/errors.hpp"
#include "signloop/core/rng.hpp"
#include "signloop/encoder/mel.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace signloop {

struct EncoderConfig {
  int input_dim = 80;
  int layers = 6;
  int dim = 256;
  int downsample_factor = 4;
  int conv_kernel = 15;
  int max_context = 64;  // attention window, in input frames
  int ffn_mult = 4;
  std::uint64_t seed = 1;

  void check() const {
    if (layers < 1) throw ConfigError("encoder layers must be >= 1");
    if (dim < 8) throw ConfigError("encoder dim must be >= 8");
    if (downsample_factor < 1) throw ConfigError("downsample_factor must be >= 1");
    if (conv_kernel < 1) throw ConfigError("conv_kernel must be >= 1");
    if (max_context < 1) throw ConfigError("encoder max_context must be >= 1");
    if (input_dim < 1 || ffn_mult < 1) throw ConfigError("bad encoder shape");
  }
};

struct FeatureFrame {
  Eigen::VectorXd h;
  long source_first = 0;  // 1-based input frame indices summarized
  long source_last = 0;
};

struct EncoderLayerWeights {
  Eigen::MatrixXd conv_kernel;  // kernel x dim, row j applies to input t-(kernel-1)+j
  Eigen::RowVectorXd conv_bias;
  Eigen::MatrixXd conv_w;
  Eigen::RowVectorXd conv_b;
  Eigen::MatrixXd wq, wk, wv, wo;
  Eigen::RowVectorXd ln1_g, ln1_b;
  Eigen::MatrixXd ffn_w1;
  Eigen::RowVectorXd ffn_b1;
  Eigen::MatrixXd ffn_w2;
  Eigen::RowVectorXd ffn_b2;
  Eigen::RowVectorXd ln2_g, ln2_b;
};

struct EncoderWeights {
  Eigen::MatrixXd proj_w;
  Eigen::RowVectorXd proj_b;
  std::vector<EncoderLayerWeights> layers;

  /// Seeded normal(0, 1/fan_in) weights, zero biases, unit LN gains.
  static EncoderWeights random(const EncoderConfig& cfg) {
    cfg.check();
    Rng rng = make_rng(hash_seed(cfg.seed, "encoder"));
    auto normal = [&rng](Eigen::Index r, Eigen::Index c) {
      std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(r)));
      Eigen::MatrixXd m(r, c);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
      return m;
    };
    const int d = cfg.dim;
    EncoderWeights w;
    w.proj_w = normal(cfg.input_dim, d);
    w.proj_b = Eigen::RowVectorXd::Zero(d);
    for (int l = 0; l < cfg.layers; ++l) {
      EncoderLayerWeights L;
      L.conv_kernel = normal(cfg.conv_kernel, d);
      L.conv_bias = Eigen::RowVectorXd::Zero(d);
      L.conv_w = normal(d, d);
      L.conv_b = Eigen::RowVectorXd::Zero(d);
      L.wq = normal(d, d);
      L.wk = normal(d, d);
      L.wv = normal(d, d);
      L.wo = normal(d, d);
      L.ln1_g = Eigen::RowVectorXd::Ones(d);
      L.ln1_b = Eigen::RowVectorXd::Zero(d);
      L.ffn_w1 = normal(d, d * cfg.ffn_mult);
      L.ffn_b1 = Eigen::RowVectorXd::Zero(d * cfg.ffn_mult);
      L.ffn_w2 = normal(d * cfg.ffn_mult, d);
      L.ffn_b2 = Eigen::RowVectorXd::Zero(d);
      L.ln2_g = Eigen::RowVectorXd::Ones(d);
      L.ln2_b = Eigen::RowVectorXd::Zero(d);
      w.layers.push_back(std::move(L));
    }
    return w;
  }
};

/// Per-layer caches plus the input frame counter. Memory is bounded by
/// max_context keys/values and conv_kernel-1 conv inputs per layer.
struct EncoderState {
  struct Layer {
    std::deque<Eigen::RowVectorXd> keys;
    std::deque<Eigen::RowVectorXd> values;
    std::deque<Eigen::RowVectorXd> conv_history;
  };
  std::vector<Layer> layers;
  long frames_seen = 0;
  int config_layers = 0;
  int config_dim = 0;

  [[nodiscard]] std::size_t cached_rows() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.keys.size() + l.values.size() + l.conv_history.size();
    return n;
  }
};

namespace detail {

inline Eigen::RowVectorXd silu_row(const Eigen::RowVectorXd& x) {
  return x.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
}

inline Eigen::RowVectorXd layer_norm_row(const Eigen::RowVectorXd& x, const Eigen::RowVectorXd& g,
                                         const Eigen::RowVectorXd& b, double eps = 1e-5) {
  const double mu = x.mean();
  const double var = (x.array() - mu).square().mean();
  return ((x.array() - mu) / std::sqrt(var + eps) * g.array() + b.array()).matrix();
}

}  // namespace detail

class StreamEncoder {
 public:
  explicit StreamEncoder(EncoderConfig cfg) : cfg_(cfg), w_(EncoderWeights::random(cfg)) {}
  StreamEncoder(EncoderConfig cfg, EncoderWeights weights) : cfg_(cfg), w_(std::move(weights)) {
    cfg_.check();
    if (w_.layers.size() != static_cast<std::size_t>(cfg_.layers)) throw ConfigError("encoder weights/layers mismatch");
  }

  [[nodiscard]] const EncoderConfig& config() const { return cfg_; }
  [[nodiscard]] const EncoderWeights& weights() const { return w_; }

  [[nodiscard]] EncoderState initial_state() const {
    EncoderState s;
    s.layers.resize(static_cast<std::size_t>(cfg_.layers));
    s.config_layers = cfg_.layers;
    s.config_dim = cfg_.dim;
    return s;
  }

  /// Consumes one Mel frame; returns a feature on every downsample_factor-th input.
  std::optional<FeatureFrame> encode_step(const MelFrame& x, EncoderState& state) const {
    if (x.size() != cfg_.input_dim) throw ConfigError("encode_step: input dimension mismatch");
    if (state.layers.empty()) state = initial_state();
    if (state.config_layers != cfg_.layers || state.config_dim != cfg_.dim) {
      throw ConfigError("encode_step: state produced by a different encoder config");
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.dim));
    const auto K = static_cast<std::size_t>(cfg_.conv_kernel);
    Eigen::RowVectorXd u = x.transpose() * w_.proj_w + w_.proj_b;
    for (int l = 0; l < cfg_.layers; ++l) {
      const auto& L = w_.layers[static_cast<std::size_t>(l)];
      auto& S = state.layers[static_cast<std::size_t>(l)];

      // causal depthwise conv over [history..., u]
      Eigen::RowVectorXd conv = L.conv_bias;
      const std::size_t have = S.conv_history.size();
      for (std::size_t j = 0; j < K; ++j) {
        // row j of the kernel multiplies input t-(K-1)+j
        const std::size_t back = K - 1 - j;  // 0 = current frame
        if (back == 0) conv += L.conv_kernel.row(static_cast<Eigen::Index>(j)).cwiseProduct(u);
        else if (back <= have) conv += L.conv_kernel.row(static_cast<Eigen::Index>(j)).cwiseProduct(S.conv_history[have - back]);
      }
      const Eigen::RowVectorXd c = detail::silu_row(conv * L.conv_w + L.conv_b);

      S.keys.push_back(u * L.wk);
      S.values.push_back(u * L.wv);
      if (S.keys.size() > static_cast<std::size_t>(cfg_.max_context)) {
        S.keys.pop_front();
        S.values.pop_front();
      }
      const Eigen::RowVectorXd q = u * L.wq;
      Eigen::VectorXd scores(static_cast<Eigen::Index>(S.keys.size()));
      for (std::size_t i = 0; i < S.keys.size(); ++i) scores(static_cast<Eigen::Index>(i)) = q.dot(S.keys[i]) * scale;
      const double m = scores.maxCoeff();
      const Eigen::VectorXd p = (scores.array() - m).exp();
      Eigen::RowVectorXd ctx = Eigen::RowVectorXd::Zero(cfg_.dim);
      for (std::size_t i = 0; i < S.values.size(); ++i) ctx += p(static_cast<Eigen::Index>(i)) * S.values[i];
      ctx /= p.sum();
      const Eigen::RowVectorXd a = ctx * L.wo;

      if (K > 1) {
        S.conv_history.push_back(u);
        if (S.conv_history.size() > K - 1) S.conv_history.pop_front();
      }

      const Eigen::RowVectorXd u1 = detail::layer_norm_row(u + c + a, L.ln1_g, L.ln1_b);
      const Eigen::RowVectorXd f = detail::silu_row(u1 * L.ffn_w1 + L.ffn_b1) * L.ffn_w2 + L.ffn_b2;
      u = detail::layer_norm_row(u1 + f, L.ln2_g, L.ln2_b);
    }
    ++state.frames_seen;
    if (state.frames_seen % cfg_.downsample_factor != 0) return std::nullopt;
    return FeatureFrame{u.transpose(), state.frames_seen - cfg_.downsample_factor + 1, state.frames_seen};
  }

  /// Feeds a chunk of frames through encode_step.
  std::vector<FeatureFrame> encode_chunk(std::span<const MelFrame> xs, EncoderState& state) const {
    std::vector<FeatureFrame> out;
    for (const auto& x : xs) {
      if (auto f = encode_step(x, state)) out.push_back(std::move(*f));
    }
    return out;
  }

  /// Layer-major causal reference over the whole sequence.
  [[nodiscard]] std::vector<FeatureFrame> encode_batch(std::span<const MelFrame> xs) const {
    if (xs.empty()) throw ConfigError("encode_batch: empty input");
    const auto T = static_cast<Eigen::Index>(xs.size());
    const int d = cfg_.dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Eigen::MatrixXd X(T, cfg_.input_dim);
    for (Eigen::Index t = 0; t < T; ++t) {
      if (xs[static_cast<std::size_t>(t)].size() != cfg_.input_dim) throw ConfigError("encode_batch: input dimension mismatch");
      X.row(t) = xs[static_cast<std::size_t>(t)].transpose();
    }
    Eigen::MatrixXd U = (X * w_.proj_w).rowwise() + w_.proj_b;
    for (const auto& L : w_.layers) {
      const Eigen::MatrixXd Kmat = U * L.wk, Vmat = U * L.wv, Qmat = U * L.wq;
      Eigen::MatrixXd next(T, d);
      for (Eigen::Index t = 0; t < T; ++t) {
        Eigen::RowVectorXd conv = L.conv_bias;
        for (Eigen::Index j = 0; j < cfg_.conv_kernel; ++j) {
          const Eigen::Index src = t - (cfg_.conv_kernel - 1) + j;
          if (src >= 0) conv += L.conv_kernel.row(j).cwiseProduct(U.row(src));
        }
        const Eigen::RowVectorXd c = detail::silu_row(conv * L.conv_w + L.conv_b);

        const Eigen::Index lo = std::max<Eigen::Index>(0, t - cfg_.max_context + 1);
        const Eigen::Index n = t - lo + 1;
        const Eigen::VectorXd scores = (Kmat.middleRows(lo, n) * Qmat.row(t).transpose()) * scale;
        const Eigen::VectorXd p = (scores.array() - scores.maxCoeff()).exp();
        const Eigen::RowVectorXd ctx = (p.transpose() * Vmat.middleRows(lo, n)) / p.sum();
        const Eigen::RowVectorXd a = ctx * L.wo;

        const Eigen::RowVectorXd u1 = detail::layer_norm_row(U.row(t) + c + a, L.ln1_g, L.ln1_b);
        const Eigen::RowVectorXd f = detail::silu_row(u1 * L.ffn_w1 + L.ffn_b1) * L.ffn_w2 + L.ffn_b2;
        next.row(t) = detail::layer_norm_row(u1 + f, L.ln2_g, L.ln2_b);
      }
      U = std::move(next);
    }
    std::vector<FeatureFrame> out;
    const long f = cfg_.downsample_factor;
    for (long n = 1; n * f <= T; ++n) {
      out.push_back({U.row(n * f - 1).transpose(), (n - 1) * f + 1, n * f});
    }
    return out;
  }

 private:
  EncoderConfig cfg_;
  EncoderWeights w_;
};

}  // namespace signloop
