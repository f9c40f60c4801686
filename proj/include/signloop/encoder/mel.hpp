#pragma once

// Log-Mel front-end: Hann-windowed frames, FFTW power spectrum, HTK-style
// triangular filterbank, natural log with an energy floor.

#include "signloop/core/errors.hpp"

#include <fftw3.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

namespace signloop {

struct MelConfig {
  int sample_rate = 16000;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int n_fft = 512;
  int n_mels = 80;
  double f_min = 0.0;
  double f_max = 0.0;  // 0 -> Nyquist
  double log_floor = 1e-10;

  [[nodiscard]] int window() const { return static_cast<int>(std::lround(sample_rate * window_ms / 1000.0)); }
  [[nodiscard]] int hop() const { return static_cast<int>(std::lround(sample_rate * hop_ms / 1000.0)); }

  void check() const {
    if (sample_rate < 8000) throw ConfigError("sample_rate must be >= 8000");
    if (window() < 2 || hop() < 1) throw ConfigError("mel window/hop too small");
    if (n_fft < window()) throw ConfigError("n_fft must cover the analysis window");
    if (n_mels < 1) throw ConfigError("n_mels must be positive");
  }
};

using MelFrame = Eigen::VectorXd;

/// Number of complete analysis frames in `n` samples.
inline long mel_frame_count(long n, const MelConfig& cfg) {
  return n < cfg.window() ? 0 : (n - cfg.window()) / cfg.hop() + 1;
}

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Real-input FFT plan owning its aligned buffers.
class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * static_cast<std::size_t>(n)));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * static_cast<std::size_t>(n / 2 + 1)));
    std::lock_guard lock(fftw_planner_mutex());  // planner is not thread-safe
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  /// |X_k|^2 for k in [0, n/2].
  Eigen::VectorXd power(std::span<const double> frame) {
    std::fill(in_, in_ + n_, 0.0);
    std::copy(frame.begin(), frame.end(), in_);
    fftw_execute(plan_);
    Eigen::VectorXd p(n_ / 2 + 1);
    for (int k = 0; k <= n_ / 2; ++k) p(k) = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
    return p;
  }

 private:
  int n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

}  // namespace detail

/// Triangular filters, one row per mel bin, over n_fft/2+1 FFT bins.
inline Eigen::MatrixXd mel_filterbank(const MelConfig& cfg) {
  const int bins = cfg.n_fft / 2 + 1;
  const double f_max = cfg.f_max > 0 ? cfg.f_max : cfg.sample_rate / 2.0;
  const double m_lo = detail::hz_to_mel(cfg.f_min), m_hi = detail::hz_to_mel(f_max);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels + 2));
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    edges[static_cast<std::size_t>(i)] = detail::mel_to_hz(m_lo + (m_hi - m_lo) * i / (cfg.n_mels + 1));
  }
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(cfg.n_mels, bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      if (f > lo && f < mid) fb(m, k) = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi) fb(m, k) = (hi - f) / (hi - mid);
    }
  }
  return fb;
}

/// Periodic Hann window of length n.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

/// Streaming front-end: push arbitrary sample chunks, receive every completed frame.
/// Output is independent of how the input is chunked.
class MelFrontend {
 public:
  explicit MelFrontend(MelConfig cfg = {})
      : cfg_(cfg), fft_((cfg.check(), cfg.n_fft)), window_(hann_window(cfg.window())), fb_(mel_filterbank(cfg)) {}

  [[nodiscard]] const MelConfig& config() const { return cfg_; }

  std::vector<MelFrame> push(std::span<const float> samples) {
    pending_.insert(pending_.end(), samples.begin(), samples.end());
    std::vector<MelFrame> out;
    const auto win = static_cast<std::size_t>(cfg_.window());
    const auto hop = static_cast<std::size_t>(cfg_.hop());
    std::size_t pos = 0;
    while (pos + win <= pending_.size()) {
      out.push_back(frame_at(std::span<const float>(pending_).subspan(pos, win)));
      pos += hop;
    }
    pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(std::min(pos, pending_.size())));
    frames_emitted_ += static_cast<long>(out.size());
    return out;
  }

  /// Power spectrum of one windowed frame (exposed for oracle comparison).
  Eigen::VectorXd power_spectrum(std::span<const float> frame) {
    std::vector<double> buf(frame.size());
    for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = static_cast<double>(frame[i]) * window_[i];
    return fft_.power(buf);
  }

  [[nodiscard]] const Eigen::MatrixXd& filterbank() const { return fb_; }
  [[nodiscard]] long frames_emitted() const { return frames_emitted_; }

 private:
  MelFrame frame_at(std::span<const float> frame) {
    const Eigen::VectorXd mel = fb_ * power_spectrum(frame);
    return mel.unaryExpr([floor = cfg_.log_floor](double e) { return std::log(std::max(e, floor)); });
  }

  MelConfig cfg_;
  detail::RealFft fft_;
  std::vector<double> window_;
  Eigen::MatrixXd fb_;
  std::vector<float> pending_;
  long frames_emitted_ = 0;
};

/// Whole-signal convenience wrapper; empty or sub-window input is an error.
inline std::vector<MelFrame> mel_frontend(std::span<const float> pcm, const MelConfig& cfg = {}) {
  cfg.check();
  if (pcm.empty()) throw ConfigError("mel_frontend: empty input");
  if (static_cast<long>(pcm.size()) < cfg.window()) throw ConfigError("mel_frontend: input shorter than one window");
  MelFrontend fe(cfg);
  return fe.push(pcm);
}

}  // namespace signloop
