#pragma once

// Windowed local re-synthesis of an edited subsequence.

#include "signloop/core/errors.hpp"
#include "signloop/core/rng.hpp"
#include "signloop/ir/generate.hpp"
#include "signloop/ir/patch.hpp"
#include "signloop/mdn/decoder.hpp"
#include "signloop/motion/motion.hpp"
#include "signloop/vae/latent_vae.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

namespace signloop {

struct EditEvent {
  FrameIndex t_edit = 1;
  ir::Patch patch;
  std::uint64_t seq_no = 0;
};

struct ResampleRequest {
  EditEvent event;
  WindowParams window;
  std::uint64_t seed = 0;
};

struct ResampleReport {
  FrameRange window;
  long frames_regenerated = 0;
  double elapsed_us = 0;
  long context_len = 0;
  std::uint64_t seq_no = 0;
  bool semantic = true;
  std::vector<double> alphas;  // uncertainty of each regenerated frame

  [[nodiscard]] nlohmann::ordered_json to_json() const {
    return {{"seq_no", seq_no},         {"t_min", window.first},           {"t_max", window.last},
            {"frames", frames_regenerated}, {"elapsed_us", elapsed_us}, {"context_len", context_len},
            {"semantic", semantic}};
  }
};

/// Everything the hook reads but never mutates.
struct ResampleModel {
  const Decoder* decoder = nullptr;
  const LatentVae* vae = nullptr;
  const Eigen::MatrixXd* features = nullptr;  // encoder output H, one row per frame
  const ir::GlossVocab* vocab = nullptr;
  double fps = 25.0;
  double temperature = 1.0;

  void check() const {
    if (!decoder || !vae || !features || !vocab) throw ConfigError("ResampleModel: missing component");
    if (!(fps > 0)) throw ConfigError("fps must be > 0");
    if (!(temperature > 0)) throw ConfigError("temperature must be > 0");
    if (decoder->config().latent_dim != vae->config().latent_dim) throw ConfigError("decoder/VAE latent dimension mismatch");
  }
};

/// Session state the hook rewrites: frames, their latents and the IR.
struct MotionTrack {
  SeqBuffer frames;
  std::vector<LatentVector> latents;
  std::vector<ir::ActionSegment> segments;
};

inline std::uint64_t edit_seed(std::uint64_t session_seed, std::uint64_t seq_no) { return hash_seed(session_seed, seq_no); }

/// Regenerates the window around the edit. Validation happens before any write,
/// so a rejected patch or out-of-range t_edit leaves `track` untouched.
inline ResampleReport apply_edit(MotionTrack& track, const ResampleRequest& req, const ResampleModel& model) {
  const auto start = std::chrono::steady_clock::now();
  model.check();
  req.window.check();
  const long T = track.frames.length();
  if (static_cast<long>(track.latents.size()) != T) throw StateError("apply_edit: latents out of step with frames");
  const FrameRange w = compute_window(req.event.t_edit, req.window.delta, T);
  ir::PatchResult patched = ir::apply_patch(track.segments, req.event.patch, model.fps);

  const FrameRange ctx = context_range(w.first, req.window.k);
  const auto conds = ir::conditioning_for_range(patched.segments, *model.vocab, model.fps, ctx.first, w.last);
  const Decoder& dec = *model.decoder;
  DecoderState state = dec.initial_state(ctx.first);
  std::optional<Eigen::VectorXd> prev;
  if (ctx.first > 1) prev = track.latents[static_cast<std::size_t>(ctx.first - 2)];

  std::size_t ci = 0;
  for (FrameIndex t = ctx.first; t < w.first; ++t, ++ci) {
    const LatentVector& z = track.latents[static_cast<std::size_t>(t - 1)];
    dec.decode_step(state, *model.features, prev, conds[ci], TeacherMode{z});
    prev = z;
  }

  std::vector<LatentVector> fresh;
  std::vector<Frame> frames;
  std::vector<double> alphas;
  alphas.reserve(static_cast<std::size_t>(w.size()));
  fresh.reserve(static_cast<std::size_t>(w.size()));
  frames.reserve(static_cast<std::size_t>(w.size()));
  const std::uint64_t seed = req.seed;
  for (FrameIndex t = w.first; t <= w.last; ++t, ++ci) {
    auto [out, z] =
        dec.decode_step(state, *model.features, prev, conds[ci], SampleMode{model.temperature, hash_seed(seed, static_cast<std::uint64_t>(t))});
    frames.push_back({model.vae->decode(z), t});
    alphas.push_back(uncertainty_alpha(out.mdn, z));
    prev = z;
    fresh.push_back(std::move(z));
  }

  track.frames.write_back(w.first, frames);
  for (std::size_t i = 0; i < fresh.size(); ++i) track.latents[static_cast<std::size_t>(w.first - 1) + i] = std::move(fresh[i]);
  track.segments = std::move(patched.segments);

  ResampleReport r;
  r.window = w;
  r.frames_regenerated = w.size();
  r.context_len = ctx.size();
  r.seq_no = req.event.seq_no;
  r.semantic = patched.semantic;
  r.alphas = std::move(alphas);
  r.elapsed_us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count();
  return r;
}

struct DrainResult {
  std::vector<ResampleReport> reports;
  std::optional<std::string> error;  // set when an event was rejected; it stays at the queue front
};

/// Applies queued edits in order with per-edit seeds derived from `session_seed`.
/// A rejected event stops the drain; earlier edits persist.
inline DrainResult drain_queue(MotionTrack& track, std::deque<EditEvent>& events, const WindowParams& window,
                               std::uint64_t session_seed, const ResampleModel& model) {
  DrainResult out;
  while (!events.empty()) {
    const EditEvent& e = events.front();
    try {
      out.reports.push_back(apply_edit(track, {e, window, edit_seed(session_seed, e.seq_no)}, model));
    } catch (const ir::ValidationError& err) {
      out.error = std::string(err.code()) + " at " + err.path() + ": " + err.what();
      return out;
    } catch (const RangeError& err) {
      out.error = err.what();
      return out;
    }
    events.pop_front();
  }
  return out;
}

/// Sequential sampling of a whole track from the decoder, used to seed sessions
/// and benchmarks.
inline MotionTrack generate_track(const ResampleModel& model, const std::vector<ir::ActionSegment>& segments, long T,
                                  std::uint64_t seed, std::size_t capacity = 0) {
  model.check();
  if (T < 1) throw ConfigError("generate_track: T must be >= 1");
  MotionTrack track{SeqBuffer(capacity == 0 ? static_cast<std::size_t>(T) : capacity), {}, segments};
  const auto conds = ir::conditioning_for_range(segments, *model.vocab, model.fps, 1, T);
  DecoderState state = model.decoder->initial_state();
  std::optional<Eigen::VectorXd> prev;
  for (long t = 1; t <= T; ++t) {
    auto [out, z] = model.decoder->decode_step(state, *model.features, prev, conds[static_cast<std::size_t>(t - 1)],
                                               SampleMode{model.temperature, hash_seed(seed, static_cast<std::uint64_t>(t))});
    track.frames.append(model.vae->decode(z));
    prev = z;
    track.latents.push_back(std::move(z));
  }
  return track;
}

struct CostSample {
  long T = 0;
  long delta = 0;
  double mean_us = 0;
};

/// Mean wall time of single random-position edits for each (T, delta).
/// Tracks are filled with VAE-decoded random latents; only the edit is timed.
inline std::vector<CostSample> cost_probe(const std::vector<long>& T_values, const std::vector<long>& deltas, int trials,
                                          const Decoder& decoder, const LatentVae& vae, const ir::GlossVocab& vocab, long k,
                                          std::uint64_t seed) {
  if (trials < 1) throw ConfigError("cost_probe: trials must be >= 1");
  for (long d : deltas) {
    if (d < 1) throw ConfigError("cost_probe: delta must be >= 1");
  }
  std::vector<CostSample> out;
  Rng rng = make_rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (long T : T_values) {
    if (T < 1) throw ConfigError("cost_probe: T must be >= 1");
    const int D = decoder.config().latent_dim;
    Eigen::MatrixXd H(T, decoder.config().feature_dim);
    for (Eigen::Index i = 0; i < H.size(); ++i) H.data()[i] = n(rng);
    MotionTrack track{SeqBuffer(static_cast<std::size_t>(T)), {}, {}};
    for (long t = 0; t < T; ++t) {
      LatentVector z(D);
      for (int i = 0; i < D; ++i) z(i) = n(rng);
      track.frames.append(vae.decode(z));
      track.latents.push_back(std::move(z));
    }
    track.segments = {ir::simple_segment(vocab.name(vocab.size() > 1 ? 1 : 0), static_cast<double>(T) / 25.0)};
    const ResampleModel model{&decoder, &vae, &H, &vocab, 25.0, 1.0};
    for (long delta : deltas) {
      std::uniform_int_distribution<long> pos(1, T);
      double total = 0;
      for (int i = 0; i < trials; ++i) {
        ir::Patch p{0, {{"emphasis", i % 2 == 0 ? "strong" : "none"}}};
        const EditEvent e{pos(rng), p, static_cast<std::uint64_t>(i)};
        total += apply_edit(track, {e, {delta, k}, edit_seed(seed, static_cast<std::uint64_t>(i))}, model).elapsed_us;
      }
      out.push_back({T, delta, total / trials});
    }
  }
  return out;
}

struct LinearFit {
  double slope = 0;
  double intercept = 0;
  double r2 = 0;
};

inline LinearFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("least_squares: need at least two paired points");
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0) throw ConfigError("least_squares: x has zero variance");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy == 0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return f;
}

}  // namespace signloop
