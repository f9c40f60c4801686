#pragma once

// Action-structure generation from decoder outputs, the gloss vocabulary,
// and the IR-to-conditioning map used during resampling.

#include "signloop/ir/patch.hpp"
#include "signloop/ir/segment.hpp"
#include "signloop/mdn/decoder.hpp"
#include "signloop/motion/motion.hpp"
#include "signloop/vae/latent_vae.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace signloop::ir {

/// Gloss names by decoder vocabulary index; index 0 is "UNK".
class GlossVocab {
 public:
  explicit GlossVocab(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty()) throw ConfigError("gloss vocabulary must be non-empty");
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (!index_.emplace(names_[i], static_cast<int>(i)).second) throw ConfigError("duplicate gloss " + names_[i]);
    }
  }

  /// Toy list padded with generated names up to `size`.
  static GlossVocab toy(int size) {
    static const std::vector<std::string> base{"UNK",  "HELLO", "THANK_YOU", "PLEASE", "YES",
                                               "NO",   "GOOD",  "MORNING",   "NAME",   "HELP"};
    std::vector<std::string> names;
    for (int i = 0; i < size; ++i) {
      names.push_back(i < static_cast<int>(base.size()) ? base[static_cast<std::size_t>(i)] : "GLOSS_" + std::to_string(i));
    }
    return GlossVocab(std::move(names));
  }

  [[nodiscard]] int size() const { return static_cast<int>(names_.size()); }
  [[nodiscard]] const std::string& name(int i) const { return names_.at(static_cast<std::size_t>(i)); }

  /// Unknown names map to 0.
  [[nodiscard]] int index(const std::string& name) const {
    const auto it = index_.find(name);
    return it == index_.end() ? 0 : it->second;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

/// Sliding-window majority vote over a label sequence (ties keep the center label).
inline std::vector<int> majority_filter(const std::vector<int>& labels, int radius) {
  if (radius <= 0) return labels;
  const auto n = static_cast<long>(labels.size());
  std::vector<int> out(labels.size());
  for (long i = 0; i < n; ++i) {
    std::map<int, int> counts;
    for (long j = std::max(0L, i - radius); j <= std::min(n - 1, i + radius); ++j) ++counts[labels[static_cast<std::size_t>(j)]];
    int best = labels[static_cast<std::size_t>(i)];
    int best_count = counts[best];
    for (const auto& [lab, c] : counts) {
      if (c > best_count) {
        best = lab;
        best_count = c;
      }
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

struct HandshapePrototype {
  std::string_view type;
  std::array<double, 5> fingers;
};

// Finger values are extension scalars (0 curled, 1 extended).
inline constexpr std::array<HandshapePrototype, 9> kHandshapePrototypes{{
    {"A", {0.8, 0.0, 0.0, 0.0, 0.0}},
    {"B", {0.2, 1.0, 1.0, 1.0, 1.0}},
    {"C", {0.8, 1.0, 0.5, 0.5, 0.7}},
    {"O", {0.5, 0.5, 0.5, 0.5, 0.5}},
    {"S", {0.3, 0.0, 0.0, 0.0, 0.0}},
    {"1", {0.0, 1.0, 0.0, 0.0, 0.0}},
    {"V", {0.0, 1.0, 1.0, 0.0, 0.0}},
    {"Y", {1.0, 0.0, 0.0, 0.0, 1.0}},
    {"5", {1.0, 1.0, 1.0, 1.0, 1.0}},
}};

struct AuMarker {
  std::string_view facial_expression;
  std::string_view head_movement;
  std::string_view eye_gaze;
};

inline constexpr std::array<AuMarker, 7> kAuMarkers{{
    {"neutral", "none", "straight"},
    {"smile", "nod", "straight"},
    {"frown", "shake", "down"},
    {"raised_brows", "tilt_back", "up"},
    {"furrowed_brows", "tilt_forward", "straight"},
    {"surprise", "none", "up"},
    {"pursed_lips", "tilt_left", "left"},
}};

/// Hand subrange split into five consecutive groups, logistic of each group mean.
inline Handshape decode_handshape(const Eigen::VectorXd& pose) {
  const Eigen::Index begin = PoseVector::kHandBegin;
  const Eigen::Index n = PoseVector::kHandEnd - PoseVector::kHandBegin;
  FingerConfig f;
  double* slots[5] = {&f.thumb, &f.index, &f.middle, &f.ring, &f.pinky};
  for (Eigen::Index g = 0; g < 5; ++g) {
    const Eigen::Index lo = begin + g * n / 5, hi = begin + (g + 1) * n / 5;
    *slots[g] = ad::logistic(pose.segment(lo, hi - lo).mean());
  }
  const auto v = f.values();
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < kHandshapePrototypes.size(); ++p) {
    double d = 0;
    for (std::size_t i = 0; i < 5; ++i) d += (v[i] - kHandshapePrototypes[p].fingers[i]) * (v[i] - kHandshapePrototypes[p].fingers[i]);
    if (d < best_d) {
      best_d = d;
      best = p;
    }
  }
  return {std::string(kHandshapePrototypes[best].type), f};
}

/// Segments from per-frame latents Z (T x D), gloss indices G and AU classes A.
inline std::vector<ActionSegment> generate_action_structure(const Eigen::MatrixXd& Z, const std::vector<int>& G,
                                                            const std::vector<int>& A, double fps, const LatentVae& vae,
                                                            const GlossVocab& vocab) {
  const auto T = static_cast<std::size_t>(Z.rows());
  if (T == 0 || G.size() != T || A.size() != T) throw ConfigError("generate_action_structure: sequence lengths differ");
  if (!(fps > 0)) throw ConfigError("fps must be > 0");
  const Eigen::MatrixXd poses = vae.decode_rows(Z);

  std::vector<double> speed(T, 0.0);
  for (std::size_t t = 1; t < T; ++t) speed[t] = (Z.row(static_cast<Eigen::Index>(t)) - Z.row(static_cast<Eigen::Index>(t - 1))).norm();
  if (T > 1) speed[0] = speed[1];
  std::vector<double> sorted = speed;
  std::sort(sorted.begin(), sorted.end());
  const double q1 = sorted[(T - 1) / 3], q2 = sorted[2 * (T - 1) / 3];

  std::vector<ActionSegment> out;
  std::size_t s = 0;
  while (s < T) {
    std::size_t e = s;
    while (e + 1 < T && G[e + 1] == G[s]) ++e;
    const auto len = static_cast<Eigen::Index>(e - s + 1);
    ActionSegment seg;
    seg.gloss_id = vocab.name(std::clamp(G[s], 0, vocab.size() - 1));
    seg.duration = static_cast<double>(len) / fps;

    const Eigen::VectorXd mean_z = Z.middleRows(static_cast<Eigen::Index>(s), len).colwise().mean().transpose();
    seg.handshape = decode_handshape(vae.decode_raw(mean_z));

    for (Eigen::Index i = 0; i < len; ++i) {
      const auto r = static_cast<Eigen::Index>(s) + i;
      seg.trajectory.push_back({poses(r, 0), poses(r, 1), poses(r, 2), static_cast<double>(i) / fps});
    }

    std::array<int, kAuMarkers.size()> votes{};
    for (std::size_t t = s; t <= e; ++t) ++votes[static_cast<std::size_t>(std::clamp(A[t], 0, static_cast<int>(kAuMarkers.size()) - 1))];
    const auto au = static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    seg.non_manual_markers = {std::string(kAuMarkers[au].facial_expression), std::string(kAuMarkers[au].head_movement),
                              std::string(kAuMarkers[au].eye_gaze)};

    double v = 0;
    for (std::size_t t = s; t <= e; ++t) v += speed[t];
    v /= static_cast<double>(len);
    seg.emphasis = v <= q1 ? Emphasis::none : v <= q2 ? Emphasis::mild : Emphasis::strong;

    out.push_back(std::move(seg));
    s = e + 1;
  }
  return out;
}

/// Per-frame decoder conditioning for frames 1..T derived from the segments.
/// Frames past the last span reuse the last segment.
/// Minimal valid segment: flat B hand at the origin, neutral markers.
inline ActionSegment simple_segment(const std::string& gloss, double duration) {
  ActionSegment s;
  s.gloss_id = gloss;
  s.handshape.type = "B";
  s.trajectory = {{0, 0, 0, 0}};
  s.duration = duration;
  s.non_manual_markers = {"neutral", "none", "straight"};
  return s;
}

/// Conditioning for frames [first, last]; frames past the last span reuse the last segment.
inline std::vector<StepConditioning> conditioning_for_range(const std::vector<ActionSegment>& segs, const GlossVocab& vocab,
                                                            double fps, long first, long last) {
  std::vector<StepConditioning> out(static_cast<std::size_t>(std::max(0L, last - first + 1)));
  if (segs.empty() || out.empty()) return out;
  const auto spans = segment_frame_spans(segs, fps);
  std::size_t k = 0;
  for (long t = first; t <= last; ++t) {
    while (k + 1 < spans.size() && t > spans[k].last) ++k;
    const auto& s = segs[k];
    out[static_cast<std::size_t>(t - first)] = {vocab.index(s.gloss_id), s.duration, emphasis_scalar(s.emphasis)};
  }
  return out;
}

inline std::vector<StepConditioning> conditioning_from_segments(const std::vector<ActionSegment>& segs, const GlossVocab& vocab,
                                                                double fps, long T) {
  return conditioning_for_range(segs, vocab, fps, 1, T);
}

}  // namespace signloop::ir
