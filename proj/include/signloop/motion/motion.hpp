#pragma once

// Pose vectors, frames, the bounded sequence buffer and edit-window arithmetic.
//
// Frame indices are 1-based throughout the library; the wire protocol
// converts to 0-based at the service boundary.

#include "signloop/core/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace signloop {

using FrameIndex = long;

/// 228 pose parameters: body [0,75), hand [75,218), facial action units [218,228).
class PoseVector {
 public:
  static constexpr std::size_t kSize = 228;
  static constexpr std::size_t kBodyBegin = 0, kBodyEnd = 75;
  static constexpr std::size_t kHandBegin = 75, kHandEnd = 218;
  static constexpr std::size_t kAuBegin = 218, kAuEnd = 228;

  PoseVector() { values_.fill(0.0); }

  explicit PoseVector(std::span<const double> values) {
    if (values.size() != kSize) {
      throw ConfigError("PoseVector needs 228 values, got " + std::to_string(values.size()));
    }
    for (std::size_t i = 0; i < kSize; ++i) {
      if (!std::isfinite(values[i])) throw ConfigError("PoseVector value " + std::to_string(i) + " is not finite");
      values_[i] = values[i];
    }
  }

  [[nodiscard]] std::span<const double, kSize> values() const { return values_; }
  [[nodiscard]] std::span<const double> body() const { return std::span(values_).subspan(kBodyBegin, kBodyEnd - kBodyBegin); }
  [[nodiscard]] std::span<const double> hand() const { return std::span(values_).subspan(kHandBegin, kHandEnd - kHandBegin); }
  [[nodiscard]] std::span<const double> au() const { return std::span(values_).subspan(kAuBegin, kAuEnd - kAuBegin); }
  [[nodiscard]] double operator[](std::size_t i) const { return values_[i]; }

  void set(std::size_t i, double v) {
    if (i >= kSize) throw RangeError("PoseVector index out of range");
    if (!std::isfinite(v)) throw ConfigError("PoseVector value is not finite");
    values_[i] = v;
  }

  bool operator==(const PoseVector&) const = default;

 private:
  std::array<double, kSize> values_;
};

struct Frame {
  PoseVector pose;
  FrameIndex timestamp = 1;

  bool operator==(const Frame&) const = default;
};

struct WindowParams {
  long delta = 50;
  long k = 8;

  void check() const {
    if (delta < 1) throw ConfigError("window delta must be >= 1");
    if (k < 0) throw ConfigError("context length k must be >= 0");
  }
};

struct FrameRange {
  FrameIndex first = 1;
  FrameIndex last = 0;

  [[nodiscard]] long size() const { return last >= first ? last - first + 1 : 0; }
  [[nodiscard]] bool contains(FrameIndex t) const { return t >= first && t <= last; }
  bool operator==(const FrameRange&) const = default;
};

/// Edit window centred on `t_edit`: t_min = max(1, t_edit - delta/2),
/// t_max = min(T, t_min + delta - 1), with floor division.
inline FrameRange compute_window(FrameIndex t_edit, long delta, long T) {
  if (delta < 1) throw ConfigError("window delta must be >= 1");
  if (t_edit < 1 || t_edit > T) {
    throw RangeError("t_edit " + std::to_string(t_edit) + " outside [1, " + std::to_string(T) + "]");
  }
  const FrameIndex t_min = std::max<FrameIndex>(1, t_edit - delta / 2);
  const FrameIndex t_max = std::min<FrameIndex>(T, t_min + delta - 1);
  return {t_min, t_max};
}

/// Context preceding a window start, clamped to the available prefix.
inline FrameRange context_range(FrameIndex t_min, long k) {
  return {std::max<FrameIndex>(1, t_min - k), t_min - 1};
}

/// Bounded frame store with slicing and in-place local write-back.
/// Appends past capacity are refused rather than evicting old frames.
class SeqBuffer {
 public:
  explicit SeqBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("SeqBuffer capacity must be positive");
    frames_.reserve(std::min<std::size_t>(capacity, 1u << 16));
  }

  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] long length() const { return static_cast<long>(frames_.size()); }
  [[nodiscard]] bool empty() const { return frames_.empty(); }

  /// Appends `pose` as frame length()+1.
  void append(const PoseVector& pose) {
    if (frames_.size() >= capacity_) {
      throw RangeError("SeqBuffer full (capacity " + std::to_string(capacity_) + ")");
    }
    frames_.push_back({pose, length() + 1});
  }

  [[nodiscard]] const Frame& at(FrameIndex t) const {
    if (t < 1 || t > length()) throw RangeError("frame " + std::to_string(t) + " out of range");
    return frames_[static_cast<std::size_t>(t - 1)];
  }

  /// Copies of frames [a, b], inclusive.
  [[nodiscard]] std::vector<Frame> slice(FrameIndex a, FrameIndex b) const {
    if (a < 1 || b < a || b > length()) {
      throw RangeError("slice [" + std::to_string(a) + ", " + std::to_string(b) + "] invalid for length " +
                       std::to_string(length()));
    }
    return {frames_.begin() + (a - 1), frames_.begin() + b};
  }

  /// Replaces frames [start, start + |frames| - 1]; never appends.
  /// Incoming timestamps are ignored; slots keep their own indices.
  void write_back(FrameIndex start, std::span<const Frame> frames) {
    if (frames.empty()) return;
    const FrameIndex end = start + static_cast<FrameIndex>(frames.size()) - 1;
    if (start < 1 || end > length()) {
      throw RangeError("write_back [" + std::to_string(start) + ", " + std::to_string(end) +
                       "] exceeds length " + std::to_string(length()));
    }
    for (std::size_t i = 0; i < frames.size(); ++i) {
      frames_[static_cast<std::size_t>(start - 1) + i].pose = frames[i].pose;
    }
  }

  void write_pose(FrameIndex t, const PoseVector& pose) {
    if (t < 1 || t > length()) throw RangeError("frame " + std::to_string(t) + " out of range");
    frames_[static_cast<std::size_t>(t - 1)].pose = pose;
  }

  /// FNV-1a over the raw bytes of every stored value and timestamp.
  [[nodiscard]] std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& f : frames_) {
      feed(f.pose.values().data(), PoseVector::kSize * sizeof(double));
      feed(&f.timestamp, sizeof(f.timestamp));
    }
    return h;
  }

  bool operator==(const SeqBuffer& o) const { return frames_ == o.frames_; }

 private:
  std::size_t capacity_;
  std::vector<Frame> frames_;
};

}  // namespace signloop
