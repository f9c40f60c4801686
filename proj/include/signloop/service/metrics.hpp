#pragma once

#include "signloop/core/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <deque>
#include <mutex>
#include <string_view>

namespace signloop::service {

enum class Stage { frontend, encode, decode, ik, serialize, end_to_end };

inline constexpr std::array<std::string_view, 6> kStageNames{"frontend", "encode", "decode", "ik", "serialize", "end_to_end"};

/// Running count/mean plus a bounded recent window for percentiles.
class DurationStats {
 public:
  DurationStats() = default;
  explicit DurationStats(std::size_t window) : window_(window) {}

  void add(double ms) {
    if (!(ms >= 0) || !std::isfinite(ms)) throw RangeError("durations must be finite and >= 0");
    ++count_;
    sum_ += ms;
    recent_.push_back(ms);
    if (recent_.size() > window_) recent_.pop_front();
  }

  [[nodiscard]] long count() const { return count_; }
  [[nodiscard]] double mean() const { return count_ == 0 ? 0.0 : sum_ / static_cast<double>(count_); }
  [[nodiscard]] double total() const { return sum_; }

  /// Nearest-rank percentile over the recent window.
  [[nodiscard]] double percentile(double q) const {
    if (recent_.empty()) return 0.0;
    std::vector<double> v(recent_.begin(), recent_.end());
    std::sort(v.begin(), v.end());
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
  }

 private:
  std::size_t window_ = 4096;
  long count_ = 0;
  double sum_ = 0;
  std::deque<double> recent_;
};

class StageMetrics {
 public:
  explicit StageMetrics(double budget_ms = 150.0) : budget_ms_(budget_ms) {}

  void add(Stage s, double ms) {
    std::lock_guard lock(mu_);
    stats_[static_cast<std::size_t>(s)].add(ms);
  }

  [[nodiscard]] DurationStats get(Stage s) const {
    std::lock_guard lock(mu_);
    return stats_[static_cast<std::size_t>(s)];
  }

  [[nodiscard]] bool over_budget() const { return get(Stage::end_to_end).percentile(0.95) > budget_ms_; }

  [[nodiscard]] nlohmann::ordered_json to_json() const {
    std::lock_guard lock(mu_);
    nlohmann::ordered_json stages = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < stats_.size(); ++i) {
      const auto& s = stats_[i];
      stages[std::string(kStageNames[i])] = {{"count", s.count()}, {"mean_ms", s.mean()}, {"p95_ms", s.percentile(0.95)}};
    }
    const double p95 = stats_[static_cast<std::size_t>(Stage::end_to_end)].percentile(0.95);
    return {{"stages", stages}, {"budget_ms", budget_ms_}, {"over_budget", p95 > budget_ms_}};
  }

 private:
  double budget_ms_;
  mutable std::mutex mu_;
  std::array<DurationStats, kStageNames.size()> stats_{};
};

/// Milliseconds since `start`.
inline double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace signloop::service
