#pragma once

// Length-prefixed message framing and per-subscriber ordered queues.

#include "signloop/core/errors.hpp"

#include <json.hpp>

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace signloop::service {

inline constexpr std::uint32_t kMaxMessageBytes = 16u << 20;

/// 4-byte big-endian length followed by the UTF-8 JSON text.
inline std::string frame_message(const nlohmann::ordered_json& msg) {
  const std::string body = msg.dump();
  if (body.size() > kMaxMessageBytes) throw RangeError("message exceeds the frame size limit");
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(4 + body.size());
  out.push_back(static_cast<char>(n >> 24));
  out.push_back(static_cast<char>(n >> 16));
  out.push_back(static_cast<char>(n >> 8));
  out.push_back(static_cast<char>(n));
  out += body;
  return out;
}

/// Incremental reader for frame_message output; tolerates arbitrary splits.
class MessageReader {
 public:
  std::vector<nlohmann::ordered_json> feed(std::string_view bytes) {
    buf_.append(bytes);
    std::vector<nlohmann::ordered_json> out;
    std::size_t pos = 0;
    while (buf_.size() - pos >= 4) {
      const auto* p = reinterpret_cast<const unsigned char*>(buf_.data() + pos);
      const std::uint32_t n = static_cast<std::uint32_t>(p[0]) << 24 | static_cast<std::uint32_t>(p[1]) << 16 |
                              static_cast<std::uint32_t>(p[2]) << 8 | p[3];
      if (n > kMaxMessageBytes) throw RangeError("stream message length exceeds the limit");
      if (buf_.size() - pos - 4 < n) break;
      out.push_back(nlohmann::ordered_json::parse(buf_.substr(pos + 4, n)));
      pos += 4 + n;
    }
    buf_.erase(0, pos);
    return out;
  }

  [[nodiscard]] std::size_t buffered() const { return buf_.size(); }

 private:
  std::string buf_;
};

/// One client's ordered view of a session. Frame messages below `from` are dropped.
class Subscriber {
 public:
  explicit Subscriber(long from, std::size_t limit = 1u << 20) : from_(from), limit_(limit) {}

  void push(nlohmann::ordered_json msg) {
    if (msg.value("type", "") == "frame" && !msg.value("supersede", false) && msg.value("index", -1L) < from_) return;
    {
      std::lock_guard lock(mu_);
      if (done_) return;
      if (queue_.size() >= limit_) {
        queue_.push_back({{"type", "error"}, {"code", "overflow"}, {"message", "subscriber fell too far behind"}});
        done_ = true;
      } else {
        queue_.push_back(std::move(msg));
      }
    }
    cv_.notify_all();
  }

  /// Marks the end of the stream; queued messages stay readable.
  void finish() {
    {
      std::lock_guard lock(mu_);
      done_ = true;
    }
    cv_.notify_all();
  }

  /// Next message, or nullopt on timeout or when finished and drained.
  std::optional<nlohmann::ordered_json> next(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || done_; });
    if (queue_.empty()) return std::nullopt;
    auto m = std::move(queue_.front());
    queue_.pop_front();
    return m;
  }

  /// Everything currently queued, without waiting.
  std::vector<nlohmann::ordered_json> drain() {
    std::lock_guard lock(mu_);
    std::vector<nlohmann::ordered_json> out(std::make_move_iterator(queue_.begin()), std::make_move_iterator(queue_.end()));
    queue_.clear();
    return out;
  }

  [[nodiscard]] bool finished() const {
    std::lock_guard lock(mu_);
    return done_ && queue_.empty();
  }

  [[nodiscard]] long from() const { return from_; }

 private:
  long from_;
  std::size_t limit_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<nlohmann::ordered_json> queue_;
  bool done_ = false;
};

/// Fans messages out to live subscribers in publish order.
class Broadcaster {
 public:
  void add(const std::shared_ptr<Subscriber>& s) {
    std::lock_guard lock(mu_);
    subs_.push_back(s);
  }

  void publish(const nlohmann::ordered_json& msg) {
    std::lock_guard lock(mu_);
    for (auto it = subs_.begin(); it != subs_.end();) {
      if (auto s = it->lock()) {
        s->push(msg);
        ++it;
      } else {
        it = subs_.erase(it);
      }
    }
  }

  void finish_all() {
    std::lock_guard lock(mu_);
    for (auto& w : subs_) {
      if (auto s = w.lock()) s->finish();
    }
    subs_.clear();
  }

  [[nodiscard]] std::size_t size() const {
    std::lock_guard lock(mu_);
    return subs_.size();
  }

 private:
  mutable std::mutex mu_;
  std::vector<std::weak_ptr<Subscriber>> subs_;
};

}  // namespace signloop::service
