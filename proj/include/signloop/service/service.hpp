#pragma once

// Session registry, shared models and the background fine-tuning loop.

#include "signloop/service/config.hpp"
#include "signloop/service/session.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

namespace signloop::service {

class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Service {
 public:
  explicit Service(ServiceConfig cfg)
      : cfg_(std::move(cfg)),
        models_(build_models(cfg_)),
        logs_(LogSinks::open(cfg_.data_dir / "logs")),
        scheduler_(cfg_.hitl.scheduler, hitl::Clock::now(), cfg_.data_dir / "checkpoints") {
    cfg_.check();
    spdlog::set_level(spdlog::level::from_str(cfg_.log_level));
  }

  ~Service() { stop_background(); }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  [[nodiscard]] const ServiceConfig& config() const { return cfg_; }

  /// `overrides` is a partial session config; unknown keys are rejected.
  std::string create_session(const Json& overrides = Json::object()) {
    SessionConfig sc = cfg_.session;
    if (!overrides.is_null()) merge(sc, overrides);
    sc.check();
    std::lock_guard lock(mu_);
    std::size_t open = 0;
    for (const auto& [_, s] : sessions_) open += s->state() != SessionState::closed;
    if (open >= cfg_.max_sessions) throw StateError("session limit reached");
    const std::uint64_t n = ++counter_;
    if (sc.seed == 0) sc.seed = hash_seed(cfg_.seed, n);
    char id[24];
    std::snprintf(id, sizeof id, "s%06llu", static_cast<unsigned long long>(n));
    Models m;
    {
      std::lock_guard plock(policy_mu_);
      m = models_;
    }
    auto sink = [this](const hitl::Triplet& t) { offer_triplet(t); };
    sessions_.emplace(id, std::make_shared<Session>(id, sc, std::move(m), cfg_.budget_ms, logs_,
                                                    cfg_.hitl.enabled ? Session::TripletSink(sink) : Session::TripletSink{},
                                                    cfg_.hitl.example_frames));
    spdlog::info("session {} created (seed {})", id, sc.seed);
    return id;
  }

  [[nodiscard]] std::shared_ptr<Session> get(const std::string& id) const {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFoundError("unknown session " + id);
    return it->second;
  }

  /// Closes the session and forgets it; subscribers receive the end marker.
  void remove(const std::string& id) {
    std::shared_ptr<Session> s;
    {
      std::lock_guard lock(mu_);
      const auto it = sessions_.find(id);
      if (it == sessions_.end()) throw NotFoundError("unknown session " + id);
      s = it->second;
      sessions_.erase(it);
    }
    s->close();
    spdlog::info("session {} closed", id);
  }

  [[nodiscard]] Json list() const {
    std::lock_guard lock(mu_);
    Json out = Json::array();
    for (const auto& [_, s] : sessions_) out.push_back(s->describe());
    return out;
  }

  [[nodiscard]] const LogSinks& logs() const { return logs_; }

  [[nodiscard]] std::shared_ptr<const Decoder> policy() const {
    std::lock_guard lock(policy_mu_);
    return models_.decoder;
  }

  [[nodiscard]] std::size_t pending_triplets() const {
    std::scoped_lock lock(sched_mu_, inbox_mu_);
    return scheduler_.pending() + inbox_.size();
  }

  [[nodiscard]] int cycles_run() const {
    std::lock_guard lock(sched_mu_);
    return scheduler_.cycles_run();
  }

  /// One scheduler step. A finished cycle swaps the policy used by new sessions;
  /// existing sessions keep the parameters they started with.
  std::optional<hitl::CycleReport> tick(hitl::TimePoint now) {
    std::optional<std::pair<Decoder, hitl::CycleReport>> result;
    {
      std::lock_guard lock(sched_mu_);
      std::vector<hitl::Triplet> fresh;
      {
        std::lock_guard ilock(inbox_mu_);
        fresh.swap(inbox_);
      }
      for (auto& t : fresh) scheduler_.add(std::move(t));
      if (auto r = scheduler_.tick(now, *policy(), models_.vae.get())) result.emplace(std::move(*r));
    }
    if (!result) return std::nullopt;
    {
      std::lock_guard lock(policy_mu_);
      models_.decoder = std::make_shared<const Decoder>(std::move(result->first));
    }
    logs_.metrics->append({{"kind", "fine_tune"}, {"report", result->second.to_json()}});
    spdlog::info("fine-tuning cycle {} done: loss {} -> {}", result->second.cycle, result->second.first_loss,
                 result->second.last_loss);
    return result->second;
  }

  void start_background() {
    if (worker_.joinable()) return;
    stop_ = false;
    worker_ = std::thread([this] {
      std::unique_lock lock(stop_mu_);
      const auto period = std::chrono::duration<double>(cfg_.hitl.tick_seconds);
      while (!stop_cv_.wait_for(lock, period, [this] { return stop_.load(); })) {
        lock.unlock();
        try {
          tick(hitl::Clock::now());
        } catch (const std::exception& e) {
          spdlog::error("scheduler tick failed: {}", e.what());
        }
        lock.lock();
      }
    });
  }

  void stop_background() {
    {
      std::lock_guard lock(stop_mu_);
      stop_ = true;
    }
    stop_cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

 private:
  void offer_triplet(const hitl::Triplet& t) {
    std::lock_guard lock(inbox_mu_);
    inbox_.push_back(t);
  }

  ServiceConfig cfg_;
  Models models_;
  LogSinks logs_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
  mutable std::mutex policy_mu_;
  mutable std::mutex sched_mu_;
  hitl::Scheduler scheduler_;
  mutable std::mutex inbox_mu_;
  std::vector<hitl::Triplet> inbox_;
  std::thread worker_;
  std::mutex stop_mu_;
  std::condition_variable stop_cv_;
  std::atomic<bool> stop_{false};
};

}  // namespace signloop::service
