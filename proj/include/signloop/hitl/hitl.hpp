#pragma once

// Human-in-the-loop adaptation: rated edit triplets, reservoir replay, EWC
// anchoring, KL to the previous policy and the cycle scheduler.

#include "signloop/core/autodiff.hpp"
#include "signloop/core/errors.hpp"
#include "signloop/core/params.hpp"
#include "signloop/core/rng.hpp"
#include "signloop/ir/segment.hpp"
#include "signloop/mdn/decoder.hpp"
#include "signloop/mdn/mdn.hpp"
#include "signloop/mdn/training.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace signloop::hitl {

using Clock = std::chrono::system_clock;
using TimePoint = Clock::time_point;

struct Triplet {
  std::vector<ir::ActionSegment> ir_orig;
  std::vector<ir::ActionSegment> ir_edit;
  int r_u = 3;
  std::optional<int> r_e;
  TimePoint created_at{};
  std::string session;
  SequenceExample example;  // decoder targets built from the edited track; not serialized
};

inline void check_rating(int r, const char* what) {
  if (r < 1 || r > 5) throw RangeError(std::string(what) + " must lie in [1, 5]");
}

/// w_u r_u + w_e r_e; without an expert rating only w_u is used, renormalized.
inline double reward(int r_u, std::optional<int> r_e, double w_u, double w_e) {
  check_rating(r_u, "r_u");
  if (r_e) check_rating(*r_e, "r_e");
  if (w_u < 0 || w_e < 0 || !std::isfinite(w_u) || !std::isfinite(w_e)) throw ConfigError("reward weights must be >= 0");
  if (w_u == 0 && w_e == 0) throw ConfigError("reward weights are both zero");
  if (!r_e) {
    if (w_u == 0) throw ConfigError("no expert rating and w_u is zero");
    return static_cast<double>(r_u);
  }
  return w_u * r_u + w_e * *r_e;
}

inline std::int64_t to_epoch_ms(TimePoint t) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

inline nlohmann::ordered_json to_json(const Triplet& t) {
  nlohmann::ordered_json orig = nlohmann::ordered_json::array(), edit = nlohmann::ordered_json::array();
  for (const auto& s : t.ir_orig) orig.push_back(ir::to_json(s));
  for (const auto& s : t.ir_edit) edit.push_back(ir::to_json(s));
  nlohmann::ordered_json j{{"session", t.session}, {"created_at_ms", to_epoch_ms(t.created_at)}, {"r_u", t.r_u}};
  j["r_e"] = t.r_e ? nlohmann::ordered_json(*t.r_e) : nlohmann::ordered_json(nullptr);
  j["ir_orig"] = std::move(orig);
  j["ir_edit"] = std::move(edit);
  return j;
}

/// Inverse of to_json (the training example is left empty).
inline Triplet triplet_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw ir::ValidationError("wrong_type", "", "triplet must be an object");
  Triplet t;
  t.session = j.value("session", "");
  if (!j.contains("r_u") || !j["r_u"].is_number_integer()) throw ir::ValidationError("wrong_type", "r_u", "expected an integer rating");
  t.r_u = j["r_u"].get<int>();
  if (j.contains("r_e") && !j["r_e"].is_null()) {
    if (!j["r_e"].is_number_integer()) throw ir::ValidationError("wrong_type", "r_e", "expected an integer rating");
    t.r_e = j["r_e"].get<int>();
  }
  check_rating(t.r_u, "r_u");
  if (t.r_e) check_rating(*t.r_e, "r_e");
  t.created_at = TimePoint(std::chrono::milliseconds(j.value("created_at_ms", std::int64_t{0})));
  for (const char* key : {"ir_orig", "ir_edit"}) {
    if (!j.contains(key) || !j[key].is_array()) throw ir::ValidationError("wrong_type", key, "expected an array of segments");
    auto& out = std::string_view(key) == "ir_orig" ? t.ir_orig : t.ir_edit;
    for (std::size_t i = 0; i < j[key].size(); ++i) {
      out.push_back(ir::validate(j[key][i], nullptr, 25.0, std::string(key) + "." + std::to_string(i)));
    }
  }
  return t;
}

/// Append-only line-delimited triplet records.
class TripletLog {
 public:
  explicit TripletLog(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  }

  void append(const Triplet& t) {
    const std::string line = to_json(t).dump() + "\n";
    std::lock_guard lock(mu_);
    std::ofstream os(path_, std::ios::app);
    if (!os) throw StateError("cannot open triplet log " + path_.string());
    os << line;
  }

  [[nodiscard]] std::vector<Triplet> read_all() const {
    std::lock_guard lock(mu_);
    std::vector<Triplet> out;
    std::ifstream is(path_);
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty()) out.push_back(triplet_from_json(nlohmann::ordered_json::parse(line)));
    }
    return out;
  }

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Replay

/// Classic reservoir sampling: the i-th insertion (0-based) replaces a uniform
/// slot j in [0, i] when j < capacity.
template <typename T>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1500) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
  }

  void insert(T item, Rng& rng) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      std::uniform_int_distribution<std::uint64_t> u(0, seen_);
      const std::uint64_t j = u(rng);
      if (j < capacity_) items_[static_cast<std::size_t>(j)] = std::move(item);
    }
    ++seen_;
  }

  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] std::size_t size() const { return items_.size(); }
  [[nodiscard]] std::uint64_t seen() const { return seen_; }
  [[nodiscard]] const std::vector<T>& items() const { return items_; }

 private:
  std::size_t capacity_;
  std::vector<T> items_;
  std::uint64_t seen_ = 0;
};

// ---------------------------------------------------------------------------
// EWC

struct FisherDiag {
  Eigen::VectorXd fisher;      // per scalar parameter
  std::vector<bool> anchored;  // top anchor_fraction among positive entries
  Eigen::VectorXd reference;   // theta*

  [[nodiscard]] std::size_t anchored_count() const {
    return static_cast<std::size_t>(std::count(anchored.begin(), anchored.end(), true));
  }
};

/// Indices of the `count` largest positive values; ties go to the lower index.
inline std::vector<bool> top_mask(const Eigen::VectorXd& values, double fraction) {
  if (!(fraction >= 0 && fraction <= 1)) throw ConfigError("anchor fraction must lie in [0, 1]");
  const auto P = static_cast<std::size_t>(values.size());
  std::vector<std::size_t> order(P);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values(static_cast<Eigen::Index>(a)) > values(static_cast<Eigen::Index>(b));
  });
  const auto want = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(P)));
  std::vector<bool> mask(P, false);
  for (std::size_t i = 0; i < std::min(want, P); ++i) {
    if (values(static_cast<Eigen::Index>(order[i])) <= 0) break;
    mask[order[i]] = true;
  }
  return mask;
}

/// Diagonal Fisher: mean squared gradient of the objective per example.
inline FisherDiag estimate_fisher(Decoder& decoder, const LatentVae* vae, const std::vector<SequenceExample>& stability,
                                  const ObjectiveConfig& oc, double anchor_fraction) {
  if (stability.empty()) throw ConfigError("estimate_fisher: empty stability set");
  FisherDiag f;
  f.reference = decoder.params().flatten();
  f.fisher = Eigen::VectorXd::Zero(f.reference.size());
  for (const auto& ex : stability) {
    decoder.params().zero_grad();
    ad::backward(sequence_objective(decoder, vae, ex, oc));
    f.fisher += decoder.params().flatten_grad().cwiseAbs2();
  }
  decoder.params().zero_grad();
  f.fisher /= static_cast<double>(stability.size());
  f.anchored = top_mask(f.fisher, anchor_fraction);
  return f;
}

/// sum over anchored i of F_i (theta_i - theta*_i)^2.
inline double ewc_penalty(const ParamSet& params, const FisherDiag& f) {
  const Eigen::VectorXd theta = params.flatten();
  if (theta.size() != f.reference.size()) throw ConfigError("ewc_penalty: parameter count mismatch");
  double s = 0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (f.anchored[static_cast<std::size_t>(i)]) s += f.fisher(i) * (theta(i) - f.reference(i)) * (theta(i) - f.reference(i));
  }
  return s;
}

inline ad::Var ewc_penalty_var(const ParamSet& params, const FisherDiag& f) {
  if (static_cast<Eigen::Index>(params.scalar_count()) != f.reference.size()) throw ConfigError("ewc_penalty: parameter count mismatch");
  std::vector<ad::Var> terms;
  Eigen::Index flat = 0;
  for (const auto& p : params.items()) {
    const Eigen::Index n = p.var.value().size();
    ad::Mat w = ad::Mat::Zero(p.var.rows(), p.var.cols()), ref(p.var.rows(), p.var.cols());
    bool any = false;
    for (Eigen::Index j = 0; j < n; ++j) {
      ref.data()[j] = f.reference(flat + j);
      if (f.anchored[static_cast<std::size_t>(flat + j)]) {
        w.data()[j] = f.fisher(flat + j);
        any = true;
      }
    }
    flat += n;
    if (any) terms.push_back(ad::sum(ad::mul(ad::constant(w), ad::square(ad::sub(p.var, ad::constant(ref))))));
  }
  if (terms.empty()) return ad::constant(ad::Mat::Zero(1, 1));
  return ad::sum(ad::vstack(terms));
}

// ---------------------------------------------------------------------------
// Freezing

/// Layer 1 is the input and conditioning embedding, layer 1 + b is decoder
/// block b, the next layer is the mixture heads. Task heads are never frozen.
inline std::vector<std::string> frozen_prefixes(const DecoderConfig& cfg, int layers) {
  std::vector<std::string> out;
  for (int l = 1; l <= layers; ++l) {
    if (l == 1) {
      out.insert(out.end(), {"dec.in.", "dec.cond."});
    } else if (l - 2 < cfg.blocks) {
      out.push_back("dec.block" + std::to_string(l - 2) + ".");
    } else if (l - 2 == cfg.blocks) {
      out.insert(out.end(), {"dec.head.pi.", "dec.head.mu.", "dec.head.sigma."});
    }
  }
  return out;
}

struct CycleSettings {
  int epochs = 3;
  double lr = 1e-4;
  double kl_weight = 0.10;
  int frozen_layers = 3;
};

/// Per-cycle schedule; cycles past the table reuse its last row.
inline std::vector<CycleSettings> default_cycles() {
  return {{3, 1e-4, 0.10, 3}, {3, 8e-5, 0.08, 3}, {3, 6e-5, 0.07, 4},
          {2, 5e-5, 0.06, 4}, {2, 4e-5, 0.05, 4}, {2, 3.5e-5, 0.05, 5}};
}

struct SchedulerConfig {
  std::size_t triplet_thr = 450;
  std::chrono::seconds time_int{14L * 24 * 3600};
  double replay_fraction = 0.25;
  double w_u = 0.5;
  double w_e = 0.5;
  double ewc_lambda = 310.0;
  double anchor_fraction = 0.20;
  int ramp_steps = 200;
  int batch_size = 32;
  std::size_t replay_capacity = 1500;
  std::size_t stability_size = 1000;
  std::vector<CycleSettings> cycles = default_cycles();
  ObjectiveConfig objective{};
  std::uint64_t seed = 11;

  void check() const {
    if (!(replay_fraction >= 0 && replay_fraction <= 1)) throw ConfigError("replay_fraction must lie in [0, 1]");
    if (!(anchor_fraction >= 0 && anchor_fraction <= 1)) throw ConfigError("anchor_fraction must lie in [0, 1]");
    if (w_u < 0 || w_e < 0 || (w_u == 0 && w_e == 0)) throw ConfigError("reward weights must be >= 0 and not both zero");
    if (ewc_lambda < 0) throw ConfigError("ewc_lambda must be >= 0");
    if (ramp_steps < 1 || batch_size < 1) throw ConfigError("ramp_steps and batch_size must be >= 1");
    if (cycles.empty()) throw ConfigError("cycle schedule is empty");
    if (triplet_thr == 0) throw ConfigError("triplet_thr must be >= 1");
  }

  [[nodiscard]] const CycleSettings& cycle(int n) const {
    return cycles[static_cast<std::size_t>(std::clamp(n, 1, static_cast<int>(cycles.size())) - 1)];
  }
};

inline double ramped_kl_weight(double kl_weight, int step, int ramp_steps) {
  return kl_weight * std::min(1.0, static_cast<double>(step) / static_cast<double>(ramp_steps));
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct WeightedExample {
  const SequenceExample* example = nullptr;
  double weight = 1.0;  // reward
};

struct StepWeights {
  double kl_weight = 0;  // already ramped
  double ewc_lambda = 0;
  ObjectiveConfig objective{};
};

struct FineTuneReport {
  double total = 0;
  double imitation = 0;
  double kl = 0;
  double ewc = 0;
};

/// One optimizer step on the reward-weighted imitation loss plus the KL to
/// `reference` and the EWC penalty. Scalars flagged in `frozen` do not move.
inline FineTuneReport fine_tune_step(Decoder& model, const LatentVae* vae, const std::vector<WeightedExample>& batch,
                                     const Decoder& reference, const FisherDiag* fisher, const StepWeights& w, Adam& opt,
                                     const std::vector<bool>& frozen) {
  if (batch.empty()) throw ConfigError("fine_tune_step: empty batch");
  model.params().zero_grad();
  std::vector<ad::Var> imitation, kls;
  for (const auto& item : batch) {
    if (item.example == nullptr) throw ConfigError("fine_tune_step: null example");
    std::vector<StepForward> steps;
    imitation.push_back(ad::scale(sequence_objective(model, vae, *item.example, w.objective, &steps), item.weight));
    if (w.kl_weight > 0) {
      std::vector<MDNParams> ref;
      {
        ad::NoGradGuard guard;
        for (const auto& s : reference.forward_sequence(item.example->features, item.example->latents, item.example->conditioning)) {
          ref.push_back(reference.to_params(s));
        }
      }
      std::vector<ad::Var> per_step;
      for (std::size_t t = 0; t < steps.size(); ++t) {
        per_step.push_back(mixture_kl_bound_var(steps[t].pi_logits, steps[t].mu, steps[t].sigma, ref[t]));
      }
      kls.push_back(ad::scale(ad::sum(ad::vstack(per_step)), 1.0 / static_cast<double>(steps.size())));
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const ad::Var imit = ad::scale(ad::sum(ad::vstack(imitation)), inv_b);
  ad::Var total = imit;
  FineTuneReport r;
  r.imitation = imit.scalar();
  if (!kls.empty()) {
    const ad::Var kl = ad::scale(ad::sum(ad::vstack(kls)), inv_b);
    r.kl = kl.scalar();
    total = ad::add(total, ad::scale(kl, w.kl_weight));
  }
  if (fisher != nullptr && w.ewc_lambda > 0) {
    const ad::Var e = ewc_penalty_var(model.params(), *fisher);
    r.ewc = e.scalar();
    total = ad::add(total, ad::scale(e, w.ewc_lambda));
  } else if (fisher != nullptr) {
    r.ewc = ewc_penalty(model.params(), *fisher);
  }
  ad::backward(total);
  opt.step(model.params(), frozen);
  r.total = total.scalar();
  return r;
}

/// `fresh_n` items from `fresh` and `replay_n` from `replay`, each without replacement.
template <typename T>
std::vector<T> compose_batch(const std::vector<T>& fresh, const std::vector<T>& replay, int batch_size, double replay_fraction,
                             Rng& rng) {
  auto take = [&rng](const std::vector<T>& src, std::size_t n, std::vector<T>& out) {
    std::vector<std::size_t> idx(src.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < std::min(n, src.size()); ++i) out.push_back(src[idx[i]]);
  };
  const auto b = static_cast<std::size_t>(batch_size);
  const std::size_t want_rep = replay.empty() ? 0 : static_cast<std::size_t>(std::llround(replay_fraction * static_cast<double>(b)));
  std::vector<T> out;
  take(fresh, b - std::min(want_rep, b), out);
  take(replay, want_rep, out);
  return out;
}

// ---------------------------------------------------------------------------
// Scheduler

enum class Decision { wait, fine_tune };

struct SchedulerState {
  TimePoint t_last{};
  std::size_t pending = 0;
};

/// Fires when enough triplets are pending or the interval has passed; resets t_last on fire.
inline Decision schedule_tick(SchedulerState& s, TimePoint now, const SchedulerConfig& cfg) {
  if (now < s.t_last) throw StateError("schedule_tick: clock went backwards");
  if (s.pending >= cfg.triplet_thr || now - s.t_last >= cfg.time_int) {
    s.t_last = now;
    return Decision::fine_tune;
  }
  return Decision::wait;
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int cycle) {
  char name[32];
  std::snprintf(name, sizeof name, "ckpt_cycle%02d.bin", cycle);
  return dir / name;
}

struct CycleReport {
  int cycle = 0;
  std::size_t fresh = 0;
  std::size_t replayed = 0;
  int steps = 0;
  double first_loss = 0;
  double last_loss = 0;
  std::size_t anchored = 0;
  std::filesystem::path checkpoint;

  [[nodiscard]] nlohmann::ordered_json to_json() const {
    return {{"cycle", cycle}, {"fresh", fresh},         {"replayed", replayed},  {"steps", steps},
            {"first_loss", first_loss}, {"last_loss", last_loss}, {"anchored", anchored}, {"checkpoint", checkpoint.string()}};
  }
};

/// Collects triplets and runs fine-tuning cycles on a copy of the policy.
/// Not thread-safe; callers serialize access.
class Scheduler {
 public:
  Scheduler(SchedulerConfig cfg, TimePoint start, std::filesystem::path checkpoint_dir = {})
      : cfg_(std::move(cfg)), buffer_(cfg_.replay_capacity), rng_(make_rng(cfg_.seed)), ckpt_dir_(std::move(checkpoint_dir)) {
    cfg_.check();
    state_.t_last = start;
  }

  void add(Triplet t) {
    check_rating(t.r_u, "r_u");
    if (t.r_e) check_rating(*t.r_e, "r_e");
    if (t.example.latents.rows() == 0) throw ConfigError("triplet carries no training example");
    pending_.push_back(std::move(t));
    state_.pending = pending_.size();
  }

  [[nodiscard]] std::size_t pending() const { return pending_.size(); }
  [[nodiscard]] const ReplayBuffer<Triplet>& buffer() const { return buffer_; }
  [[nodiscard]] int cycles_run() const { return cycle_; }
  [[nodiscard]] const SchedulerState& state() const { return state_; }
  [[nodiscard]] const SchedulerConfig& config() const { return cfg_; }

  /// Runs a cycle when the trigger fires and returns the updated policy.
  /// A fire with nothing pending only resets the interval clock.
  std::optional<std::pair<Decoder, CycleReport>> tick(TimePoint now, const Decoder& policy, const LatentVae* vae) {
    if (schedule_tick(state_, now, cfg_) == Decision::wait || pending_.empty()) return std::nullopt;
    return run_cycle(policy, vae);
  }

  std::pair<Decoder, CycleReport> run_cycle(const Decoder& policy, const LatentVae* vae) {
    if (pending_.empty()) throw StateError("run_cycle: no pending triplets");
    ++cycle_;
    const CycleSettings& cs = cfg_.cycle(cycle_);
    Decoder model = policy.clone();

    std::vector<SequenceExample> stability;
    const auto& stab_src = buffer_.size() > 0 ? buffer_.items() : pending_;
    for (std::size_t i = 0; i < std::min(cfg_.stability_size, stab_src.size()); ++i) stability.push_back(stab_src[i].example);
    const FisherDiag fisher = estimate_fisher(model, vae, stability, cfg_.objective, cfg_.anchor_fraction);
    const std::vector<bool> frozen = model.params().prefix_mask(frozen_prefixes(model.config(), cs.frozen_layers));

    std::vector<WeightedExample> fresh, replay;
    for (const auto& t : pending_) fresh.push_back({&t.example, reward(t.r_u, t.r_e, cfg_.w_u, cfg_.w_e)});
    for (const auto& t : buffer_.items()) replay.push_back({&t.example, reward(t.r_u, t.r_e, cfg_.w_u, cfg_.w_e)});

    const std::size_t fresh_per = std::max<std::size_t>(
        1, static_cast<std::size_t>(cfg_.batch_size) -
               (replay.empty() ? 0 : static_cast<std::size_t>(std::llround(cfg_.replay_fraction * cfg_.batch_size))));
    const int steps_per_epoch = static_cast<int>((fresh.size() + fresh_per - 1) / fresh_per);
    Adam opt({.lr = cs.lr});
    CycleReport rep;
    rep.cycle = cycle_;
    rep.fresh = fresh.size();
    rep.replayed = replay.size();
    rep.anchored = fisher.anchored_count();
    int step = 0;
    for (int e = 0; e < cs.epochs; ++e) {
      for (int s = 0; s < steps_per_epoch; ++s, ++step) {
        const auto batch = compose_batch(fresh, replay, cfg_.batch_size, cfg_.replay_fraction, rng_);
        const StepWeights w{ramped_kl_weight(cs.kl_weight, step, cfg_.ramp_steps), cfg_.ewc_lambda, cfg_.objective};
        const FineTuneReport r = fine_tune_step(model, vae, batch, policy, &fisher, w, opt, frozen);
        if (step == 0) rep.first_loss = r.total;
        rep.last_loss = r.total;
      }
    }
    rep.steps = step;

    for (auto& t : pending_) buffer_.insert(std::move(t), rng_);
    pending_.clear();
    state_.pending = 0;
    if (!ckpt_dir_.empty()) {
      std::filesystem::create_directories(ckpt_dir_);
      rep.checkpoint = checkpoint_path(ckpt_dir_, cycle_);
      checkpoint::save(rep.checkpoint, model.params());
    }
    return {std::move(model), rep};
  }

 private:
  SchedulerConfig cfg_;
  SchedulerState state_;
  std::vector<Triplet> pending_;
  ReplayBuffer<Triplet> buffer_;
  Rng rng_;
  std::filesystem::path ckpt_dir_;
  int cycle_ = 0;
};

}  // namespace signloop::hitl
