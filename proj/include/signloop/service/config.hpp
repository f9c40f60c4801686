#pragma once

// Versioned service configuration with every default spelled out.

#include "signloop/core/errors.hpp"
#include "signloop/encoder/mel.hpp"
#include "signloop/encoder/stream_encoder.hpp"
#include "signloop/hitl/hitl.hpp"
#include "signloop/mdn/decoder.hpp"
#include "signloop/motion/motion.hpp"
#include "signloop/vae/latent_vae.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace signloop::service {

using Json = nlohmann::ordered_json;

inline constexpr int kConfigVersion = 1;

/// Per-session knobs; everything else is fixed by the service.
struct SessionConfig {
  double fps = 25.0;
  WindowParams window{50, 8};
  std::uint64_t seed = 0;  // 0: derived from the service seed and session counter
  double temperature = 1.0;
  double smoothing_alpha = 0.1;
  long max_frames = 6000;

  void check() const {
    if (!(fps > 0) || !std::isfinite(fps)) throw ConfigError("fps must be > 0");
    window.check();
    if (!(temperature > 0) || !std::isfinite(temperature)) throw ConfigError("temperature must be > 0");
    if (!(smoothing_alpha >= 0 && smoothing_alpha < 1)) throw ConfigError("smoothing_alpha must lie in [0, 1)");
    if (max_frames < 1) throw ConfigError("max_frames must be >= 1");
  }
};

struct HitlConfig {
  bool enabled = true;
  hitl::SchedulerConfig scheduler{};
  double tick_seconds = 60.0;
  long example_frames = 128;

  void check() const {
    scheduler.check();
    if (!(tick_seconds > 0)) throw ConfigError("hitl.tick_seconds must be > 0");
    if (example_frames < 1) throw ConfigError("hitl.example_frames must be >= 1");
  }
};

struct ServiceConfig {
  int version = kConfigVersion;
  SessionConfig session{};
  MelConfig audio{};
  EncoderConfig encoder{};
  VaeConfig vae{};
  DecoderConfig decoder{};
  HitlConfig hitl{};
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_dir = "signloop-data";
  std::string log_level = "info";
  double budget_ms = 150.0;
  std::size_t max_sessions = 64;
  std::size_t max_chunk_samples = 16000 * 10;
  std::uint64_t seed = 1;
  std::filesystem::path vae_checkpoint;
  std::filesystem::path decoder_checkpoint;

  void check() const {
    if (version != kConfigVersion) throw ConfigError("unsupported config version " + std::to_string(version));
    session.check();
    audio.check();
    encoder.check();
    vae.check();
    decoder.check();
    hitl.check();
    if (encoder.input_dim != audio.n_mels) throw ConfigError("encoder.input_dim must equal audio.n_mels");
    if (decoder.feature_dim != encoder.dim) throw ConfigError("decoder.feature_dim must equal encoder.dim");
    if (decoder.latent_dim != vae.latent_dim) throw ConfigError("decoder.latent_dim must equal vae.latent_dim");
    if (vae.pose_dim != static_cast<int>(PoseVector::kSize)) throw ConfigError("vae.pose_dim must be 228");
    if (port < 0 || port > 65535) throw ConfigError("port out of range");
    if (!(budget_ms > 0)) throw ConfigError("budget_ms must be > 0");
    if (max_sessions < 1 || max_chunk_samples < 1) throw ConfigError("service limits must be positive");
    static const std::array<std::string_view, 6> levels{"trace", "debug", "info", "warn", "error", "off"};
    if (std::find(levels.begin(), levels.end(), log_level) == levels.end()) throw ConfigError("unknown log_level " + log_level);
  }
};

namespace detail {

/// Reads `key` into `out` when present; type mismatches name the dotted path.
template <typename T>
void get(const Json& j, const char* key, T& out, const std::string& base) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  const std::string path = base.empty() ? key : base + "." + key;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw ConfigError("");
      if constexpr (std::is_unsigned_v<T>) {
        if (it->is_number_unsigned() == false && it->template get<long long>() < 0) throw ConfigError("");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError("");
    } else {
      if (!it->is_string()) throw ConfigError("");
    }
    out = it->template get<T>();
  } catch (const ConfigError&) {
    throw ConfigError("config: bad value at " + path);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: bad value at " + path);
  }
}

inline void allow_only(const Json& j, std::initializer_list<std::string_view> keys, const std::string& base) {
  if (!j.is_object()) throw ConfigError("config: expected an object at " + (base.empty() ? std::string("<root>") : base));
  for (const auto& [k, _] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw ConfigError("config: unknown key " + (base.empty() ? k : base + "." + k));
    }
  }
}

inline const Json* section(const Json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

}  // namespace detail

inline Json to_json(const SessionConfig& c) {
  return {{"fps", c.fps},
          {"window", {{"delta", c.window.delta}, {"k", c.window.k}}},
          {"seed", c.seed},
          {"temperature", c.temperature},
          {"smoothing_alpha", c.smoothing_alpha},
          {"max_frames", c.max_frames}};
}

/// Overlays `j` onto `c`; unknown keys are rejected.
inline void merge(SessionConfig& c, const Json& j, const std::string& base = "") {
  detail::allow_only(j, {"fps", "window", "seed", "temperature", "smoothing_alpha", "max_frames"}, base);
  const std::string b = base.empty() ? "" : base;
  detail::get(j, "fps", c.fps, b);
  if (const Json* w = detail::section(j, "window")) {
    const std::string wb = b.empty() ? "window" : b + ".window";
    detail::allow_only(*w, {"delta", "k"}, wb);
    detail::get(*w, "delta", c.window.delta, wb);
    detail::get(*w, "k", c.window.k, wb);
  }
  detail::get(j, "seed", c.seed, b);
  detail::get(j, "temperature", c.temperature, b);
  detail::get(j, "smoothing_alpha", c.smoothing_alpha, b);
  detail::get(j, "max_frames", c.max_frames, b);
}

inline Json to_json(const ServiceConfig& c) {
  const auto& s = c.hitl.scheduler;
  Json cycles = Json::array();
  for (const auto& cy : s.cycles) {
    cycles.push_back({{"epochs", cy.epochs}, {"lr", cy.lr}, {"kl_weight", cy.kl_weight}, {"frozen_layers", cy.frozen_layers}});
  }
  return {
      {"version", c.version},
      {"session", to_json(c.session)},
      {"audio",
       {{"sample_rate", c.audio.sample_rate},
        {"window_ms", c.audio.window_ms},
        {"hop_ms", c.audio.hop_ms},
        {"n_fft", c.audio.n_fft},
        {"n_mels", c.audio.n_mels},
        {"f_min", c.audio.f_min},
        {"f_max", c.audio.f_max}}},
      {"encoder",
       {{"input_dim", c.encoder.input_dim},
        {"layers", c.encoder.layers},
        {"dim", c.encoder.dim},
        {"downsample_factor", c.encoder.downsample_factor},
        {"conv_kernel", c.encoder.conv_kernel},
        {"max_context", c.encoder.max_context},
        {"ffn_mult", c.encoder.ffn_mult},
        {"seed", c.encoder.seed}}},
      {"vae",
       {{"latent_dim", c.vae.latent_dim},
        {"hidden1", c.vae.hidden1},
        {"hidden2", c.vae.hidden2},
        {"pose_dim", c.vae.pose_dim},
        {"seed", c.vae.seed}}},
      {"decoder",
       {{"latent_dim", c.decoder.latent_dim},
        {"model_dim", c.decoder.model_dim},
        {"feature_dim", c.decoder.feature_dim},
        {"blocks", c.decoder.blocks},
        {"components", c.decoder.components},
        {"vocab", c.decoder.vocab},
        {"au_classes", c.decoder.au_classes},
        {"max_context", c.decoder.max_context},
        {"cross_context", c.decoder.cross_context},
        {"sigma_floor", c.decoder.sigma_floor},
        {"seed", c.decoder.seed}}},
      {"hitl",
       {{"enabled", c.hitl.enabled},
        {"tick_seconds", c.hitl.tick_seconds},
        {"example_frames", c.hitl.example_frames},
        {"triplet_threshold", s.triplet_thr},
        {"interval_seconds", s.time_int.count()},
        {"replay_fraction", s.replay_fraction},
        {"w_u", s.w_u},
        {"w_e", s.w_e},
        {"ewc_lambda", s.ewc_lambda},
        {"anchor_fraction", s.anchor_fraction},
        {"ramp_steps", s.ramp_steps},
        {"batch_size", s.batch_size},
        {"replay_capacity", s.replay_capacity},
        {"stability_size", s.stability_size},
        {"seed", s.seed},
        {"cycles", cycles}}},
      {"server", {{"host", c.host}, {"port", c.port}, {"max_sessions", c.max_sessions}, {"max_chunk_samples", c.max_chunk_samples}}},
      {"data_dir", c.data_dir.string()},
      {"log_level", c.log_level},
      {"budget_ms", c.budget_ms},
      {"seed", c.seed},
      {"checkpoints", {{"vae", c.vae_checkpoint.string()}, {"decoder", c.decoder_checkpoint.string()}}},
  };
}

/// Parses a possibly partial document over the defaults and checks the result.
inline ServiceConfig config_from_json(const Json& j) {
  using detail::get;
  ServiceConfig c;
  detail::allow_only(j, {"version", "session", "audio", "encoder", "vae", "decoder", "hitl", "server", "data_dir", "log_level",
                         "budget_ms", "seed", "checkpoints"},
                     "");
  get(j, "version", c.version, "");
  if (const Json* s = detail::section(j, "session")) merge(c.session, *s, "session");
  if (const Json* a = detail::section(j, "audio")) {
    detail::allow_only(*a, {"sample_rate", "window_ms", "hop_ms", "n_fft", "n_mels", "f_min", "f_max"}, "audio");
    get(*a, "sample_rate", c.audio.sample_rate, "audio");
    get(*a, "window_ms", c.audio.window_ms, "audio");
    get(*a, "hop_ms", c.audio.hop_ms, "audio");
    get(*a, "n_fft", c.audio.n_fft, "audio");
    get(*a, "n_mels", c.audio.n_mels, "audio");
    get(*a, "f_min", c.audio.f_min, "audio");
    get(*a, "f_max", c.audio.f_max, "audio");
  }
  if (const Json* e = detail::section(j, "encoder")) {
    detail::allow_only(*e, {"input_dim", "layers", "dim", "downsample_factor", "conv_kernel", "max_context", "ffn_mult", "seed"},
                       "encoder");
    get(*e, "input_dim", c.encoder.input_dim, "encoder");
    get(*e, "layers", c.encoder.layers, "encoder");
    get(*e, "dim", c.encoder.dim, "encoder");
    get(*e, "downsample_factor", c.encoder.downsample_factor, "encoder");
    get(*e, "conv_kernel", c.encoder.conv_kernel, "encoder");
    get(*e, "max_context", c.encoder.max_context, "encoder");
    get(*e, "ffn_mult", c.encoder.ffn_mult, "encoder");
    get(*e, "seed", c.encoder.seed, "encoder");
  }
  if (const Json* v = detail::section(j, "vae")) {
    detail::allow_only(*v, {"latent_dim", "hidden1", "hidden2", "pose_dim", "seed"}, "vae");
    get(*v, "latent_dim", c.vae.latent_dim, "vae");
    get(*v, "hidden1", c.vae.hidden1, "vae");
    get(*v, "hidden2", c.vae.hidden2, "vae");
    get(*v, "pose_dim", c.vae.pose_dim, "vae");
    get(*v, "seed", c.vae.seed, "vae");
  }
  if (const Json* d = detail::section(j, "decoder")) {
    detail::allow_only(*d, {"latent_dim", "model_dim", "feature_dim", "blocks", "components", "vocab", "au_classes", "max_context",
                            "cross_context", "sigma_floor", "seed"},
                       "decoder");
    get(*d, "latent_dim", c.decoder.latent_dim, "decoder");
    get(*d, "model_dim", c.decoder.model_dim, "decoder");
    get(*d, "feature_dim", c.decoder.feature_dim, "decoder");
    get(*d, "blocks", c.decoder.blocks, "decoder");
    get(*d, "components", c.decoder.components, "decoder");
    get(*d, "vocab", c.decoder.vocab, "decoder");
    get(*d, "au_classes", c.decoder.au_classes, "decoder");
    get(*d, "max_context", c.decoder.max_context, "decoder");
    get(*d, "cross_context", c.decoder.cross_context, "decoder");
    get(*d, "sigma_floor", c.decoder.sigma_floor, "decoder");
    get(*d, "seed", c.decoder.seed, "decoder");
  }
  if (const Json* h = detail::section(j, "hitl")) {
    auto& s = c.hitl.scheduler;
    detail::allow_only(*h, {"enabled", "tick_seconds", "example_frames", "triplet_threshold", "interval_seconds", "replay_fraction",
                            "w_u", "w_e", "ewc_lambda", "anchor_fraction", "ramp_steps", "batch_size", "replay_capacity",
                            "stability_size", "seed", "cycles"},
                       "hitl");
    get(*h, "enabled", c.hitl.enabled, "hitl");
    get(*h, "tick_seconds", c.hitl.tick_seconds, "hitl");
    get(*h, "example_frames", c.hitl.example_frames, "hitl");
    get(*h, "triplet_threshold", s.triplet_thr, "hitl");
    long long secs = s.time_int.count();
    get(*h, "interval_seconds", secs, "hitl");
    s.time_int = std::chrono::seconds(secs);
    get(*h, "replay_fraction", s.replay_fraction, "hitl");
    get(*h, "w_u", s.w_u, "hitl");
    get(*h, "w_e", s.w_e, "hitl");
    get(*h, "ewc_lambda", s.ewc_lambda, "hitl");
    get(*h, "anchor_fraction", s.anchor_fraction, "hitl");
    get(*h, "ramp_steps", s.ramp_steps, "hitl");
    get(*h, "batch_size", s.batch_size, "hitl");
    get(*h, "replay_capacity", s.replay_capacity, "hitl");
    get(*h, "stability_size", s.stability_size, "hitl");
    get(*h, "seed", s.seed, "hitl");
    if (const Json* cy = detail::section(*h, "cycles")) {
      if (!cy->is_array()) throw ConfigError("config: bad value at hitl.cycles");
      s.cycles.clear();
      for (std::size_t i = 0; i < cy->size(); ++i) {
        const std::string base = "hitl.cycles." + std::to_string(i);
        detail::allow_only((*cy)[i], {"epochs", "lr", "kl_weight", "frozen_layers"}, base);
        hitl::CycleSettings cs{};
        get((*cy)[i], "epochs", cs.epochs, base);
        get((*cy)[i], "lr", cs.lr, base);
        get((*cy)[i], "kl_weight", cs.kl_weight, base);
        get((*cy)[i], "frozen_layers", cs.frozen_layers, base);
        s.cycles.push_back(cs);
      }
    }
  }
  if (const Json* sv = detail::section(j, "server")) {
    detail::allow_only(*sv, {"host", "port", "max_sessions", "max_chunk_samples"}, "server");
    get(*sv, "host", c.host, "server");
    get(*sv, "port", c.port, "server");
    get(*sv, "max_sessions", c.max_sessions, "server");
    get(*sv, "max_chunk_samples", c.max_chunk_samples, "server");
  }
  std::string dir = c.data_dir.string();
  get(j, "data_dir", dir, "");
  c.data_dir = dir;
  get(j, "log_level", c.log_level, "");
  get(j, "budget_ms", c.budget_ms, "");
  get(j, "seed", c.seed, "");
  if (const Json* ck = detail::section(j, "checkpoints")) {
    detail::allow_only(*ck, {"vae", "decoder"}, "checkpoints");
    std::string v, d;
    get(*ck, "vae", v, "checkpoints");
    get(*ck, "decoder", d, "checkpoints");
    c.vae_checkpoint = v;
    c.decoder_checkpoint = d;
  }
  c.check();
  return c;
}

/// SIGNLOOP_LOG_LEVEL and SIGNLOOP_DATA_DIR override the file.
inline void apply_environment(ServiceConfig& c) {
  if (const char* lvl = std::getenv("SIGNLOOP_LOG_LEVEL"); lvl && *lvl) c.log_level = lvl;
  if (const char* dir = std::getenv("SIGNLOOP_DATA_DIR"); dir && *dir) c.data_dir = dir;
  c.check();
}

inline ServiceConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace signloop::service
