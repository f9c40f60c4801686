#pragma once

// One audio stream through the full pipeline, plus its edit and rating loop.

#include "signloop/core/errors.hpp"
#include "signloop/core/params.hpp"
#include "signloop/encoder/mel.hpp"
#include "signloop/encoder/stream_encoder.hpp"
#include "signloop/hitl/hitl.hpp"
#include "signloop/ir/generate.hpp"
#include "signloop/ir/patch.hpp"
#include "signloop/kinematics/ik.hpp"
#include "signloop/mdn/decoder.hpp"
#include "signloop/resample/resample.hpp"
#include "signloop/service/config.hpp"
#include "signloop/service/metrics.hpp"
#include "signloop/service/stream.hpp"
#include "signloop/vae/latent_vae.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace signloop::service {

enum class SessionState { created, generating, editable, closed };

inline std::string_view to_string(SessionState s) {
  switch (s) {
    case SessionState::created: return "created";
    case SessionState::generating: return "generating";
    case SessionState::editable: return "editable";
    case SessionState::closed: return "closed";
  }
  return "unknown";
}

/// Immutable model components shared by sessions.
struct Models {
  MelConfig mel;
  std::shared_ptr<const StreamEncoder> encoder;
  std::shared_ptr<const LatentVae> vae;
  std::shared_ptr<const Decoder> decoder;
  std::shared_ptr<const ir::GlossVocab> vocab;
  Rig rig = default_rig();
};

inline Models build_models(const ServiceConfig& cfg) {
  Models m;
  m.mel = cfg.audio;
  m.encoder = std::make_shared<StreamEncoder>(cfg.encoder);
  auto vae = std::make_shared<LatentVae>(cfg.vae);
  if (!cfg.vae_checkpoint.empty()) checkpoint::load(cfg.vae_checkpoint, vae->params());
  auto dec = std::make_shared<Decoder>(cfg.decoder);
  if (!cfg.decoder_checkpoint.empty()) checkpoint::load(cfg.decoder_checkpoint, dec->params());
  m.vae = std::move(vae);
  m.decoder = std::move(dec);
  m.vocab = std::make_shared<ir::GlossVocab>(ir::GlossVocab::toy(cfg.decoder.vocab));
  return m;
}

/// Thread-safe append-only line-delimited JSON file.
class JsonlLog {
 public:
  explicit JsonlLog(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  }

  void append(const nlohmann::ordered_json& rec) {
    const std::string line = rec.dump() + "\n";
    std::lock_guard lock(mu_);
    std::ofstream os(path_, std::ios::app);
    if (!os) throw StateError("cannot open log " + path_.string());
    os << line;
  }

  [[nodiscard]] std::vector<nlohmann::ordered_json> read_all() const {
    std::lock_guard lock(mu_);
    std::vector<nlohmann::ordered_json> out;
    std::ifstream is(path_);
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty()) out.push_back(nlohmann::ordered_json::parse(line));
    }
    return out;
  }

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
};

struct LogSinks {
  std::shared_ptr<hitl::TripletLog> triplets;
  std::shared_ptr<JsonlLog> metrics;
  std::shared_ptr<JsonlLog> edits;

  static LogSinks open(const std::filesystem::path& dir) {
    return {std::make_shared<hitl::TripletLog>(dir / "triplets.jsonl"), std::make_shared<JsonlLog>(dir / "metrics.jsonl"),
            std::make_shared<JsonlLog>(dir / "edits.jsonl")};
  }
};

class Session {
 public:
  using TripletSink = std::function<void(const hitl::Triplet&)>;

  Session(std::string id, SessionConfig cfg, Models models, double budget_ms = 150.0, LogSinks logs = {},
          TripletSink on_triplet = {}, long example_frames = 128)
      : id_(std::move(id)),
        cfg_(cfg),
        models_(std::move(models)),
        frontend_(models_.mel),
        enc_state_(models_.encoder->initial_state()),
        dec_state_(models_.decoder->initial_state()),
        track_{SeqBuffer(static_cast<std::size_t>(cfg.max_frames)), {}, {}},
        metrics_(budget_ms),
        logs_(std::move(logs)),
        on_triplet_(std::move(on_triplet)),
        example_frames_(example_frames) {
    cfg_.check();
    if (models_.encoder->config().dim != models_.decoder->config().feature_dim) throw ConfigError("encoder/decoder dimension mismatch");
    if (models_.encoder->config().input_dim != models_.mel.n_mels) throw ConfigError("mel/encoder dimension mismatch");
    H_.resize(64, models_.encoder->config().dim);
    H_.setZero();
  }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  [[nodiscard]] const std::string& id() const { return id_; }
  [[nodiscard]] const SessionConfig& config() const { return cfg_; }

  [[nodiscard]] SessionState state() const {
    std::lock_guard lock(mu_);
    return state_;
  }

  [[nodiscard]] long frames() const {
    std::lock_guard lock(mu_);
    return track_.frames.length();
  }

  [[nodiscard]] std::uint64_t checksum() const {
    std::lock_guard lock(mu_);
    return track_.frames.checksum();
  }

  [[nodiscard]] std::vector<SkeletonFrame> skeleton() const {
    std::lock_guard lock(mu_);
    return skel_;
  }

  [[nodiscard]] std::vector<double> alphas() const {
    std::lock_guard lock(mu_);
    return alpha_;
  }

  [[nodiscard]] std::vector<ir::ActionSegment> segments() const {
    std::lock_guard lock(mu_);
    return track_.segments;
  }

  [[nodiscard]] const StageMetrics& stage_metrics() const { return metrics_; }

  /// Runs the chunk through every stage; emits frame and progress messages.
  nlohmann::ordered_json push_audio(std::span<const float> pcm) {
    std::lock_guard lock(mu_);
    require_state({SessionState::created, SessionState::generating}, "push_audio");
    for (float s : pcm) {
      if (!std::isfinite(s)) throw RangeError("audio samples must be finite");
    }
    if (pcm.empty()) return progress();
    state_ = SessionState::generating;

    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<MelFrame> mels = frontend_.push(pcm);
    const double per_mel = mels.empty() ? 0.0 : ms_since(t0) / static_cast<double>(mels.size());

    for (const MelFrame& mel : mels) {
      metrics_.add(Stage::frontend, per_mel);
      pending_ms_ += per_mel;
      const auto te = std::chrono::steady_clock::now();
      std::optional<FeatureFrame> feat = models_.encoder->encode_step(mel, enc_state_);
      const double enc_ms = ms_since(te);
      metrics_.add(Stage::encode, enc_ms);
      pending_ms_ += enc_ms;
      if (feat) emit_frame(feat->h);
    }
    return progress();
  }

  /// Closes the audio stream, derives the segments and makes the session editable.
  nlohmann::ordered_json end_audio() {
    std::lock_guard lock(mu_);
    require_state({SessionState::created, SessionState::generating}, "end_audio");
    const long T = track_.frames.length();
    if (T > 0) {
      Eigen::MatrixXd Z(T, models_.decoder->config().latent_dim);
      for (long t = 0; t < T; ++t) Z.row(t) = track_.latents[static_cast<std::size_t>(t)].transpose();
      const int radius = std::max(1, static_cast<int>(std::lround(cfg_.fps * 0.1)));
      track_.segments = ir::generate_action_structure(Z, ir::majority_filter(G_, radius), A_, cfg_.fps, *models_.vae, *models_.vocab);
    }
    original_ = track_.segments;
    state_ = SessionState::editable;
    publish(segments_message());
    publish(uncertainty_message());
    publish(progress());
    return document();
  }

  /// Applies a patch document, regenerates the window around the target segment
  /// and retransmits exactly that window with the supersede flag.
  nlohmann::ordered_json submit_edit(const nlohmann::ordered_json& patch_doc) {
    std::lock_guard lock(mu_);
    require_state({SessionState::editable}, "submit_edit");
    const ir::Patch patch = ir::parse_patch(patch_doc);
    const long T = track_.frames.length();
    if (patch.target_segment >= track_.segments.size()) {
      throw ir::ValidationError("bad_target", "target_segment", "target segment does not exist");
    }
    const auto spans = ir::segment_frame_spans(track_.segments, cfg_.fps);
    const FrameRange span = spans[patch.target_segment];
    const FrameIndex t_edit = std::clamp<FrameIndex>((span.first + span.last) / 2, 1, T);

    const std::uint64_t seq = edit_seq_ + 1;
    const ResampleModel model{models_.decoder.get(), models_.vae.get(), &H_, models_.vocab.get(), cfg_.fps, cfg_.temperature};
    const std::vector<ir::ActionSegment> before = track_.segments;
    const ResampleReport rep = apply_edit(track_, {{t_edit, patch, seq}, cfg_.window, edit_seed(seed(), seq)}, model);
    edit_seq_ = seq;
    last_window_ = rep.window;
    state_ = SessionState::generating;

    std::optional<SkeletonFrame> prev;
    if (rep.window.first > 1) prev = skel_[static_cast<std::size_t>(rep.window.first - 2)];
    publish({{"type", "resample"}, {"session", id_}, {"report", wire_report(rep)}});
    for (FrameIndex t = rep.window.first; t <= rep.window.last; ++t) {
      const auto i = static_cast<std::size_t>(t - 1);
      skel_[i] = solve_frame(track_.frames.at(t).pose, models_.rig, prev, cfg_.smoothing_alpha, t);
      alpha_[i] = rep.alphas[static_cast<std::size_t>(t - rep.window.first)];
      prev = skel_[i];
      publish(frame_wire(i, true));
    }
    state_ = SessionState::editable;
    publish(segments_message());
    publish(uncertainty_message());

    const auto diff = ir::diff_segments(before, track_.segments);
    nlohmann::ordered_json diff_json = nlohmann::ordered_json::array();
    for (const auto& d : diff) diff_json.push_back(ir::to_json(d));
    if (logs_.edits) {
      logs_.edits->append({{"session", id_}, {"seq_no", seq}, {"t_edit", t_edit}, {"patch", ir::to_json(patch)},
                           {"report", rep.to_json()}, {"diff", diff_json}});
    }
    if (logs_.metrics) logs_.metrics->append({{"session", id_}, {"kind", "edit"}, {"report", rep.to_json()}});

    nlohmann::ordered_json segs = nlohmann::ordered_json::array();
    for (const auto& s : track_.segments) segs.push_back(ir::to_json(s));
    return {{"report", wire_report(rep)}, {"segments", segs}, {"diff", diff_json}};
  }

  /// Records a Likert rating against the original and current segments.
  hitl::Triplet submit_rating(const nlohmann::ordered_json& body) {
    std::lock_guard lock(mu_);
    require_state({SessionState::editable}, "submit_rating");
    if (!body.is_object()) throw ir::ValidationError("wrong_type", "", "rating must be an object");
    for (const auto& [k, _] : body.items()) {
      if (k != "r_u" && k != "r_e") throw ir::ValidationError("unknown_field", k, "unknown rating key");
    }
    if (!body.contains("r_u")) throw ir::ValidationError("missing_field", "r_u", "required field is missing");
    if (!body["r_u"].is_number_integer()) throw ir::ValidationError("wrong_type", "r_u", "expected an integer rating");
    hitl::Triplet t;
    t.r_u = rating_value(body["r_u"]);
    hitl::check_rating(t.r_u, "r_u");
    if (body.contains("r_e") && !body["r_e"].is_null()) {
      if (!body["r_e"].is_number_integer()) throw ir::ValidationError("wrong_type", "r_e", "expected an integer rating");
      t.r_e = rating_value(body["r_e"]);
      hitl::check_rating(*t.r_e, "r_e");
    }
    t.ir_orig = original_;
    t.ir_edit = track_.segments;
    t.created_at = hitl::Clock::now();
    t.session = id_;
    if (track_.frames.length() > 0) t.example = training_example();
    if (logs_.triplets) logs_.triplets->append(t);
    if (on_triplet_ && t.example.latents.rows() > 0) on_triplet_(t);
    return t;
  }

  /// Subscribes from a 0-based frame index: replays current frames, then follows live traffic.
  std::shared_ptr<Subscriber> subscribe(long from = 0) {
    if (from < 0) throw RangeError("from must be >= 0");
    std::lock_guard lock(mu_);
    auto sub = std::make_shared<Subscriber>(from);
    for (std::size_t i = static_cast<std::size_t>(from); i < skel_.size(); ++i) sub->push(frame_wire(i, false));
    if (state_ == SessionState::editable) {
      sub->push(segments_message());
      sub->push(uncertainty_message());
    }
    if (state_ == SessionState::closed) {
      sub->push(end_message());
      sub->finish();
      return sub;
    }
    broadcast_.add(sub);
    return sub;
  }

  void close() {
    std::lock_guard lock(mu_);
    if (state_ == SessionState::closed) return;
    state_ = SessionState::closed;
    if (logs_.metrics) logs_.metrics->append({{"session", id_}, {"kind", "close"}, {"metrics", metrics_.to_json()}});
    publish(end_message());
    broadcast_.finish_all();
  }

  [[nodiscard]] nlohmann::ordered_json metrics() const {
    auto m = metrics_.to_json();
    m["session"] = id_;
    return m;
  }

  /// The current segments as a sign-ir/1 document with per-segment uncertainty.
  [[nodiscard]] nlohmann::ordered_json document() const {
    ir::IrDocument d;
    d.fps = cfg_.fps;
    d.segments = track_.segments;
    auto j = ir::to_json(d);
    j["uncertainty"] = segment_alphas();
    return j;
  }

  [[nodiscard]] nlohmann::ordered_json describe() const {
    std::lock_guard lock(mu_);
    return {{"id", id_},
            {"state", to_string(state_)},
            {"frames", track_.frames.length()},
            {"segments", track_.segments.size()},
            {"edits", edit_seq_},
            {"config", to_json(cfg_)}};
  }

  [[nodiscard]] nlohmann::ordered_json segments_document() const {
    std::lock_guard lock(mu_);
    return document();
  }

  [[nodiscard]] std::uint64_t seed() const { return cfg_.seed; }

 private:
  void require_state(std::initializer_list<SessionState> ok, const char* op) const {
    if (std::find(ok.begin(), ok.end(), state_) != ok.end()) return;
    throw StateError(std::string(op) + ": session " + id_ + " is " + std::string(to_string(state_)));
  }

  static int rating_value(const nlohmann::ordered_json& v) {
    const auto r = v.get<long long>();
    if (r < 1 || r > 5) throw RangeError("rating must lie in [1, 5]");
    return static_cast<int>(r);
  }

  static int argmax(const Eigen::VectorXd& v) {
    Eigen::Index i = 0;
    v.maxCoeff(&i);
    return static_cast<int>(i);
  }

  void emit_frame(const Eigen::VectorXd& h) {
    const long T = track_.frames.length();
    if (T >= cfg_.max_frames) throw RangeError("session frame capacity reached");
    if (H_.rows() <= T) {
      const Eigen::Index old = H_.rows();
      H_.conservativeResize(old * 2, Eigen::NoChange);
      H_.bottomRows(old).setZero();
    }
    H_.row(T) = h.transpose();
    const FrameIndex t = T + 1;
    const auto wall = std::chrono::steady_clock::now();

    auto td = std::chrono::steady_clock::now();
    std::optional<Eigen::VectorXd> prev;
    if (!track_.latents.empty()) prev = track_.latents.back();
    auto [out, z] = models_.decoder->decode_step(dec_state_, H_, prev, StepConditioning{},
                                                 SampleMode{cfg_.temperature, hash_seed(seed(), static_cast<std::uint64_t>(t))});
    const PoseVector pose = models_.vae->decode(z);
    const double alpha = uncertainty_alpha(out.mdn, z);
    G_.push_back(argmax(out.gloss_logits));
    A_.push_back(argmax(out.au_logits));
    track_.frames.append(pose);
    track_.latents.push_back(std::move(z));
    alpha_.push_back(alpha);
    metrics_.add(Stage::decode, ms_since(td));

    td = std::chrono::steady_clock::now();
    std::optional<SkeletonFrame> prev_skel;
    if (!skel_.empty()) prev_skel = skel_.back();
    skel_.push_back(solve_frame(pose, models_.rig, prev_skel, cfg_.smoothing_alpha, t));
    metrics_.add(Stage::ik, ms_since(td));

    td = std::chrono::steady_clock::now();
    auto msg = frame_wire(skel_.size() - 1, false);
    metrics_.add(Stage::serialize, ms_since(td));
    publish(msg);
    metrics_.add(Stage::end_to_end, pending_ms_ + ms_since(wall));
    pending_ms_ = 0;
  }

  [[nodiscard]] nlohmann::ordered_json frame_wire(std::size_t i, bool supersede) const {
    auto j = to_wire(skel_[i], id_);
    nlohmann::ordered_json msg{{"type", "frame"}, {"session", id_}, {"index", j["index"]}, {"alpha", alpha_[i]},
                               {"supersede", supersede}};
    if (supersede) msg["edit_seq"] = edit_seq_;
    msg["joints"] = std::move(j["joints"]);
    return msg;
  }

  [[nodiscard]] nlohmann::ordered_json progress() const {
    nlohmann::ordered_json j{{"type", "progress"}, {"session", id_}, {"state", to_string(state_)}, {"frames", track_.frames.length()},
                             {"mel_frames", frontend_.frames_emitted()}};
    j["gloss"] = G_.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(models_.vocab->name(G_.back()));
    return j;
  }

  /// Mean streamed alpha over each segment's frames; wire indices are 0-based.
  [[nodiscard]] nlohmann::ordered_json segment_alphas() const {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    if (track_.segments.empty()) return out;
    const auto spans = ir::segment_frame_spans(track_.segments, cfg_.fps);
    const long T = static_cast<long>(alpha_.size());
    for (std::size_t s = 0; s < spans.size(); ++s) {
      const long a = spans[s].first, b = std::min(spans[s].last, T);
      double sum = 0;
      for (long t = a; t <= b; ++t) sum += alpha_[static_cast<std::size_t>(t - 1)];
      nlohmann::ordered_json e{{"segment", s}, {"first", a - 1}, {"last", b - 1}};
      e["alpha"] = b >= a ? nlohmann::ordered_json(sum / static_cast<double>(b - a + 1)) : nlohmann::ordered_json(nullptr);
      out.push_back(std::move(e));
    }
    return out;
  }

  [[nodiscard]] nlohmann::ordered_json uncertainty_message() const {
    return {{"type", "uncertainty"}, {"session", id_}, {"segments", segment_alphas()}};
  }

  [[nodiscard]] nlohmann::ordered_json segments_message() const {
    ir::IrDocument d;
    d.fps = cfg_.fps;
    d.segments = track_.segments;
    return {{"type", "segments"}, {"session", id_}, {"edit_seq", edit_seq_}, {"document", ir::to_json(d)}};
  }

  [[nodiscard]] nlohmann::ordered_json end_message() const {
    return {{"type", "end"}, {"session", id_}, {"frames", track_.frames.length()}};
  }

  /// Report with 0-based wire indices.
  static nlohmann::ordered_json wire_report(const ResampleReport& r) {
    auto j = r.to_json();
    j["first_index"] = r.window.first - 1;
    j["last_index"] = r.window.last - 1;
    return j;
  }

  void publish(const nlohmann::ordered_json& msg) { broadcast_.publish(msg); }

  /// Teacher-forcing targets over a crop centered on the latest edit.
  [[nodiscard]] SequenceExample training_example() const {
    const long T = track_.frames.length();
    const long L = std::min<long>(T, example_frames_);
    long start = 1;
    if (last_window_) {
      const long center = (last_window_->first + last_window_->last) / 2;
      start = std::clamp<long>(center - L / 2, 1, T - L + 1);
    }
    SequenceExample ex;
    ex.features = H_.middleRows(start - 1, L);
    ex.latents.resize(L, models_.decoder->config().latent_dim);
    ex.poses.resize(L, static_cast<Eigen::Index>(PoseVector::kSize));
    for (long i = 0; i < L; ++i) {
      const auto t = static_cast<std::size_t>(start - 1 + i);
      ex.latents.row(i) = track_.latents[t].transpose();
      const auto v = track_.frames.at(start + i).pose.values();
      for (std::size_t k = 0; k < v.size(); ++k) ex.poses(i, static_cast<Eigen::Index>(k)) = v[k];
      ex.au.push_back(std::clamp(A_[t], 0, models_.decoder->config().au_classes - 1));
    }
    ex.conditioning = ir::conditioning_for_range(track_.segments, *models_.vocab, cfg_.fps, start, start + L - 1);
    for (const auto& c : ex.conditioning) ex.gloss.push_back(c.gloss);
    return ex;
  }

  std::string id_;
  SessionConfig cfg_;
  Models models_;
  mutable std::mutex mu_;
  SessionState state_ = SessionState::created;
  MelFrontend frontend_;
  EncoderState enc_state_;
  DecoderState dec_state_;
  Eigen::MatrixXd H_;
  MotionTrack track_;
  std::vector<ir::ActionSegment> original_;
  std::vector<SkeletonFrame> skel_;
  std::vector<double> alpha_;
  std::vector<int> G_, A_;
  std::uint64_t edit_seq_ = 0;
  std::optional<FrameRange> last_window_;
  double pending_ms_ = 0;
  StageMetrics metrics_;
  Broadcaster broadcast_;
  LogSinks logs_;
  TripletSink on_triplet_;
  long example_frames_;
};

}  // namespace signloop::service
