#pragma once

// Action-segment IR: typed segments, strict validation and canonical
// serialization. Unknown top-level keys ride along verbatim in `extra`.

#include "signloop/core/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace signloop::ir {

using Json = nlohmann::ordered_json;

inline constexpr std::string_view kSchemaId = "sign-ir/1";

inline constexpr std::array<std::string_view, 6> kCoreFields{"gloss_id", "handshape", "trajectory",
                                                              "duration", "non_manual_markers", "emphasis"};
inline constexpr std::array<std::string_view, 6> kRejectedFields{"speed",       "intensity",     "spatial_relation",
                                                                  "prosody_cue", "other_field_1", "other_field_2"};
inline constexpr std::array<std::string_view, 5> kFingers{"thumb", "index", "middle", "ring", "pinky"};

inline bool is_core_field(std::string_view k) { return std::find(kCoreFields.begin(), kCoreFields.end(), k) != kCoreFields.end(); }
inline bool is_rejected_field(std::string_view k) {
  return std::find(kRejectedFields.begin(), kRejectedFields.end(), k) != kRejectedFields.end();
}

/// Validation failure carrying a dotted field path and a stable code.
class ValidationError : public std::invalid_argument {
 public:
  ValidationError(std::string code, std::string path, const std::string& message)
      : std::invalid_argument(path.empty() ? message : path + ": " + message), code_(std::move(code)), path_(std::move(path)) {}
  [[nodiscard]] const std::string& code() const { return code_; }
  [[nodiscard]] const std::string& path() const { return path_; }

 private:
  std::string code_;
  std::string path_;
};

struct ValidationWarning {
  std::string path;
  std::string message;
  bool operator==(const ValidationWarning&) const = default;
};

enum class Emphasis { none, mild, strong };

inline std::string_view to_string(Emphasis e) {
  switch (e) {
    case Emphasis::none: return "none";
    case Emphasis::mild: return "mild";
    case Emphasis::strong: return "strong";
  }
  return "none";
}

inline std::optional<Emphasis> parse_emphasis(std::string_view s) {
  if (s == "none") return Emphasis::none;
  if (s == "mild") return Emphasis::mild;
  if (s == "strong") return Emphasis::strong;
  return std::nullopt;
}

/// Conditioning scalar fed to the decoder.
inline double emphasis_scalar(Emphasis e) {
  return e == Emphasis::none ? 0.0 : e == Emphasis::mild ? 0.5 : 1.0;
}

struct FingerConfig {
  double thumb = 0, index = 0, middle = 0, ring = 0, pinky = 0;

  [[nodiscard]] std::array<double, 5> values() const { return {thumb, index, middle, ring, pinky}; }
  bool operator==(const FingerConfig&) const = default;
};

struct Handshape {
  std::string type;
  FingerConfig finger_config;
  bool operator==(const Handshape&) const = default;
};

struct TrajectoryPoint {
  double x = 0, y = 0, z = 0, t_offset = 0;
  bool operator==(const TrajectoryPoint&) const = default;
};

struct NonManualMarkers {
  std::string facial_expression;
  std::string head_movement;
  std::string eye_gaze;
  bool operator==(const NonManualMarkers&) const = default;
};

// Documented (open) vocabularies; values outside them produce warnings.
inline constexpr std::array<std::string_view, 8> kFacialExpressions{
    "neutral", "smile", "frown", "raised_brows", "furrowed_brows", "puffed_cheeks", "pursed_lips", "surprise"};
inline constexpr std::array<std::string_view, 7> kHeadMovements{"none",      "nod",       "shake",    "tilt_forward",
                                                                 "tilt_back", "tilt_left", "tilt_right"};
inline constexpr std::array<std::string_view, 6> kEyeGaze{"straight", "up", "down", "left", "right", "addressee"};

struct ActionSegment {
  std::string gloss_id;
  Handshape handshape;
  std::vector<TrajectoryPoint> trajectory;
  double duration = 0;
  NonManualMarkers non_manual_markers;
  Emphasis emphasis = Emphasis::none;
  Json extra = Json::object();

  bool operator==(const ActionSegment& o) const;
};

/// Structural JSON equality: object key order is ignored.
inline bool json_equal(const Json& a, const Json& b) {
  if (a.is_object() && b.is_object()) {
    if (a.size() != b.size()) return false;
    for (const auto& [k, v] : a.items()) {
      const auto it = b.find(k);
      if (it == b.end() || !json_equal(v, *it)) return false;
    }
    return true;
  }
  if (a.is_array() && b.is_array()) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!json_equal(a[i], b[i])) return false;
    }
    return true;
  }
  return a == b;
}

inline bool ActionSegment::operator==(const ActionSegment& o) const {
  return gloss_id == o.gloss_id && handshape == o.handshape && trajectory == o.trajectory && duration == o.duration &&
         non_manual_markers == o.non_manual_markers && emphasis == o.emphasis && json_equal(extra, o.extra);
}

namespace detail {

inline std::string join(const std::string& base, std::string_view key) {
  return base.empty() ? std::string(key) : base + "." + std::string(key);
}

inline const Json& require(const Json& obj, std::string_view key, const std::string& base) {
  const auto it = obj.find(std::string(key));
  if (it == obj.end()) throw ValidationError("missing_field", join(base, key), "required field is missing");
  return *it;
}

inline void require_object(const Json& v, const std::string& path) {
  if (!v.is_object()) throw ValidationError("wrong_type", path, "expected an object");
}

inline void reject_unknown(const Json& obj, std::initializer_list<std::string_view> allowed, const std::string& base) {
  for (const auto& [k, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
      throw ValidationError("unknown_field", join(base, k), "unknown field");
    }
  }
}

inline double number(const Json& v, const std::string& path) {
  if (!v.is_number()) throw ValidationError("wrong_type", path, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ValidationError("not_finite", path, "number must be finite");
  return d;
}

inline std::string string(const Json& v, const std::string& path) {
  if (!v.is_string()) throw ValidationError("wrong_type", path, "expected a string");
  return v.get<std::string>();
}

template <std::size_t N>
inline bool contains(const std::array<std::string_view, N>& a, std::string_view s) {
  return std::find(a.begin(), a.end(), s) != a.end();
}

}  // namespace detail

/// Parses and validates one raw segment. Slack between the last t_offset and
/// duration beyond one frame at `fps` is reported through `warnings`.
inline ActionSegment validate(const Json& doc, std::vector<ValidationWarning>* warnings = nullptr, double fps = 25.0,
                              const std::string& base = "") {
  using namespace detail;
  require_object(doc, base);
  ActionSegment s;

  for (std::string_view f : kCoreFields) require(doc, f, base);
  for (const auto& [k, v] : doc.items()) {
    if (is_rejected_field(k)) throw ValidationError("rejected_field", join(base, k), "field is not part of the schema");
  }

  s.gloss_id = string(doc["gloss_id"], join(base, "gloss_id"));
  if (s.gloss_id.empty()) throw ValidationError("empty_value", join(base, "gloss_id"), "gloss_id must be non-empty");

  {
    const std::string hp = join(base, "handshape");
    const Json& h = doc["handshape"];
    require_object(h, hp);
    reject_unknown(h, {"type", "finger_config"}, hp);
    s.handshape.type = string(require(h, "type", hp), join(hp, "type"));
    if (s.handshape.type.empty()) throw ValidationError("empty_value", join(hp, "type"), "handshape type must be non-empty");
    const std::string fp = join(hp, "finger_config");
    const Json& fc = require(h, "finger_config", hp);
    require_object(fc, fp);
    reject_unknown(fc, {"thumb", "index", "middle", "ring", "pinky"}, fp);
    double* slots[5] = {&s.handshape.finger_config.thumb, &s.handshape.finger_config.index,
                        &s.handshape.finger_config.middle, &s.handshape.finger_config.ring,
                        &s.handshape.finger_config.pinky};
    for (std::size_t i = 0; i < kFingers.size(); ++i) {
      const std::string p = join(fp, kFingers[i]);
      const double v = number(require(fc, kFingers[i], fp), p);
      if (v < 0.0 || v > 1.0) throw ValidationError("out_of_range", p, "finger value must lie in [0, 1]");
      *slots[i] = v;
    }
  }

  {
    const std::string dp = join(base, "duration");
    s.duration = number(doc["duration"], dp);
    if (!(s.duration > 0)) throw ValidationError("out_of_range", dp, "duration must be > 0");
  }

  {
    const std::string tp = join(base, "trajectory");
    const Json& t = doc["trajectory"];
    if (!t.is_array()) throw ValidationError("wrong_type", tp, "expected an array");
    if (t.empty()) throw ValidationError("empty_trajectory", tp, "trajectory must contain at least one point");
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::string pp = join(tp, std::to_string(i));
      const Json& pt = t[i];
      require_object(pt, pp);
      reject_unknown(pt, {"x", "y", "z", "t_offset"}, pp);
      TrajectoryPoint q;
      q.x = number(require(pt, "x", pp), join(pp, "x"));
      q.y = number(require(pt, "y", pp), join(pp, "y"));
      q.z = number(require(pt, "z", pp), join(pp, "z"));
      q.t_offset = number(require(pt, "t_offset", pp), join(pp, "t_offset"));
      if (i == 0 && q.t_offset < 0) throw ValidationError("out_of_range", join(pp, "t_offset"), "t_offset must be >= 0");
      if (i > 0 && !(q.t_offset > s.trajectory.back().t_offset)) {
        throw ValidationError("non_monotone", join(pp, "t_offset"), "t_offset must be strictly increasing");
      }
      s.trajectory.push_back(q);
    }
    if (s.trajectory.back().t_offset > s.duration) {
      throw ValidationError("out_of_range", join(join(tp, std::to_string(t.size() - 1)), "t_offset"),
                            "last t_offset exceeds duration");
    }
    if (warnings != nullptr && fps > 0 && s.duration - s.trajectory.back().t_offset > 1.0 / fps + 1e-9) {
      warnings->push_back({join(base, "duration"), "duration exceeds the last t_offset by more than one frame"});
    }
  }

  {
    const std::string np = join(base, "non_manual_markers");
    const Json& n = doc["non_manual_markers"];
    require_object(n, np);
    reject_unknown(n, {"facial_expression", "head_movement", "eye_gaze"}, np);
    s.non_manual_markers.facial_expression = string(require(n, "facial_expression", np), join(np, "facial_expression"));
    s.non_manual_markers.head_movement = string(require(n, "head_movement", np), join(np, "head_movement"));
    s.non_manual_markers.eye_gaze = string(require(n, "eye_gaze", np), join(np, "eye_gaze"));
    if (warnings != nullptr) {
      if (!contains(kFacialExpressions, s.non_manual_markers.facial_expression)) {
        warnings->push_back({join(np, "facial_expression"), "unrecognized facial expression"});
      }
      if (!contains(kHeadMovements, s.non_manual_markers.head_movement)) {
        warnings->push_back({join(np, "head_movement"), "unrecognized head movement"});
      }
      if (!contains(kEyeGaze, s.non_manual_markers.eye_gaze)) {
        warnings->push_back({join(np, "eye_gaze"), "unrecognized eye gaze"});
      }
    }
  }

  {
    const std::string ep = join(base, "emphasis");
    const auto e = parse_emphasis(string(doc["emphasis"], ep));
    if (!e) throw ValidationError("enum_value", ep, "emphasis must be one of none, mild, strong");
    s.emphasis = *e;
  }

  for (const auto& [k, v] : doc.items()) {
    if (!is_core_field(k)) s.extra[k] = v;
  }
  return s;
}

inline ActionSegment validate_text(std::string_view text, std::vector<ValidationWarning>* warnings = nullptr,
                                   double fps = 25.0) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ValidationError("syntax", "", e.what());
  }
  return validate(doc, warnings, fps);
}

/// Canonical document: core fields in schema order, then extras in their original order.
inline Json to_json(const ActionSegment& s) {
  if (s.trajectory.empty()) throw ValidationError("empty_trajectory", "trajectory", "trajectory must contain at least one point");
  Json out = Json::object();
  out["gloss_id"] = s.gloss_id;
  Json fc = Json::object();
  const auto f = s.handshape.finger_config.values();
  for (std::size_t i = 0; i < kFingers.size(); ++i) fc[std::string(kFingers[i])] = f[i];
  out["handshape"] = Json{{"type", s.handshape.type}, {"finger_config", fc}};
  Json traj = Json::array();
  for (const auto& p : s.trajectory) traj.push_back(Json{{"x", p.x}, {"y", p.y}, {"z", p.z}, {"t_offset", p.t_offset}});
  out["trajectory"] = std::move(traj);
  out["duration"] = s.duration;
  out["non_manual_markers"] = Json{{"facial_expression", s.non_manual_markers.facial_expression},
                                   {"head_movement", s.non_manual_markers.head_movement},
                                   {"eye_gaze", s.non_manual_markers.eye_gaze}};
  out["emphasis"] = std::string(to_string(s.emphasis));
  for (const auto& [k, v] : s.extra.items()) out[k] = v;
  return out;
}

/// Shortest round-trip numeric rendering; `indent` < 0 gives compact output.
inline std::string serialize(const ActionSegment& s, int indent = 2) { return to_json(s).dump(indent); }

/// A "sign-ir/1" document: frame rate plus ordered segments.
struct IrDocument {
  double fps = 25.0;
  std::vector<ActionSegment> segments;
  Json extra = Json::object();

  bool operator==(const IrDocument& o) const {
    return fps == o.fps && segments == o.segments && json_equal(extra, o.extra);
  }
};

inline Json to_json(const IrDocument& d) {
  Json out = Json::object();
  out["schema"] = std::string(kSchemaId);
  out["fps"] = d.fps;
  Json segs = Json::array();
  for (const auto& s : d.segments) segs.push_back(to_json(s));
  out["segments"] = std::move(segs);
  for (const auto& [k, v] : d.extra.items()) out[k] = v;
  return out;
}

/// Accepts a full document or a bare single-segment object.
inline IrDocument parse_document(const Json& doc, std::vector<ValidationWarning>* warnings = nullptr) {
  detail::require_object(doc, "");
  IrDocument d;
  if (!doc.contains("segments")) {
    d.segments.push_back(validate(doc, warnings, d.fps));
    return d;
  }
  if (const auto it = doc.find("schema"); it != doc.end()) {
    if (!it->is_string() || it->get<std::string>() != kSchemaId) {
      throw ValidationError("schema", "schema", "unsupported schema id (expected sign-ir/1)");
    }
  }
  if (const auto it = doc.find("fps"); it != doc.end()) {
    d.fps = detail::number(*it, "fps");
    if (!(d.fps > 0)) throw ValidationError("out_of_range", "fps", "fps must be > 0");
  }
  const Json& segs = doc["segments"];
  if (!segs.is_array()) throw ValidationError("wrong_type", "segments", "expected an array");
  for (std::size_t i = 0; i < segs.size(); ++i) {
    d.segments.push_back(validate(segs[i], warnings, d.fps, "segments." + std::to_string(i)));
  }
  for (const auto& [k, v] : doc.items()) {
    if (k != "schema" && k != "fps" && k != "segments") d.extra[k] = v;
  }
  return d;
}

inline IrDocument parse_document_text(std::string_view text, std::vector<ValidationWarning>* warnings = nullptr) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ValidationError("syntax", "", e.what());
  }
  return parse_document(doc, warnings);
}

}  // namespace signloop::ir
