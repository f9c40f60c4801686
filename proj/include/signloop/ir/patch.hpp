#pragma once

// Field-path patches over segment lists, segment frame spans, and
// field-level diffs with their inverse.

#include "signloop/ir/segment.hpp"
#include "signloop/motion/motion.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace signloop::ir {

/// One assignment: dotted path (numeric components index arrays) and value.
/// A null value on a UI-only key removes it.
struct PatchOp {
  std::string path;
  Json value;
  bool operator==(const PatchOp&) const = default;
};

struct Patch {
  std::size_t target_segment = 0;
  std::vector<PatchOp> ops;

  /// Top-level key of each op that is a core field.
  [[nodiscard]] bool semantic() const {
    for (const auto& op : ops) {
      if (is_core_field(op.path.substr(0, op.path.find('.')))) return true;
    }
    return false;
  }

  /// Paths touching only UI-only keys; stored but ignored by the decoder.
  [[nodiscard]] std::vector<std::string> non_semantic_paths() const {
    std::vector<std::string> out;
    for (const auto& op : ops) {
      if (!is_core_field(op.path.substr(0, op.path.find('.')))) out.push_back(op.path);
    }
    return out;
  }
};

namespace detail {

inline std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    out.push_back(path.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return out;
}

inline bool is_index(const std::string& s) {
  return !s.empty() && s.size() < 10 && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

inline void flatten_merge(const Json& obj, const std::string& base, std::vector<PatchOp>& out) {
  for (const auto& [k, v] : obj.items()) {
    const std::string p = join(base, k);
    if (v.is_object() && !v.empty() && is_core_field(split_path(p).front())) {
      flatten_merge(v, p, out);
    } else {
      out.push_back({p, v});
    }
  }
}

}  // namespace detail

/// Wire form: {"target_segment": i, "set": {path: value, ...}, "merge": {nested object}}.
inline Patch parse_patch(const Json& doc) {
  if (!doc.is_object()) throw ValidationError("wrong_type", "", "patch must be an object");
  for (const auto& [k, _] : doc.items()) {
    if (k != "target_segment" && k != "set" && k != "merge") throw ValidationError("unknown_field", k, "unknown patch key");
  }
  const auto t = doc.find("target_segment");
  if (t == doc.end()) throw ValidationError("missing_field", "target_segment", "required field is missing");
  if (!t->is_number_integer() || t->get<long long>() < 0) {
    throw ValidationError("wrong_type", "target_segment", "expected a non-negative integer");
  }
  Patch p;
  p.target_segment = static_cast<std::size_t>(t->get<long long>());
  if (const auto s = doc.find("set"); s != doc.end()) {
    if (!s->is_object()) throw ValidationError("wrong_type", "set", "expected an object");
    for (const auto& [k, v] : s->items()) p.ops.push_back({k, v});
  }
  if (const auto m = doc.find("merge"); m != doc.end()) {
    if (!m->is_object()) throw ValidationError("wrong_type", "merge", "expected an object");
    detail::flatten_merge(*m, "", p.ops);
  }
  if (p.ops.empty()) throw ValidationError("empty_patch", "set", "patch assigns no fields");
  for (const auto& op : p.ops) {
    const auto parts = detail::split_path(op.path);
    for (const auto& c : parts) {
      if (c.empty()) throw ValidationError("bad_path", op.path, "empty path component");
    }
    if (is_rejected_field(parts.front())) {
      throw ValidationError("rejected_field", op.path, "field is not part of the schema");
    }
    if (!is_core_field(parts.front()) && parts.size() > 1) {
      throw ValidationError("bad_path", op.path, "UI-only keys are set as whole values");
    }
  }
  return p;
}

inline Json to_json(const Patch& p) {
  Json set = Json::object();
  for (const auto& op : p.ops) set[op.path] = op.value;
  return Json{{"target_segment", p.target_segment}, {"set", set}};
}

/// Frame spans of consecutive segments at `fps`, 1-based inclusive; boundaries
/// are rounded cumulative durations.
inline std::vector<FrameRange> segment_frame_spans(const std::vector<ActionSegment>& segs, double fps) {
  if (!(fps > 0)) throw ConfigError("fps must be > 0");
  std::vector<FrameRange> out;
  double acc = 0;
  long prev_end = 0;
  for (const auto& s : segs) {
    acc += s.duration;
    const long end = std::max(prev_end, static_cast<long>(std::llround(acc * fps)));
    out.push_back({prev_end + 1, end});
    prev_end = end;
  }
  return out;
}

/// Index of the segment whose span contains frame t (the last one for frames past the end).
inline std::size_t segment_at_frame(const std::vector<FrameRange>& spans, FrameIndex t) {
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (t <= spans[i].last && spans[i].size() > 0) return i;
  }
  return spans.empty() ? 0 : spans.size() - 1;
}

struct PatchResult {
  std::vector<ActionSegment> segments;
  FrameRange touched;          // target segment's span after the patch
  bool semantic = false;       // false when only UI-only keys changed
  std::vector<std::string> ui_only_paths;
};

namespace detail {

inline void assign_path(Json& doc, const PatchOp& op) {
  const auto parts = split_path(op.path);
  Json* cur = &doc;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const bool last = i + 1 == parts.size();
    const std::string& c = parts[i];
    if (cur->is_array()) {
      if (!is_index(c)) throw ValidationError("bad_path", op.path, "array component must be an index");
      const auto idx = static_cast<std::size_t>(std::stoul(c));
      if (idx >= cur->size()) throw ValidationError("bad_path", op.path, "array index out of range");
      cur = &(*cur)[idx];
    } else if (cur->is_object()) {
      if (!last && !cur->contains(c)) throw ValidationError("bad_path", op.path, "path does not exist");
      if (last && i > 0 && !cur->contains(c)) throw ValidationError("unknown_field", op.path, "unknown field");
      cur = &(*cur)[c];
    } else {
      throw ValidationError("bad_path", op.path, "path descends into a scalar");
    }
  }
  *cur = op.value;
}

}  // namespace detail

/// Applies `patch` to the target segment; validation failure leaves `segs` untouched
/// and throws with the offending path.
inline PatchResult apply_patch(const std::vector<ActionSegment>& segs, const Patch& patch, double fps) {
  if (patch.target_segment >= segs.size()) {
    throw ValidationError("bad_target", "target_segment", "target segment does not exist");
  }
  Json doc = to_json(segs[patch.target_segment]);
  for (const auto& op : patch.ops) {
    const auto parts = detail::split_path(op.path);
    if (is_rejected_field(parts.front())) throw ValidationError("rejected_field", op.path, "field is not part of the schema");
    if (!is_core_field(parts.front())) {
      if (parts.size() > 1) throw ValidationError("bad_path", op.path, "UI-only keys are set as whole values");
      if (op.value.is_null()) {
        doc.erase(parts.front());
      } else {
        doc[parts.front()] = op.value;
      }
      continue;
    }
    detail::assign_path(doc, op);
  }
  PatchResult r;
  r.segments = segs;
  r.segments[patch.target_segment] = validate(doc, nullptr, fps);
  r.touched = segment_frame_spans(r.segments, fps)[patch.target_segment];
  r.semantic = patch.semantic();
  r.ui_only_paths = patch.non_semantic_paths();
  return r;
}

// ---------------------------------------------------------------------------
// Diffs

struct DiffEntry {
  std::size_t segment = 0;
  std::string op;  // replace | add | remove | insert_segment | delete_segment
  std::string path;
  Json old_value;
  Json new_value;
  bool operator==(const DiffEntry&) const = default;
};

inline Json to_json(const DiffEntry& e) {
  Json out{{"segment", e.segment}, {"op", e.op}, {"path", e.path}};
  if (!e.old_value.is_null()) out["old"] = e.old_value;
  if (!e.new_value.is_null()) out["new"] = e.new_value;
  return out;
}

namespace detail {

inline void diff_json(const Json& a, const Json& b, const std::string& path, std::size_t seg, std::vector<DiffEntry>& out) {
  if (a == b) return;
  if (a.is_object() && b.is_object()) {
    for (const auto& [k, v] : a.items()) {
      if (!b.contains(k)) {
        out.push_back({seg, "remove", join(path, k), v, nullptr});
      } else {
        diff_json(v, b[k], join(path, k), seg, out);
      }
    }
    for (const auto& [k, v] : b.items()) {
      if (!a.contains(k)) out.push_back({seg, "add", join(path, k), nullptr, v});
    }
    return;
  }
  if (a.is_array() && b.is_array() && a.size() == b.size()) {
    for (std::size_t i = 0; i < a.size(); ++i) diff_json(a[i], b[i], join(path, std::to_string(i)), seg, out);
    return;
  }
  out.push_back({seg, "replace", path, a, b});
}

}  // namespace detail

/// Minimal per-path diff; extra or missing trailing segments become insert/delete markers.
inline std::vector<DiffEntry> diff_segments(const std::vector<ActionSegment>& orig, const std::vector<ActionSegment>& edited) {
  std::vector<DiffEntry> out;
  const std::size_t common = std::min(orig.size(), edited.size());
  for (std::size_t i = 0; i < common; ++i) detail::diff_json(to_json(orig[i]), to_json(edited[i]), "", i, out);
  for (std::size_t i = common; i < edited.size(); ++i) out.push_back({i, "insert_segment", "", nullptr, to_json(edited[i])});
  for (std::size_t i = orig.size(); i-- > common;) out.push_back({i, "delete_segment", "", to_json(orig[i]), nullptr});
  return out;
}

inline std::vector<ActionSegment> apply_diff(const std::vector<ActionSegment>& orig, const std::vector<DiffEntry>& diff) {
  std::vector<Json> docs;
  for (const auto& s : orig) docs.push_back(to_json(s));
  for (const auto& e : diff) {
    if (e.op == "insert_segment") {
      if (e.segment > docs.size()) throw ValidationError("bad_target", "segment", "insert position out of range");
      docs.insert(docs.begin() + static_cast<std::ptrdiff_t>(e.segment), e.new_value);
      continue;
    }
    if (e.segment >= docs.size()) throw ValidationError("bad_target", "segment", "diff targets a missing segment");
    if (e.op == "delete_segment") {
      docs.erase(docs.begin() + static_cast<std::ptrdiff_t>(e.segment));
    } else if (e.op == "remove") {
      const auto parts = detail::split_path(e.path);
      Json* cur = &docs[e.segment];
      for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        cur = cur->is_array() ? &(*cur)[std::stoul(parts[i])] : &(*cur)[parts[i]];
      }
      cur->erase(parts.back());
    } else if (e.op == "replace" || e.op == "add") {
      if (e.path.empty()) {
        docs[e.segment] = e.new_value;
        continue;
      }
      const auto parts = detail::split_path(e.path);
      Json* cur = &docs[e.segment];
      for (const auto& c : parts) cur = cur->is_array() ? &(*cur)[std::stoul(c)] : &(*cur)[c];
      *cur = e.new_value;
    } else {
      throw ValidationError("bad_diff", "op", "unknown diff op " + e.op);
    }
  }
  std::vector<ActionSegment> out;
  for (std::size_t i = 0; i < docs.size(); ++i) out.push_back(validate(docs[i], nullptr, 25.0, "segments." + std::to_string(i)));
  return out;
}

}  // namespace signloop::ir
