#pragma once

#include <json.hpp>

#include <array>
#include <limits>
#include <random>
#include <string>

namespace signloop::testing {

/// Malformed and borderline edit payloads, as raw request bodies.
class EditFuzzer {
 public:
  explicit EditFuzzer(std::uint64_t seed) : rng_(seed) {}

  std::string next() {
    switch (pick(6)) {
      case 0: return random_bytes();
      case 1: return dump(random_value(3));
      case 2: return truncate(dump(patch()));
      default: return dump(patch());
    }
  }

 private:
  static std::string dump(const nlohmann::ordered_json& j) {
    return j.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
  }

  int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }

  std::string random_bytes() {
    std::string s(static_cast<std::size_t>(pick(40)), '\0');
    for (auto& c : s) c = static_cast<char>(pick(256));
    return s;
  }

  std::string truncate(const std::string& s) { return s.substr(0, static_cast<std::size_t>(pick(static_cast<int>(s.size()) + 1))); }

  nlohmann::ordered_json random_value(int depth) {
    static const std::array<const char*, 10> words{"", "mild", "strong", "B", "happy", "nod", "x", "\xff\xfe", "null", "1e999"};
    switch (pick(depth > 0 ? 9 : 6)) {
      case 0: return nullptr;
      case 1: return pick(2) == 1;
      case 2: return std::uniform_int_distribution<long long>(-5, 5)(rng_);
      case 3: {
        static const std::array<double, 8> v{0.0, -1.0, 0.5, 1.3, 1e308, -1e308, 1e-320, 25.0};
        return v[static_cast<std::size_t>(pick(8))];
      }
      case 4: return std::numeric_limits<long long>::max();
      case 5: return std::string(words[static_cast<std::size_t>(pick(10))]);
      case 6: {
        auto a = nlohmann::ordered_json::array();
        for (int i = pick(4); i > 0; --i) a.push_back(random_value(depth - 1));
        return a;
      }
      default: {
        auto o = nlohmann::ordered_json::object();
        for (int i = pick(4); i > 0; --i) o[path()] = random_value(depth - 1);
        return o;
      }
    }
  }

  std::string path() {
    static const std::array<const char*, 24> paths{
        "emphasis", "duration", "gloss_id", "handshape", "handshape.type", "handshape.finger_config.index",
        "handshape.finger_config.thumb", "trajectory", "trajectory.0.x", "trajectory.0.t_offset", "trajectory.9.y",
        "non_manual_markers.facial_expression", "non_manual_markers.head_movement", "non_manual_markers.eye_gaze",
        "speed", "intensity", "spatial_relation", "hand_location", "palm_orientation", "ui_color", "ui_note.x", "",
        "..", "emphasis."};
    return paths[static_cast<std::size_t>(pick(static_cast<int>(paths.size())))];
  }

  nlohmann::ordered_json patch() {
    nlohmann::ordered_json p = nlohmann::ordered_json::object();
    switch (pick(6)) {
      case 0: break;
      case 1: p["target_segment"] = random_value(0); break;
      case 2: p["target_segment"] = pick(5) - 1; break;
      default: p["target_segment"] = 0; break;
    }
    const int kind = pick(8);
    if (kind < 5) {
      auto set = nlohmann::ordered_json::object();
      for (int i = pick(3) + (kind == 0 ? 0 : 1); i > 0; --i) set[path()] = random_value(2);
      p["set"] = set;
    } else if (kind == 5) {
      p["merge"] = random_value(2);
    } else if (kind == 6) {
      p["set"] = random_value(1);
    } else {
      p[path()] = random_value(1);
    }
    return p;
  }

  std::mt19937_64 rng_;
};

}  // namespace signloop::testing
