#pragma once

// Random valid segments for property tests and fixtures.

#include "signloop/core/rng.hpp"
#include "signloop/ir/segment.hpp"

#include <random>

namespace signloop::ir {

inline ActionSegment random_segment(Rng& rng, int max_points = 8) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> pos(0.0, 0.3);
  std::uniform_int_distribution<int> points(1, max_points);
  ActionSegment s;
  static const char* glosses[] = {"HELLO", "THANK_YOU", "PLEASE", "YES", "NO", "GOOD", "MORNING", "NAME", "HELP"};
  s.gloss_id = glosses[std::uniform_int_distribution<int>(0, 8)(rng)];
  static const char* types[] = {"A", "B", "C", "O", "S", "1", "V", "Y", "5"};
  s.handshape.type = types[std::uniform_int_distribution<int>(0, 8)(rng)];
  s.handshape.finger_config = {unit(rng), unit(rng), unit(rng), unit(rng), unit(rng)};
  const int n = points(rng);
  double t = 0.04 * unit(rng);
  for (int i = 0; i < n; ++i) {
    s.trajectory.push_back({pos(rng), pos(rng), pos(rng), t});
    t += 0.01 + 0.05 * unit(rng);
  }
  s.duration = s.trajectory.back().t_offset + 0.001 + 0.05 * unit(rng);
  s.non_manual_markers = {std::string(kFacialExpressions[std::uniform_int_distribution<std::size_t>(0, kFacialExpressions.size() - 1)(rng)]),
                          std::string(kHeadMovements[std::uniform_int_distribution<std::size_t>(0, kHeadMovements.size() - 1)(rng)]),
                          std::string(kEyeGaze[std::uniform_int_distribution<std::size_t>(0, kEyeGaze.size() - 1)(rng)])};
  s.emphasis = static_cast<Emphasis>(std::uniform_int_distribution<int>(0, 2)(rng));
  if (unit(rng) < 0.3) s.extra["camera_tag"] = "cam" + std::to_string(std::uniform_int_distribution<int>(1, 4)(rng));
  if (unit(rng) < 0.2) s.extra["comment"] = Json{{"author", "tester"}, {"score", unit(rng)}};
  return s;
}

}  // namespace signloop::ir
