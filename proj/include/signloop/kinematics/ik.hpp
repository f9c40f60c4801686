#pragma once

// Analytic two-bone IK per limb and first-order smoothing of solved joints.

#include "signloop/core/errors.hpp"
#include "signloop/motion/motion.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace signloop {

using Vec3 = Eigen::Vector3d;

struct LimbSpec {
  std::string name;
  Vec3 base = Vec3::Zero();
  double l1 = 0.3;
  double l2 = 0.3;
  Vec3 bend_axis = Vec3::UnitZ();
  int target_index = 0;  // pose values [i, i+3) give the target offset from base

  void check() const {
    if (!(l1 > 0) || !(l2 > 0)) throw ConfigError("limb " + name + ": bone lengths must be > 0");
    if (std::abs(bend_axis.norm() - 1.0) > 1e-9) throw ConfigError("limb " + name + ": bend_axis must be unit length");
    if (!base.allFinite()) throw ConfigError("limb " + name + ": non-finite base");
    if (target_index < 0 || target_index + 3 > static_cast<int>(PoseVector::kBodyEnd)) {
      throw ConfigError("limb " + name + ": target index outside the body subrange");
    }
  }
};

struct IkResult {
  Vec3 joint;
  Vec3 effector;
  bool reached = true;
};

namespace detail {

inline Vec3 any_orthogonal(const Vec3& v) {
  const Vec3 trial = std::abs(v.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return v.cross(trial).normalized();
}

}  // namespace detail

/// Targets outside [|l1-l2|, l1+l2] are clamped onto the base-target ray.
inline IkResult two_bone_ik(const LimbSpec& limb, const Vec3& target) {
  if (!target.allFinite()) throw ConfigError("two_bone_ik: non-finite target");
  const Vec3 offset = target - limb.base;
  const double d = offset.norm();
  const double dmin = std::abs(limb.l1 - limb.l2), dmax = limb.l1 + limb.l2;
  Vec3 dir = d > 1e-12 ? Vec3(offset / d) : detail::any_orthogonal(limb.bend_axis);
  const double dc = std::clamp(d, dmin, dmax);
  IkResult r;
  r.reached = d >= dmin && d <= dmax;

  Vec3 perp = limb.bend_axis - limb.bend_axis.dot(dir) * dir;
  perp = perp.norm() > 1e-9 ? Vec3(perp.normalized()) : detail::any_orthogonal(dir);

  if (dc < 1e-12) {  // folded limb, l1 == l2, target at base
    r.joint = limb.base + perp * limb.l1;
    r.effector = limb.base;
    return r;
  }
  const double a = (limb.l1 * limb.l1 - limb.l2 * limb.l2 + dc * dc) / (2 * dc);
  const double h = std::sqrt(std::max(0.0, limb.l1 * limb.l1 - a * a));
  r.effector = limb.base + dir * dc;
  r.joint = limb.base + dir * a + perp * h;
  return r;
}

/// (1 - alpha) x + alpha x_prev; the first frame (no x_prev) passes through.
inline Eigen::VectorXd spline_smooth(const Eigen::VectorXd& x, const std::optional<Eigen::VectorXd>& x_prev, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("smoothing alpha must lie in [0, 1)");
  if (!x_prev) return x;
  if (x_prev->size() != x.size()) throw ConfigError("spline_smooth: shape mismatch");
  return x + alpha * (*x_prev - x);
}

/// Joint names "<limb>.base", "<limb>.joint", "<limb>.effector"; positions
/// stacked as 3 values per joint in the same order.
struct SkeletonFrame {
  FrameIndex timestamp = 0;
  std::vector<std::string> names;
  Eigen::VectorXd positions;

  [[nodiscard]] Vec3 joint(std::size_t i) const { return positions.segment<3>(static_cast<Eigen::Index>(3 * i)); }
  bool operator==(const SkeletonFrame& o) const {
    return timestamp == o.timestamp && names == o.names && positions == o.positions;
  }
};

using Rig = std::vector<LimbSpec>;

/// Two arms based at the shoulders, targets from body[0..3) (right) and body[3..6) (left).
inline Rig default_rig() {
  LimbSpec right{"right_arm", Vec3(0.18, 1.40, 0.0), 0.30, 0.25, Vec3(0.0, 0.0, -1.0), 0};
  LimbSpec left{"left_arm", Vec3(-0.18, 1.40, 0.0), 0.30, 0.25, Vec3(0.0, 0.0, -1.0), 3};
  return {right, left};
}

/// Unsmoothed IK for every limb.
inline SkeletonFrame solve_ik_frame(const PoseVector& pose, const Rig& rig, FrameIndex timestamp) {
  SkeletonFrame f;
  f.timestamp = timestamp;
  f.positions.resize(static_cast<Eigen::Index>(9 * rig.size()));
  for (std::size_t i = 0; i < rig.size(); ++i) {
    const LimbSpec& L = rig[i];
    L.check();
    const auto ti = static_cast<std::size_t>(L.target_index);
    const Vec3 target = L.base + Vec3(pose[ti], pose[ti + 1], pose[ti + 2]);
    const IkResult r = two_bone_ik(L, target);
    f.names.push_back(L.name + ".base");
    f.names.push_back(L.name + ".joint");
    f.names.push_back(L.name + ".effector");
    f.positions.segment<3>(static_cast<Eigen::Index>(9 * i)) = L.base;
    f.positions.segment<3>(static_cast<Eigen::Index>(9 * i + 3)) = r.joint;
    f.positions.segment<3>(static_cast<Eigen::Index>(9 * i + 6)) = r.effector;
  }
  return f;
}

/// IK for all limbs, then joint smoothing against `prev`.
inline SkeletonFrame solve_frame(const PoseVector& pose, const Rig& rig, const std::optional<SkeletonFrame>& prev, double alpha,
                                 FrameIndex timestamp) {
  SkeletonFrame f = solve_ik_frame(pose, rig, timestamp);
  std::optional<Eigen::VectorXd> p;
  if (prev) {
    if (prev->names != f.names) throw ConfigError("solve_frame: previous frame uses a different rig");
    p = prev->positions;
  }
  f.positions = spline_smooth(f.positions, p, alpha);
  return f;
}

/// Wire form: 0-based frame index, joints with float32 xyz.
inline nlohmann::ordered_json to_wire(const SkeletonFrame& f, const std::string& session_id) {
  nlohmann::ordered_json joints = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < f.names.size(); ++i) {
    const Vec3 p = f.joint(i);
    joints.push_back({{"name", f.names[i]},
                      {"xyz", {static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z())}}});
  }
  return {{"session", session_id}, {"index", f.timestamp - 1}, {"joints", joints}};
}

}  // namespace signloop
