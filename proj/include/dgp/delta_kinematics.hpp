#pragma once

#include "dgp/common.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace dgp {

/// Physical parameters of a 3-DoF delta parallel arm. Lengths in meters,
/// joint angles in degrees (0 = upper arm hanging straight down).
/// The same struct feeds the analytic kinematics, dataset generation and
/// workspace measurement, so one geometry is the single source of truth.
struct DeltaGeometry {
  double base_radius = 0.06;      // r_s, shoulder pivot circumradius
  double effector_radius = 0.025; // r_d, effector platform circumradius
  double upper_arm = 0.09;        // L_u
  double lower_arm = 0.15;        // L_l
  double theta_min_deg = 0.0;
  double theta_max_deg = 90.0;
  // Axis-aligned sampling box in the arm frame; must strictly contain the
  // reachable set (its faces are all unreachable for the defaults).
  Aabb sample_bounds{{-0.17, -0.17, -0.27}, {0.17, 0.17, -0.03}};

  void validate() const;  // throws Errc::config_error on violated invariants
};

using JointAngles = Vec3;  // degrees

struct VolumeEstimate {
  double volume_cm3 = 0.0;
  double std_error_cm3 = 0.0;
  std::int64_t hits = 0;
  std::int64_t samples = 0;
};

struct InscribedCube {
  Vec3 center{Vec3::Zero()};
  double side = 0.0;  // meters
  double volume_cm3() const { return side * side * side * 1e6; }
};

struct LabeledPoint {
  Vec3 p;
  int label;  // 1 = reachable
};

/// End-effector position in the arm frame for joint angles within limits.
/// Throws Errc::no_intersection when the lower-arm spheres do not meet
/// (a geometry problem, not an angle problem, for in-limit angles of a
/// sane geometry).
Vec3 forward_kinematics(const DeltaGeometry& g, const JointAngles& theta_deg);

/// Per-chain closed-form inverse kinematics, elbow-out branch. Empty result
/// means the point is outside the workspace (no real solution or a joint
/// limit violation) — this is the definitive membership test.
std::optional<JointAngles> inverse_kinematics(const DeltaGeometry& g, const Vec3& p);

inline bool is_reachable(const DeltaGeometry& g, const Vec3& p) {
  return inverse_kinematics(g, p).has_value();
}

/// Closed-form z of the symmetric configuration theta = (a, a, a).
double symmetric_depth(const DeltaGeometry& g, double theta_deg);

/// Hit-ratio Monte-Carlo estimate of the reachable volume inside
/// sample_bounds, with the binomial standard error. Deterministic per seed.
VolumeEstimate workspace_volume_monte_carlo(const DeltaGeometry& g, std::int64_t n_samples,
                                            std::uint64_t seed);

/// Largest axis-aligned cube whose grid-sampled interior is fully reachable,
/// on a grid of the given spacing (<= 2 mm). Throws Errc::empty_workspace
/// when no grid node is reachable.
InscribedCube largest_inscribed_cube(const DeltaGeometry& g, double resolution);

/// Uniform samples over sample_bounds labeled by the IK oracle.
/// positive_fraction (optional) reports the class balance.
std::vector<LabeledPoint> sample_workspace_dataset(const DeltaGeometry& g, std::int64_t n,
                                                   std::uint64_t seed,
                                                   double* positive_fraction = nullptr);

}  // namespace dgp
