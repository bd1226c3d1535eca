#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dgp {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat36 = Eigen::Matrix<double, 3, 6>;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kGravity = 9.81;  // m/s^2

enum class Errc {
  shape_mismatch,
  no_cached_forward,
  io_error,
  version_mismatch,
  checksum_mismatch,
  diverged_loss,
  no_intersection,
  empty_workspace,
  singular_system,
  out_of_domain,
  no_path,
  model_missing,
  non_finite_cost,
  config_error,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) { throw Error(code, what); }

// Cubic hinge S(x) = max(x^3, 0); C^2 at the origin, S'(x) = 3x^2 for x > 0.
inline double smooth_hinge(double x) { return x > 0.0 ? x * x * x : 0.0; }
inline double smooth_hinge_grad(double x) { return x > 0.0 ? 3.0 * x * x : 0.0; }

struct Aabb {
  Vec3 min{Vec3::Zero()};
  Vec3 max{Vec3::Zero()};

  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  Vec3 center() const { return 0.5 * (min + max); }
  Vec3 extent() const { return max - min; }
  double volume() const { return extent().prod(); }
  Aabb inflated(double r) const { return {min.array() - r, max.array() + r}; }
  // Closest point of the box to p (p itself when inside).
  Vec3 clamp(const Vec3& p) const { return p.cwiseMax(min).cwiseMin(max); }
};

// FNV-1a, used to stamp output files with a config fingerprint.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* b = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string format_g17(double v);

}  // namespace dgp
