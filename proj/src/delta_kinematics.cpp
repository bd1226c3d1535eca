#include "dgp/delta_kinematics.hpp"

#include <cmath>
#include <cstdio>
#include <random>

namespace dgp {

namespace {

constexpr double kDeg2Rad = M_PI / 180.0;
constexpr double kRad2Deg = 180.0 / M_PI;

// Chain i is rotated by 120*i degrees about the arm-frame z-axis.
Mat3 chain_rotation(int i) {
  const double phi = 2.0 * M_PI / 3.0 * i;
  Mat3 r;
  r << std::cos(phi), -std::sin(phi), 0.0,
       std::sin(phi),  std::cos(phi), 0.0,
       0.0,            0.0,           1.0;
  return r;
}

// Center of the lower-arm sphere for chain i in the chain's own frame:
// the elbow at (r_s + L_u sin t, 0, -L_u cos t) shifted inward by r_d.
Vec3 sphere_center_local(const DeltaGeometry& g, double theta_rad) {
  const double a = g.base_radius - g.effector_radius;
  return {a + g.upper_arm * std::sin(theta_rad), 0.0, -g.upper_arm * std::cos(theta_rad)};
}

}  // namespace

void DeltaGeometry::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) raise(Errc::config_error, std::string("geometry: ") + what);
  };
  need(base_radius > 0 && effector_radius > 0 && upper_arm > 0 && lower_arm > 0,
       "all lengths must be strictly positive");
  need(lower_arm > std::abs(base_radius - effector_radius),
       "lower_arm must exceed |base_radius - effector_radius|");
  need(theta_min_deg < theta_max_deg, "theta_min must be below theta_max");
  need((sample_bounds.extent().array() > 0).all(), "sample_bounds must be a proper box");
}

double symmetric_depth(const DeltaGeometry& g, double theta_deg) {
  const double t = theta_deg * kDeg2Rad;
  const double rho = g.base_radius - g.effector_radius + g.upper_arm * std::sin(t);
  const double disc = g.lower_arm * g.lower_arm - rho * rho;
  if (disc < 0.0) raise(Errc::no_intersection, "symmetric configuration unreachable");
  return -g.upper_arm * std::cos(t) - std::sqrt(disc);
}

Vec3 forward_kinematics(const DeltaGeometry& g, const JointAngles& theta_deg) {
  Vec3 c[3];
  for (int i = 0; i < 3; ++i) {
    c[i] = chain_rotation(i) * sphere_center_local(g, theta_deg[i] * kDeg2Rad);
  }
  const double r = g.lower_arm;

  // Trilateration in an orthonormal basis anchored at c[0].
  Vec3 ex = c[1] - c[0];
  const double d = ex.norm();
  if (d < 1e-12) raise(Errc::no_intersection, "coincident sphere centers");
  ex /= d;
  const Vec3 rel = c[2] - c[0];
  const double ix = ex.dot(rel);
  Vec3 ey = rel - ix * ex;
  const double jy = ey.norm();
  if (jy < 1e-12) raise(Errc::no_intersection, "collinear sphere centers");
  ey /= jy;
  const Vec3 ez = ex.cross(ey);

  const double x = d / 2.0;  // equal radii
  const double y = (ix * ix + jy * jy - 2.0 * ix * x) / (2.0 * jy);
  const double h2 = r * r - x * x - y * y;
  if (h2 < 0.0) raise(Errc::no_intersection, "lower-arm spheres do not intersect");
  const double h = std::sqrt(h2);

  const Vec3 base = c[0] + x * ex + y * ey;
  const Vec3 p_plus = base + h * ez;
  const Vec3 p_minus = base - h * ez;
  return p_plus.z() < p_minus.z() ? p_plus : p_minus;
}

std::optional<JointAngles> inverse_kinematics(const DeltaGeometry& g, const Vec3& p) {
  if (!p.allFinite()) return std::nullopt;
  const double a = g.base_radius - g.effector_radius;
  const double lu = g.upper_arm, ll = g.lower_arm;
  const double lim_lo = g.theta_min_deg, lim_hi = g.theta_max_deg;
  constexpr double kLimitPadDeg = 1e-9;

  JointAngles theta;
  for (int i = 0; i < 3; ++i) {
    const Vec3 q = chain_rotation(i).transpose() * p;
    // |q - c(t)|^2 = L_l^2 reduces to A sin t + B cos t = K.
    const double A = q.x() - a;
    const double B = -q.z();
    const double K =
        (A * A + q.y() * q.y() + q.z() * q.z() + lu * lu - ll * ll) / (2.0 * lu);
    const double R = std::hypot(A, B);
    if (R < 1e-15 || std::abs(K) > R) return std::nullopt;

    const double phi = std::atan2(B, A);
    const double psi = std::asin(std::clamp(K / R, -1.0, 1.0));
    // Elbow-out branch, the one forward_kinematics traces: t = pi - psi - phi.
    double t = M_PI - psi - phi;
    if (t > M_PI) t -= 2.0 * M_PI;
    if (t < -M_PI) t += 2.0 * M_PI;

    // Newton polish; the closed form loses accuracy near branch tangency.
    for (int it = 0; it < 2; ++it) {
      const double gval = A * std::sin(t) + B * std::cos(t) - K;
      const double gder = A * std::cos(t) - B * std::sin(t);
      if (std::abs(gder) < 1e-9 * R) break;
      t -= gval / gder;
    }

    const double t_deg = t * kRad2Deg;
    if (t_deg < lim_lo - kLimitPadDeg || t_deg > lim_hi + kLimitPadDeg) return std::nullopt;
    theta[i] = std::clamp(t_deg, lim_lo, lim_hi);
  }
  return theta;
}

VolumeEstimate workspace_volume_monte_carlo(const DeltaGeometry& g, std::int64_t n_samples,
                                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(g.sample_bounds.min.x(), g.sample_bounds.max.x());
  std::uniform_real_distribution<double> uy(g.sample_bounds.min.y(), g.sample_bounds.max.y());
  std::uniform_real_distribution<double> uz(g.sample_bounds.min.z(), g.sample_bounds.max.z());

  std::int64_t hits = 0;
  for (std::int64_t k = 0; k < n_samples; ++k) {
    const Vec3 p(ux(rng), uy(rng), uz(rng));
    hits += is_reachable(g, p) ? 1 : 0;
  }
  const double vol_bounds_cm3 = g.sample_bounds.volume() * 1e6;
  const double ratio = static_cast<double>(hits) / static_cast<double>(n_samples);
  VolumeEstimate est;
  est.hits = hits;
  est.samples = n_samples;
  est.volume_cm3 = ratio * vol_bounds_cm3;
  est.std_error_cm3 =
      vol_bounds_cm3 * std::sqrt(ratio * (1.0 - ratio) / static_cast<double>(n_samples));
  return est;
}

InscribedCube largest_inscribed_cube(const DeltaGeometry& g, double resolution) {
  if (resolution <= 0.0 || resolution > 0.002 + 1e-12) {
    raise(Errc::config_error, "inscribed-cube grid resolution must be in (0, 2 mm]");
  }
  const Vec3 lo = g.sample_bounds.min;
  const Vec3 ext = g.sample_bounds.extent();
  const int nx = static_cast<int>(std::floor(ext.x() / resolution)) + 1;
  const int ny = static_cast<int>(std::floor(ext.y() / resolution)) + 1;
  const int nz = static_cast<int>(std::floor(ext.z() / resolution)) + 1;
  const auto idx = [&](int i, int j, int k) {
    return (static_cast<std::size_t>(k) * ny + j) * nx + i;
  };

  // dp[i,j,k] = side (in nodes) of the largest fully-reachable node cube
  // with max corner at (i,j,k).
  std::vector<std::int32_t> dp(static_cast<std::size_t>(nx) * ny * nz, 0);
  std::int32_t best = 0;
  int bi = 0, bj = 0, bk = 0;
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const Vec3 p = lo + Vec3(i * resolution, j * resolution, k * resolution);
        if (!is_reachable(g, p)) continue;
        std::int32_t v = 1;
        if (i > 0 && j > 0 && k > 0) {
          std::int32_t m = dp[idx(i - 1, j, k)];
          m = std::min(m, dp[idx(i, j - 1, k)]);
          m = std::min(m, dp[idx(i, j, k - 1)]);
          m = std::min(m, dp[idx(i - 1, j - 1, k)]);
          m = std::min(m, dp[idx(i - 1, j, k - 1)]);
          m = std::min(m, dp[idx(i, j - 1, k - 1)]);
          m = std::min(m, dp[idx(i - 1, j - 1, k - 1)]);
          v = 1 + m;
        }
        dp[idx(i, j, k)] = v;
        if (v > best) {
          best = v;
          bi = i;
          bj = j;
          bk = k;
        }
      }
    }
  }
  if (best == 0) raise(Errc::empty_workspace, "no reachable grid node inside sample_bounds");

  InscribedCube cube;
  cube.side = (best - 1) * resolution;
  const Vec3 max_corner = lo + Vec3(bi * resolution, bj * resolution, bk * resolution);
  cube.center = max_corner - 0.5 * cube.side * Vec3::Ones();
  return cube;
}

std::vector<LabeledPoint> sample_workspace_dataset(const DeltaGeometry& g, std::int64_t n,
                                                   std::uint64_t seed,
                                                   double* positive_fraction) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(g.sample_bounds.min.x(), g.sample_bounds.max.x());
  std::uniform_real_distribution<double> uy(g.sample_bounds.min.y(), g.sample_bounds.max.y());
  std::uniform_real_distribution<double> uz(g.sample_bounds.min.z(), g.sample_bounds.max.z());

  std::vector<LabeledPoint> out;
  out.reserve(static_cast<std::size_t>(n));
  std::int64_t positives = 0;
  for (std::int64_t k = 0; k < n; ++k) {
    const Vec3 p(ux(rng), uy(rng), uz(rng));
    const int label = is_reachable(g, p) ? 1 : 0;
    positives += label;
    out.push_back({p, label});
  }
  if (positive_fraction != nullptr) {
    *positive_fraction = static_cast<double>(positives) / static_cast<double>(n);
  }
  return out;
}

}  // namespace dgp
