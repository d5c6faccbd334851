#pragma once

#include <cmath>
#include <random>

#include "mtrobust/dynamics.hpp"

namespace mtr::test {

inline constexpr double kMu = 398600.4418;

inline OrbitModel mission_circular() { return OrbitModel::circular(6871.0, 1.109e-3); }

inline OrbitModel mission_eccentric(double nu_lo_deg = 60.0, double nu_hi_deg = 120.0) {
  const double d2r = M_PI / 180.0;
  return OrbitModel::eccentric(22903.33, 0.7, kMu, nu_lo_deg * d2r, nu_hi_deg * d2r,
                               nu_lo_deg * d2r);
}

inline Vec6 random_state(std::mt19937_64& rng, double box_km = 5.0, double box_vel = 5e-3) {
  std::uniform_real_distribution<double> p(-box_km, box_km), v(-box_vel, box_vel);
  Vec6 x;
  for (int i = 0; i < 3; ++i) x[i] = p(rng);
  for (int i = 3; i < 6; ++i) x[i] = v(rng);
  return x;
}

inline Vec3 random_control(std::mt19937_64& rng, double bound = 1e-6) {
  std::uniform_real_distribution<double> d(-bound, bound);
  return Vec3(d(rng), d(rng), d(rng));
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

template <class M>
double rel_err(const M& a, const M& b) {
  const double scale = std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
  if (scale == 0.0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace mtr::test
