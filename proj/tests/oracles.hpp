#pragma once

#include <cmath>
#include <random>

#include "mtrobust/certificate.hpp"

namespace mtr::test {

// Fixed-step RK4 of rho' = (H/2) rho^2 + alpha rho + f_max from rho(0) = 0, doubling the step
// count until two successive answers agree to 1e-12 relative.
inline double riccati_rk4(const AssumptionBounds& b, double t) {
  auto run = [&](long n) {
    const double h = t / n;
    double r = 0.0;
    auto f = [&](double x) { return 0.5 * b.H * x * x + b.alpha * x + b.f_max; };
    for (long i = 0; i < n; ++i) {
      const double k1 = f(r), k2 = f(r + 0.5 * h * k1), k3 = f(r + 0.5 * h * k2), k4 = f(r + h * k3);
      r += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return r;
  };
  long n = 2000;
  double prev = run(n);
  for (int it = 0; it < 12; ++it) {
    n *= 2;
    const double cur = run(n);
    if (std::abs(cur - prev) <= 1e-12 * std::abs(cur)) return cur;
    prev = cur;
  }
  return prev;
}

// Random bound set in the requested branch: 0 -> positive, 1 -> zero, 2 -> negative.
template <class Rng>
AssumptionBounds random_bounds(Rng& rng, int branch) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  AssumptionBounds b;
  b.alpha = 0.05 + 2.0 * U(rng);
  b.beta = 1.0;
  b.f_max = 0.1 + 2.0 * U(rng);
  b.f_min = b.f_max * (0.2 + 0.8 * U(rng));
  b.u_max_dag = b.f_max;
  b.u_min_dag = b.f_min;
  const double h0 = b.alpha * b.alpha / (2.0 * b.f_max);
  if (branch == 0) b.H = h0 * (0.01 + 0.98 * U(rng));
  if (branch == 1) b.H = h0;
  if (branch == 2) b.H = h0 * (1.02 + 4.0 * U(rng));
  return b;
}

}  // namespace mtr::test

#include <Eigen/QR>

#include "mtrobust/propagation.hpp"

namespace mtr::test {

// Minimum of sum ||u_k||^2 h over K piecewise-constant deviation controls steering the
// linearization along `ref` from xi_plus at tau2 to zero at tau2 + T. Subintervals must not
// straddle reference control switches.
inline double discrete_min_energy(const PiecewiseTrajectory& ref, double tau2, double T,
                                  const Vec6& xi_plus, int K = 200) {
  const double h = T / K;
  std::vector<Mat6> phi(K);
  std::vector<Mat63> G(K);
  IntegratorConfig cfg;
  cfg.steps_per_segment = 20;
  for (int k = 0; k < K; ++k) {
    const double ta = tau2 + k * h;
    const double tm = ta + 0.5 * h;
    const FlowResult f = flow_with_stm(ref.model, ref.state_at(ta), ref.control_at(tm), ta, ta + h, cfg);
    phi[k] = *f.stm;
    G[k] = *f.control_sensitivity;
  }
  Eigen::MatrixXd M(6, 3 * K);
  Mat6 tail = Mat6::Identity();  // Phi(T, t_{k+1})
  for (int k = K - 1; k >= 0; --k) {
    M.middleCols(3 * k, 3) = tail * G[k];
    tail = tail * phi[k];
  }
  const Vec6 b = -(tail * xi_plus);
  const Eigen::VectorXd u = M.completeOrthogonalDecomposition().solve(b);
  return h * u.squaredNorm();
}

}  // namespace mtr::test
