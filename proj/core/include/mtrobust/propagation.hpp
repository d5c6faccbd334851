#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "mtrobust/common.hpp"
#include "mtrobust/dynamics.hpp"

namespace mtr {

struct IntegratorConfig {
  int steps_per_segment = 100;  // classical RK4, uniform steps
  bool record_samples = false;
};

struct FlowResult {
  Vec6 x_end;
  std::optional<Mat6> stm;
  std::optional<Mat63> control_sensitivity;  // d x_end / d u_const
  std::vector<std::pair<double, Vec6>> samples;
};

namespace detail {

template <class S>
void check_finite_step(const Vec6T<S>& x, long step) {
  for (int i = 0; i < 6; ++i) {
    if (!std::isfinite(value_of(x[i]))) throw DivergenceError("non-finite state in flow", step);
  }
}

}  // namespace detail

// RK4 over [t0, t1] with `steps` uniform steps; anomaly integrated alongside the state for
// the eccentric model, starting from nu_start.
template <class S>
Vec6T<S> rk4_flow_from(const OrbitModel& m, const Vec6T<S>& x0, const Vec3T<S>& u,
                       const S& nu_start, const S& t0, const S& t1, int steps) {
  const bool ecc = m.kind == OrbitKind::Eccentric;
  const S h = (t1 - t0) / static_cast<double>(steps);
  Vec6T<S> x = x0;
  S nu = nu_start;
  for (int i = 0; i < steps; ++i) {
    const Vec6T<S> k1 = field(m, nu, x, u);
    S n1(0.0), n2(0.0), n3(0.0), n4(0.0);
    if (ecc) n1 = nu_rate(m, nu);
    const S nu2 = ecc ? S(nu + 0.5 * h * n1) : nu;
    const Vec6T<S> k2 = field(m, nu2, Vec6T<S>(x + (0.5 * h) * k1), u);
    if (ecc) n2 = nu_rate(m, nu2);
    const S nu3 = ecc ? S(nu + 0.5 * h * n2) : nu;
    const Vec6T<S> k3 = field(m, nu3, Vec6T<S>(x + (0.5 * h) * k2), u);
    if (ecc) n3 = nu_rate(m, nu3);
    const S nu4 = ecc ? S(nu + h * n3) : nu;
    const Vec6T<S> k4 = field(m, nu4, Vec6T<S>(x + h * k3), u);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (ecc) {
      n4 = nu_rate(m, nu4);
      nu += (h / 6.0) * (n1 + 2.0 * n2 + 2.0 * n3 + n4);
    }
    detail::check_finite_step(x, i);
  }
  return x;
}

template <class S>
Vec6T<S> rk4_flow(const OrbitModel& m, const Vec6T<S>& x0, const Vec3T<S>& u, const S& t0,
                  const S& t1, int steps) {
  return rk4_flow_from(m, x0, u, anomaly_at(m, t0), t0, t1, steps);
}

// RK4 of the state together with a 6xC sensitivity block M, dM/dt = A M (+ B on the three
// columns starting at forcing_col when forcing_col >= 0). The result is the exact
// derivative of the discrete RK4 map.
template <class S, int C>
Vec6T<S> rk4_flow_sens(const OrbitModel& m, const Vec6T<S>& x0, const Vec3T<S>& u,
                       const S& nu_start, const S& t0, const S& t1, int steps,
                       Eigen::Matrix<S, 6, C>& M, int forcing_col) {
  using MatC = Eigen::Matrix<S, 6, C>;
  const bool ecc = m.kind == OrbitKind::Eccentric;
  const S h = (t1 - t0) / static_cast<double>(steps);
  auto rhs = [&](const S& nu, const Vec6T<S>& x, const MatC& P, Vec6T<S>& fx, MatC& fP) {
    fx = field(m, nu, x, u);
    fP = apply_state_jacobian<S, C>(m, nu, x, P);
    if (forcing_col >= 0) {
      for (int j = 0; j < 3; ++j) fP(3 + j, forcing_col + j) += 1.0;
    }
  };
  Vec6T<S> x = x0;
  S nu = nu_start;
  Vec6T<S> k1, k2, k3, k4;
  MatC P1, P2, P3, P4;
  for (int i = 0; i < steps; ++i) {
    S n1(0.0), n2(0.0), n3(0.0), n4(0.0);
    if (ecc) n1 = nu_rate(m, nu);
    rhs(nu, x, M, k1, P1);
    const S nu2 = ecc ? S(nu + 0.5 * h * n1) : nu;
    if (ecc) n2 = nu_rate(m, nu2);
    rhs(nu2, Vec6T<S>(x + (0.5 * h) * k1), MatC(M + (0.5 * h) * P1), k2, P2);
    const S nu3 = ecc ? S(nu + 0.5 * h * n2) : nu;
    if (ecc) n3 = nu_rate(m, nu3);
    rhs(nu3, Vec6T<S>(x + (0.5 * h) * k2), MatC(M + (0.5 * h) * P2), k3, P3);
    const S nu4 = ecc ? S(nu + h * n3) : nu;
    rhs(nu4, Vec6T<S>(x + h * k3), MatC(M + h * P3), k4, P4);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    M += (h / 6.0) * (P1 + 2.0 * P2 + 2.0 * P3 + P4);
    if (ecc) {
      n4 = nu_rate(m, nu4);
      nu += (h / 6.0) * (n1 + 2.0 * n2 + 2.0 * n3 + n4);
    }
    detail::check_finite_step(x, i);
  }
  return x;
}

FlowResult flow(const OrbitModel& m, const Vec6& x0, const Vec3& u, double t0, double t1,
                const IntegratorConfig& cfg);

// Also fills control_sensitivity.
FlowResult flow_with_stm(const OrbitModel& m, const Vec6& x0, const Vec3& u, double t0,
                         double t1, const IntegratorConfig& cfg);

struct SampledTrajectory {
  std::vector<double> t;
  std::vector<Vec6> x;
  std::vector<int> boundary_index;  // index into t/x of each segment boundary
};

// Chains flow over piecewise-constant (duration, control) pieces. With cfg.record_samples
// every RK4 step is emitted, otherwise only boundaries.
SampledTrajectory propagate_trajectory(const OrbitModel& m, const Vec6& x0,
                                       const std::vector<std::pair<double, Vec3>>& schedule,
                                       const IntegratorConfig& cfg, double t0 = 0.0);

// Piecewise-constant-control trajectory on a uniform grid, evaluated between nodes by a
// partial RK4 flow from the preceding node.
struct PiecewiseTrajectory {
  OrbitModel model;
  double t0 = 0.0;
  double duration = 0.0;
  std::vector<Vec6> x;  // N + 1 node states
  std::vector<Vec3> u;  // N controls
  int steps_per_segment = 100;

  int segments() const { return static_cast<int>(u.size()); }
  double step() const { return duration / segments(); }
  double t_end() const { return t0 + duration; }
  int segment_at(double t) const;
  Vec6 state_at(double t) const;
  Vec3 control_at(double t) const;
};

// States and Phi(t_i, t_a) at increasing times t_i >= t_a, integrating continuously from
// the reference state at t_a under the reference controls (or zero controls when coast).
struct StmSamples {
  std::vector<double> t;
  std::vector<Vec6> x;
  std::vector<Mat6> phi;
};

StmSamples sample_with_stm(const PiecewiseTrajectory& ref, const Vec6& x_a, double t_a,
                           const std::vector<double>& times, bool coast = false);

}  // namespace mtr
