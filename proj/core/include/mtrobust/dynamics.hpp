#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "mtrobust/common.hpp"
#include "mtrobust/dual.hpp"

namespace mtr {

enum class OrbitKind { Circular, Eccentric, Linear };

// Target orbit. Linear is an auxiliary xdot = A x + B u model used for oracles.
struct OrbitModel {
  OrbitKind kind = OrbitKind::Circular;

  double R = 6871.0;    // km
  double n = 1.109e-3;  // 1/s

  double a = 0.0;  // km
  double e = 0.0;
  double mu = 398600.4418;  // km^3/s^2
  double nu_start = 0.0;
  double nu_end = 0.0;
  double nu0 = 0.0;

  Mat6 A_lin = Mat6::Zero();

  static OrbitModel circular(double R, double n);
  static OrbitModel eccentric(double a, double e, double mu, double nu_start, double nu_end,
                              double nu0);
  static OrbitModel linear(const Mat6& A);
  static OrbitModel double_integrator();

  // Gravitational parameter seen by the nonlinear terms (n^2 R^3 for the circular model).
  double mu_effective() const;
  void validate() const;
};

// Linear-part and correction coefficients at a given anomaly. For the circular model
// w = n, wd = 0, k = n^2, c2 = n^2/R, c3 = n^2/R^2.
template <class S>
struct OrbitCoeffs {
  S w, wd, k, c2, c3;
};

struct AnomalyKinematics {
  double r;
  double nu_dot;
  double nu_ddot;
};

template <class S>
S nu_rate(const OrbitModel& m, const S& nu) {
  using std::cos;
  const double p = std::sqrt(m.mu / (m.a * m.a * m.a)) / std::pow(1.0 - m.e * m.e, 1.5);
  const S q = 1.0 + m.e * cos(nu);
  return p * q * q;
}

template <class S>
OrbitCoeffs<S> orbit_coeffs(const OrbitModel& m, const S& nu) {
  using std::cos;
  using std::sin;
  if (m.kind == OrbitKind::Eccentric) {
    const double p = std::sqrt(m.mu / (m.a * m.a * m.a)) / std::pow(1.0 - m.e * m.e, 1.5);
    const S ce = 1.0 + m.e * cos(nu);
    const S r = (m.a * (1.0 - m.e * m.e)) / ce;
    const S r2 = r * r;
    const S mu_r4 = m.mu / (r2 * r2);
    const S w = p * ce * ce;
    // d(nu_dot)/dt = nu_dot * d(nu_dot)/d(nu)
    return {w, -2.0 * p * m.e * sin(nu) * ce * w, mu_r4 * r, mu_r4, mu_r4 / r};
  }
  const double n2 = m.n * m.n;
  return {S(m.n), S(0.0), S(n2), S(n2 / m.R), S(n2 / (m.R * m.R))};
}

// Quadratic plus cubic correction accelerations c2 * (3/2) g2(q) + c3 * g3(q).
template <class S>
Vec3T<S> correction_accel(const OrbitCoeffs<S>& c, const Vec3T<S>& q) {
  const S q1 = q[0], q2 = q[1], q3 = q[2];
  const S q11 = q1 * q1, q22 = q2 * q2, q33 = q3 * q3;
  Vec3T<S> p;
  p[0] = c.c2 * (-3.0 * q11 + 1.5 * (q22 + q33)) + c.c3 * (4.0 * q11 * q1 - 6.0 * q1 * (q22 + q33));
  p[1] = c.c2 * (3.0 * q1 * q2) + c.c3 * (-6.0 * q11 * q2 + 1.5 * (q22 * q2 + q2 * q33));
  p[2] = c.c2 * (3.0 * q1 * q3) + c.c3 * (-6.0 * q11 * q3 + 1.5 * (q22 * q3 + q33 * q3));
  return p;
}

// Vector field at anomaly nu (ignored unless eccentric). No validation.
template <class S>
Vec6T<S> field(const OrbitModel& m, const S& nu, const Vec6T<S>& x, const Vec3T<S>& u) {
  Vec6T<S> f;
  if (m.kind == OrbitKind::Linear) {
    f = m.A_lin.template cast<S>() * x;
    f.template tail<3>() += u;
    return f;
  }
  const OrbitCoeffs<S> c = orbit_coeffs(m, nu);
  const Vec3T<S> q = x.template head<3>();
  const Vec3T<S> p = correction_accel(c, q);
  const S w2 = c.w * c.w;
  f.template head<3>() = x.template tail<3>();
  f[3] = 2.0 * c.w * x[4] + (w2 + 2.0 * c.k) * x[0] + c.wd * x[1] + u[0] + p[0];
  f[4] = -2.0 * c.w * x[3] - c.wd * x[0] + (w2 - c.k) * x[1] + u[1] + p[1];
  f[5] = -c.k * x[2] + u[2] + p[2];
  return f;
}

// Lower-left block of the state Jacobian (position sensitivity of the accelerations).
template <class S>
Eigen::Matrix<S, 3, 3> accel_position_jacobian(const OrbitCoeffs<S>& c, const Vec3T<S>& q) {
  const S q1 = q[0], q2 = q[1], q3 = q[2];
  const S w2 = c.w * c.w;
  Eigen::Matrix<S, 3, 3> L;
  L(0, 0) = w2 + 2.0 * c.k + c.c2 * (-6.0 * q1) + c.c3 * (12.0 * q1 * q1 - 6.0 * q2 * q2 - 6.0 * q3 * q3);
  L(0, 1) = c.wd + c.c2 * (3.0 * q2) + c.c3 * (-12.0 * q1 * q2);
  L(0, 2) = c.c2 * (3.0 * q3) + c.c3 * (-12.0 * q1 * q3);
  L(1, 0) = -c.wd + c.c2 * (3.0 * q2) + c.c3 * (-12.0 * q1 * q2);
  L(1, 1) = w2 - c.k + c.c2 * (3.0 * q1) + c.c3 * (-6.0 * q1 * q1 + 4.5 * q2 * q2 + 1.5 * q3 * q3);
  L(1, 2) = c.c3 * (3.0 * q2 * q3);
  L(2, 0) = c.c2 * (3.0 * q3) + c.c3 * (-12.0 * q1 * q3);
  L(2, 1) = c.c3 * (3.0 * q2 * q3);
  L(2, 2) = -c.k + c.c2 * (3.0 * q1) + c.c3 * (-6.0 * q1 * q1 + 1.5 * q2 * q2 + 4.5 * q3 * q3);
  return L;
}

template <class S>
Eigen::Matrix<S, 6, 6> state_jacobian(const OrbitModel& m, const S& nu, const Vec6T<S>& x) {
  if (m.kind == OrbitKind::Linear) return m.A_lin.template cast<S>();
  const OrbitCoeffs<S> c = orbit_coeffs(m, nu);
  Eigen::Matrix<S, 6, 6> A = Eigen::Matrix<S, 6, 6>::Zero();
  A.template block<3, 3>(0, 3).setIdentity();
  A.template block<3, 3>(3, 0) = accel_position_jacobian(c, Vec3T<S>(x.template head<3>()));
  A(3, 4) = 2.0 * c.w;
  A(4, 3) = -2.0 * c.w;
  return A;
}

// A(x) * M, exploiting the [0 I; L W] structure.
template <class S, int C>
Eigen::Matrix<S, 6, C> apply_state_jacobian(const OrbitModel& m, const S& nu, const Vec6T<S>& x,
                                            const Eigen::Matrix<S, 6, C>& M) {
  if (m.kind == OrbitKind::Linear) return m.A_lin.template cast<S>() * M;
  const OrbitCoeffs<S> c = orbit_coeffs(m, nu);
  const Eigen::Matrix<S, 3, 3> L = accel_position_jacobian(c, Vec3T<S>(x.template head<3>()));
  Eigen::Matrix<S, 6, C> out;
  out.template topRows<3>() = M.template bottomRows<3>();
  out.template bottomRows<3>().noalias() = L * M.template topRows<3>();
  const S w2 = 2.0 * c.w;
  for (int j = 0; j < C; ++j) {
    out(3, j) += w2 * M(4, j);
    out(4, j) -= w2 * M(3, j);
  }
  return out;
}

// Fixed-step RK4 of nu_dot(nu) from (t0, nu0) to t. Step size keeps the anomaly
// increment per step below 4e-3 rad.
template <class S>
S propagate_anomaly(const OrbitModel& m, const S& t0, const S& nu0, const S& t) {
  const double span = value_of(t) - value_of(t0);
  if (!(span >= 0.0)) throw Error(ErrorKind::InvalidInput, "propagate_anomaly: t < t0");
  if (m.kind != OrbitKind::Eccentric) return nu0 + m.n * (t - t0);
  if (span == 0.0) return nu0 + 0.0 * (t - t0);
  const double rate_max = nu_rate(m, 0.0);
  const double steps_d = std::ceil(rate_max * span / 4e-3);
  if (steps_d > 1e8) throw Error(ErrorKind::Config, "propagate_anomaly: step count overflow");
  const long steps = std::max(1L, static_cast<long>(steps_d));
  const S h = (t - t0) / static_cast<double>(steps);
  S nu = nu0;
  for (long i = 0; i < steps; ++i) {
    const S k1 = nu_rate(m, nu);
    const S k2 = nu_rate(m, S(nu + 0.5 * h * k1));
    const S k3 = nu_rate(m, S(nu + 0.5 * h * k2));
    const S k4 = nu_rate(m, S(nu + h * k3));
    nu += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return nu;
}

// Anomaly at mission time t (epoch t = 0 at nu0). Zero for non-eccentric models.
template <class S>
S anomaly_at(const OrbitModel& m, const S& t) {
  if (m.kind != OrbitKind::Eccentric) return S(0.0);
  return propagate_anomaly(m, S(0.0), S(m.nu0), t);
}

struct HessianTensor {
  std::array<Mat6, 6> comp;  // comp[i](j,k) = d^2 f_i / dx_j dx_k
  static HessianTensor zero();
};

struct HessianNorms {
  double oper = 0.0;       // max_i ||H_i||_2
  double frob = 0.0;       // Frobenius norm of the stacked tensor
  double spec = 0.0;       // max_i spectral radius of H_i
  double rigorous = 0.0;   // sqrt(6) * oper, bounds the stacked bilinear map
};

enum class CurvatureConvention { Rigorous, PerComponent };

// Public time-domain API.
Vec6 eval_dynamics(const OrbitModel& m, double t, const Vec6& x, const Vec3& u);
Mat6 jacobian_state(const OrbitModel& m, double t, const Vec6& x, const Vec3& u);
Mat63 jacobian_control(const OrbitModel& m, double t, const Vec6& x);
HessianTensor hessian_state(const OrbitModel& m, double t, const Vec6& x);
HessianNorms hessian_norms(const HessianTensor& h);
AnomalyKinematics anomaly_kinematics(const OrbitModel& m, double nu);

// Same operations at an explicit anomaly.
Vec6 eval_at_anomaly(const OrbitModel& m, double nu, const Vec6& x, const Vec3& u);
HessianTensor hessian_at_anomaly(const OrbitModel& m, double nu, const Vec6& x);

// Upper bound of the curvature over the ball ||x - x_ref|| <= radius, using the affine
// dependence of the Hessian on position.
double tube_curvature_bound(const OrbitModel& m, double nu, const Vec6& x_ref, double radius,
                            CurvatureConvention conv = CurvatureConvention::Rigorous);

// Flight time between two anomalies on the target ellipse (Kepler's equation).
double time_between_anomalies(const OrbitModel& m, double nu_a, double nu_b);

struct CurvatureRow {
  double e;
  double nu;
  double box_max_oper;
};

struct CurvatureSummary {
  double e;
  double a;
  double max_oper;
  double min_oper;
  double nu_at_max;
  double nu_at_min;
};

struct CurvatureSweep {
  std::vector<CurvatureRow> rows;
  std::vector<CurvatureSummary> summary;
};

// Periapse radius held at r_p while e varies (a = r_p / (1 - e)).
CurvatureSweep curvature_sweep(const std::vector<double>& e_values,
                               const std::vector<double>& nu_grid, double box_km,
                               int box_points = 11, double r_p = 6871.0,
                               double mu = 398600.4418);

}  // namespace mtr
