#include "mtrobust/dynamics.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace mtr {

namespace {

void require_finite(const Vec6& x, const char* what) {
  if (!x.allFinite()) throw Error(ErrorKind::InvalidInput, std::string(what) + ": non-finite state");
}

void require_finite(const Vec3& u, const char* what) {
  if (!u.allFinite()) throw Error(ErrorKind::InvalidInput, std::string(what) + ": non-finite control");
}

double checked_anomaly(const OrbitModel& m, double t) {
  if (m.kind != OrbitKind::Eccentric) return 0.0;
  if (!std::isfinite(t)) throw Error(ErrorKind::InvalidInput, "non-finite time");
  const double nu = propagate_anomaly(m, 0.0, m.nu0, t);
  const double tol = 1e-12 * std::max(1.0, std::abs(m.nu_end));
  if (nu < m.nu_start - tol || nu > m.nu_end + tol) {
    throw Error(ErrorKind::Domain, "true anomaly " + std::to_string(nu) + " outside nu_range");
  }
  return nu;
}

double sym_operator_norm(const Mat6& h) {
  Eigen::JacobiSVD<Mat6> svd(h);
  return svd.singularValues()[0];
}

double spectral_radius(const Mat6& h) {
  Eigen::SelfAdjointEigenSolver<Mat6> es(h, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

OrbitModel OrbitModel::circular(double R, double n) {
  OrbitModel m;
  m.kind = OrbitKind::Circular;
  m.R = R;
  m.n = n;
  m.validate();
  return m;
}

OrbitModel OrbitModel::eccentric(double a, double e, double mu, double nu_start, double nu_end,
                                 double nu0) {
  OrbitModel m;
  m.kind = OrbitKind::Eccentric;
  m.a = a;
  m.e = e;
  m.mu = mu;
  m.nu_start = nu_start;
  m.nu_end = nu_end;
  m.nu0 = nu0;
  m.n = std::sqrt(mu / (a * a * a));
  m.R = a;
  m.validate();
  return m;
}

OrbitModel OrbitModel::linear(const Mat6& A) {
  OrbitModel m;
  m.kind = OrbitKind::Linear;
  m.A_lin = A;
  return m;
}

OrbitModel OrbitModel::double_integrator() {
  Mat6 A = Mat6::Zero();
  A.block<3, 3>(0, 3).setIdentity();
  return linear(A);
}

double OrbitModel::mu_effective() const {
  switch (kind) {
    case OrbitKind::Circular:
      return n * n * R * R * R;
    case OrbitKind::Eccentric:
      return mu;
    case OrbitKind::Linear:
      return 0.0;
  }
  return 0.0;
}

void OrbitModel::validate() const {
  switch (kind) {
    case OrbitKind::Circular:
      if (!(R > 0.0) || !(n > 0.0) || !std::isfinite(R) || !std::isfinite(n))
        throw Error(ErrorKind::Config, "circular orbit requires R > 0 and n > 0");
      break;
    case OrbitKind::Eccentric:
      if (!(e >= 0.0 && e < 1.0)) throw Error(ErrorKind::Config, "eccentricity must lie in [0, 1)");
      if (!(a * (1.0 - e) > 0.0)) throw Error(ErrorKind::Config, "periapse radius must be positive");
      if (!(mu > 0.0)) throw Error(ErrorKind::Config, "mu must be positive");
      if (!(nu_end >= nu_start)) throw Error(ErrorKind::Config, "nu_range must be nondecreasing");
      if (nu0 < nu_start || nu0 > nu_end) throw Error(ErrorKind::Config, "nu0 outside nu_range");
      break;
    case OrbitKind::Linear:
      if (!A_lin.allFinite()) throw Error(ErrorKind::Config, "linear model A must be finite");
      break;
  }
}

HessianTensor HessianTensor::zero() {
  HessianTensor h;
  for (auto& c : h.comp) c.setZero();
  return h;
}

Vec6 eval_at_anomaly(const OrbitModel& m, double nu, const Vec6& x, const Vec3& u) {
  return field<double>(m, nu, x, u);
}

Vec6 eval_dynamics(const OrbitModel& m, double t, const Vec6& x, const Vec3& u) {
  require_finite(x, "eval_dynamics");
  require_finite(u, "eval_dynamics");
  return field<double>(m, checked_anomaly(m, t), x, u);
}

Mat6 jacobian_state(const OrbitModel& m, double t, const Vec6& x, const Vec3& u) {
  require_finite(x, "jacobian_state");
  require_finite(u, "jacobian_state");
  return state_jacobian<double>(m, checked_anomaly(m, t), x);
}

Mat63 jacobian_control(const OrbitModel&, double, const Vec6&) {
  Mat63 B = Mat63::Zero();
  B.bottomRows<3>().setIdentity();
  return B;
}

HessianTensor hessian_at_anomaly(const OrbitModel& m, double nu, const Vec6& x) {
  HessianTensor h = HessianTensor::zero();
  if (m.kind == OrbitKind::Linear) return h;
  const OrbitCoeffs<double> c = orbit_coeffs(m, nu);
  const double q1 = x[0], q2 = x[1], q3 = x[2];
  Mat3 a1, a2, a3;
  a1 << -6.0 * c.c2 + 24.0 * c.c3 * q1, -12.0 * c.c3 * q2, -12.0 * c.c3 * q3,
      -12.0 * c.c3 * q2, 3.0 * c.c2 - 12.0 * c.c3 * q1, 0.0,
      -12.0 * c.c3 * q3, 0.0, 3.0 * c.c2 - 12.0 * c.c3 * q1;
  a2 << -12.0 * c.c3 * q2, 3.0 * c.c2 - 12.0 * c.c3 * q1, 0.0,
      3.0 * c.c2 - 12.0 * c.c3 * q1, 9.0 * c.c3 * q2, 3.0 * c.c3 * q3,
      0.0, 3.0 * c.c3 * q3, 3.0 * c.c3 * q2;
  a3 << -12.0 * c.c3 * q3, 0.0, 3.0 * c.c2 - 12.0 * c.c3 * q1,
      0.0, 3.0 * c.c3 * q3, 3.0 * c.c3 * q2,
      3.0 * c.c2 - 12.0 * c.c3 * q1, 3.0 * c.c3 * q2, 9.0 * c.c3 * q3;
  h.comp[3].topLeftCorner<3, 3>() = a1;
  h.comp[4].topLeftCorner<3, 3>() = a2;
  h.comp[5].topLeftCorner<3, 3>() = a3;
  return h;
}

HessianTensor hessian_state(const OrbitModel& m, double t, const Vec6& x) {
  require_finite(x, "hessian_state");
  return hessian_at_anomaly(m, checked_anomaly(m, t), x);
}

HessianNorms hessian_norms(const HessianTensor& h) {
  HessianNorms out;
  double frob2 = 0.0;
  for (const Mat6& c : h.comp) {
    out.oper = std::max(out.oper, sym_operator_norm(c));
    out.spec = std::max(out.spec, spectral_radius(c));
    frob2 += c.squaredNorm();
  }
  out.frob = std::sqrt(frob2);
  out.rigorous = std::sqrt(6.0) * out.oper;
  return out;
}

double tube_curvature_bound(const OrbitModel& m, double nu, const Vec6& x_ref, double radius,
                            CurvatureConvention conv) {
  if (m.kind == OrbitKind::Linear) return 0.0;
  const HessianTensor h0 = hessian_at_anomaly(m, nu, x_ref);
  std::array<double, 6> slope2{};
  for (int j = 0; j < 3; ++j) {
    Vec6 xj = x_ref;
    xj[j] += 1.0;
    const HessianTensor hj = hessian_at_anomaly(m, nu, xj);
    for (int i = 0; i < 6; ++i) {
      const double s = sym_operator_norm(hj.comp[i] - h0.comp[i]);
      slope2[i] += s * s;
    }
  }
  double worst = 0.0;
  for (int i = 0; i < 6; ++i) {
    worst = std::max(worst, sym_operator_norm(h0.comp[i]) + radius * std::sqrt(slope2[i]));
  }
  return conv == CurvatureConvention::Rigorous ? std::sqrt(6.0) * worst : worst;
}

AnomalyKinematics anomaly_kinematics(const OrbitModel& m, double nu) {
  const double e = m.e;
  const double ce = 1.0 + e * std::cos(nu);
  const double p = std::sqrt(m.mu / (m.a * m.a * m.a)) / std::pow(1.0 - e * e, 1.5);
  AnomalyKinematics k;
  k.r = m.a * (1.0 - e * e) / ce;
  k.nu_dot = p * ce * ce;
  k.nu_ddot = -2.0 * p * e * std::sin(nu) * ce * k.nu_dot;
  return k;
}

double time_between_anomalies(const OrbitModel& m, double nu_a, double nu_b) {
  const double e = m.e;
  const double n = std::sqrt(m.mu / (m.a * m.a * m.a));
  auto mean_anomaly = [e](double nu) {
    const double two_pi = 2.0 * M_PI;
    const double k = std::floor((nu + M_PI) / two_pi);
    const double nr = nu - two_pi * k;
    const double E = std::atan2(std::sqrt(1.0 - e * e) * std::sin(nr), e + std::cos(nr));
    return E - e * std::sin(E) + two_pi * k;
  };
  return (mean_anomaly(nu_b) - mean_anomaly(nu_a)) / n;
}

CurvatureSweep curvature_sweep(const std::vector<double>& e_values,
                               const std::vector<double>& nu_grid, double box_km, int box_points,
                               double r_p, double mu) {
  CurvatureSweep out;
  const int np = std::max(2, box_points);
  for (double e : e_values) {
    OrbitModel m;
    m.kind = OrbitKind::Eccentric;
    m.e = e;
    m.a = r_p / (1.0 - e);
    m.mu = mu;
    CurvatureSummary s{e, m.a, 0.0, std::numeric_limits<double>::infinity(), 0.0, 0.0};
    for (double nu : nu_grid) {
      double box_max = 0.0;
      for (int ix = 0; ix < np; ++ix) {
        for (int iy = 0; iy < np; ++iy) {
          Vec6 x = Vec6::Zero();
          x[0] = -box_km + 2.0 * box_km * ix / (np - 1);
          x[1] = -box_km + 2.0 * box_km * iy / (np - 1);
          box_max = std::max(box_max, hessian_norms(hessian_at_anomaly(m, nu, x)).oper);
        }
      }
      out.rows.push_back({e, nu, box_max});
      if (box_max > s.max_oper) {
        s.max_oper = box_max;
        s.nu_at_max = nu;
      }
      if (box_max < s.min_oper) {
        s.min_oper = box_max;
        s.nu_at_min = nu;
      }
    }
    out.summary.push_back(s);
  }
  return out;
}

}  // namespace mtr
