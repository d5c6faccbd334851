#include "mtrobust/certificate.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>
#include <boost/math/tools/roots.hpp>

namespace mtr {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double spectral_norm(const Mat6& A) {
  Eigen::JacobiSVD<Mat6> svd(A);
  return svd.singularValues()[0];
}

struct PositiveForm {
  double s, k, c, one_minus_c;
};

PositiveForm positive_form(const AssumptionBounds& b) {
  const double s = std::sqrt(discriminant(b));
  const double ap = b.alpha + s;
  return {s, 2.0 * b.f_max / ap, 2.0 * b.f_max * b.H / (ap * ap), 2.0 * s / ap};
}

}  // namespace

AssumptionBounds AssumptionBounds::make(double alpha, double beta, double H, double u_min,
                                        double u_max) {
  AssumptionBounds b;
  b.alpha = alpha;
  b.beta = beta;
  b.H = H;
  b.u_min_dag = u_min;
  b.u_max_dag = u_max;
  b.f_min = beta * u_min;
  b.f_max = beta * u_max;
  b.validate();
  return b;
}

void AssumptionBounds::validate() const {
  if (!(alpha >= 0.0 && beta >= 0.0 && H >= 0.0))
    throw Error(ErrorKind::InvalidInput, "bounds require alpha, beta, H >= 0");
  if (!(u_min_dag > 0.0 && u_min_dag <= u_max_dag))
    throw Error(ErrorKind::InvalidInput, "bounds require 0 < u_min <= u_max");
  if (!(f_min > 0.0 && f_min <= f_max))
    throw Error(ErrorKind::InvalidInput, "bounds require 0 < f_min <= f_max");
}

const char* branch_name(Branch b) {
  switch (b) {
    case Branch::PositiveDelta: return "positive";
    case Branch::ZeroDelta: return "zero";
    case Branch::NegativeDelta: return "negative";
  }
  return "?";
}

double discriminant(const AssumptionBounds& b) { return b.alpha * b.alpha - 2.0 * b.H * b.f_max; }

Branch branch_of(const AssumptionBounds& b) {
  const double d = discriminant(b);
  if (d > 0.0) return Branch::PositiveDelta;
  if (d < 0.0) return Branch::NegativeDelta;
  return Branch::ZeroDelta;
}

SafeRadius safe_radius(const AssumptionBounds& b, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw Error(ErrorKind::InvalidInput, "epsilon must lie in (0, 1)");
  SafeRadius r;
  if (b.alpha == 0.0 && b.H == 0.0) {
    r.delta_hat = r.delta = kInf;
    r.unbounded = true;
    return r;
  }
  // Positive root of (H/2) d^2 + eps*alpha*d - eps*f_min = 0 in rationalized form.
  const double ea = epsilon * b.alpha;
  r.delta_hat = 2.0 * epsilon * b.f_min / (std::sqrt(ea * ea + 2.0 * epsilon * b.H * b.f_min) + ea);
  r.delta = b.alpha > 0.0 ? std::min(r.delta_hat, b.f_min / b.alpha) : r.delta_hat;
  return r;
}

double envelope_blow_up_time(const AssumptionBounds& b) {
  if (b.H == 0.0) return kInf;
  switch (branch_of(b)) {
    case Branch::PositiveDelta: {
      const PositiveForm p = positive_form(b);
      return -std::log(p.c) / p.s;
    }
    case Branch::ZeroDelta:
      return 2.0 / b.alpha;
    case Branch::NegativeDelta: {
      const double s = std::sqrt(-discriminant(b));
      return (2.0 / s) * (0.5 * M_PI - std::atan(b.alpha / s));
    }
  }
  return kInf;
}

double riccati_envelope(const AssumptionBounds& b, double t) {
  if (!(t >= 0.0)) throw Error(ErrorKind::InvalidInput, "envelope requires t >= 0");
  if (t == 0.0) return 0.0;
  const double f = b.f_max;
  if (b.H == 0.0) return b.alpha > 0.0 ? (f / b.alpha) * std::expm1(b.alpha * t) : f * t;
  const double t_blow = envelope_blow_up_time(b);
  if (t >= t_blow) throw EnvelopeDivergedError(t_blow);
  switch (branch_of(b)) {
    case Branch::PositiveDelta: {
      const PositiveForm p = positive_form(b);
      const double em = std::expm1(p.s * t);
      return p.k * em / (p.one_minus_c - p.c * em);
    }
    case Branch::ZeroDelta:
      return f * t / (1.0 - 0.5 * b.alpha * t);
    case Branch::NegativeDelta: {
      const double s = std::sqrt(-discriminant(b));
      const double gamma = s / b.H;
      const double bb = b.alpha / s;
      const double tn = std::tan(0.5 * s * t);
      return gamma * tn * (1.0 + bb * bb) / (1.0 - bb * tn);
    }
  }
  return 0.0;
}

double dtau_closed_form(const AssumptionBounds& b, double delta) {
  if (!(delta > 0.0)) throw Error(ErrorKind::InvalidInput, "delta must be positive");
  if (std::isinf(delta)) return kInf;
  const double f = b.f_max;
  if (b.H == 0.0) return b.alpha > 0.0 ? std::log1p(b.alpha * delta / f) / b.alpha : delta / f;
  switch (branch_of(b)) {
    case Branch::PositiveDelta: {
      const PositiveForm p = positive_form(b);
      return std::log1p(delta * p.one_minus_c / (p.k + delta * p.c)) / p.s;
    }
    case Branch::ZeroDelta:
      return delta / (f + 0.5 * b.alpha * delta);
    case Branch::NegativeDelta: {
      const double s = std::sqrt(-discriminant(b));
      const double gamma = s / b.H;
      const double a = (delta + b.alpha / b.H) / gamma;
      const double bb = b.alpha / s;
      return (2.0 / s) * std::atan((delta / gamma) / (1.0 + a * bb));
    }
  }
  return 0.0;
}

double max_missed_thrust_duration(const AssumptionBounds& b, double delta) {
  const double t0 = dtau_closed_form(b, delta);
  if (!std::isfinite(t0)) return t0;
  const double t_blow = envelope_blow_up_time(b);
  auto g = [&](double t) { return riccati_envelope(b, t) - delta; };
  double lo = t0 * (1.0 - 1e-10);
  double hi = std::min(t0 * (1.0 + 1e-10), 0.5 * (t0 + t_blow));
  double glo = g(lo);
  double ghi = g(hi);
  for (int i = 0; i < 60 && glo > 0.0; ++i) {
    lo *= 0.5;
    glo = g(lo);
  }
  for (int i = 0; i < 60 && ghi < 0.0; ++i) {
    hi = std::isfinite(t_blow) ? 0.5 * (hi + t_blow) : 2.0 * hi;
    ghi = g(hi);
  }
  if (glo == 0.0) return lo;
  if (ghi == 0.0) return hi;
  if (glo > 0.0 || ghi < 0.0) return t0;
  boost::uintmax_t iters = 100;
  const auto r = boost::math::tools::toms748_solve(g, lo, hi, glo, ghi,
                                                   boost::math::tools::eps_tolerance<double>(52),
                                                   iters);
  const double t_mid = 0.5 * (r.first + r.second);
  return std::abs(g(t_mid)) <= std::abs(g(t0)) ? t_mid : t0;
}

double linear_error_envelope(const AssumptionBounds& b, double t) {
  if (!(t >= 0.0)) throw Error(ErrorKind::InvalidInput, "envelope requires t >= 0");
  const double x = b.alpha * t;
  if (std::abs(x) < 1e-12) return b.f_max * t * (1.0 + 0.5 * x);
  return (b.f_max / b.alpha) * std::expm1(x);
}

double saturation_ratio(double delta, double f_min, double alpha) {
  if (!(alpha > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return delta * alpha / f_min;
}

Certificate make_certificate(const AssumptionBounds& b, double epsilon) {
  Certificate c;
  c.epsilon = epsilon;
  const SafeRadius r = safe_radius(b, epsilon);
  c.delta_hat = r.delta_hat;
  c.delta = r.delta;
  c.unbounded = r.unbounded;
  c.discriminant = discriminant(b);
  c.branch = branch_of(b);
  c.dtau_max = r.unbounded ? kInf : max_missed_thrust_duration(b, r.delta);
  c.r_sat = saturation_ratio(r.delta, b.f_min, b.alpha);
  return c;
}

AssumptionBounds extract_bounds(const PiecewiseTrajectory& ref, const OutageWindow& w,
                                const BoundsOptions& opt) {
  if (!(w.tau2 >= w.tau1)) throw Error(ErrorKind::InvalidInput, "outage window reversed");
  if (w.tau1 < ref.t0 - 1e-9 || w.tau2 > ref.t_end() + 1e-9)
    throw Error(ErrorKind::Domain, "reference does not cover the outage window");
  const OrbitModel& m = ref.model;
  AssumptionBounds b;
  b.beta = 1.0;

  // Controls: every segment overlapping the open window (or the one containing tau1).
  const double seg = ref.step();
  const int j0 = ref.segment_at(w.tau1);
  int j1 = j0;
  while (j1 + 1 < ref.segments() && ref.t0 + seg * (j1 + 1) < w.tau2 - 1e-9 * seg) ++j1;
  b.u_min_dag = kInf;
  for (int j = j0; j <= j1; ++j) {
    const double un = ref.u[j].norm();
    if (!(un > 0.0)) throw AssumptionViolation("zero reference control on the outage window",
                                               ref.t0 + seg * j);
    b.u_min_dag = std::min(b.u_min_dag, un);
    b.u_max_dag = std::max(b.u_max_dag, un);
  }
  b.f_min = b.beta * b.u_min_dag;
  b.f_max = b.beta * b.u_max_dag;

  const int ns = std::max(1, opt.samples);
  std::vector<double> ts(ns + 1);
  std::vector<Vec6> xs(ns + 1);
  std::vector<double> nus(ns + 1);
  for (int i = 0; i <= ns; ++i) {
    ts[i] = w.tau1 + w.duration() * i / ns;
    xs[i] = ref.state_at(ts[i]);
    nus[i] = anomaly_at(m, ts[i]);
    b.alpha = std::max(b.alpha, spectral_norm(state_jacobian<double>(m, nus[i], xs[i])));
  }

  auto curvature = [&](double radius) {
    double h = 0.0;
    for (int i = 0; i <= ns; ++i) {
      h = std::max(h, tube_curvature_bound(m, nus[i], xs[i], radius, opt.convention));
    }
    return h;
  };

  double r0 = linear_error_envelope(b, w.duration());
  if (b.alpha > 0.0) r0 = std::min(r0, b.f_min / b.alpha);
  b.H = curvature(r0);
  b.tube_radius = r0;
  const SafeRadius d0 = safe_radius(b, opt.epsilon);
  b.certifiable = d0.unbounded || d0.delta <= r0 * (1.0 + 1e-12);
  if (!d0.unbounded && b.certifiable) {
    AssumptionBounds b1 = b;
    b1.H = curvature(d0.delta);
    b1.tube_radius = d0.delta;
    const SafeRadius d1 = safe_radius(b1, opt.epsilon);
    if (d1.delta <= d0.delta * (1.0 + 1e-12)) b = b1;
  }
  return b;
}

Realization simulate_coasting(const PiecewiseTrajectory& ref, const OutageWindow& w, int samples) {
  const int ns = std::max(1, samples);
  std::vector<double> times(ns + 1);
  for (int i = 0; i <= ns; ++i) times[i] = w.tau1 + w.duration() * i / ns;
  const StmSamples s = sample_with_stm(ref, ref.state_at(w.tau1), w.tau1, times, true);
  return {s.t, s.x};
}

CertificateTriad certificate_triad(const PiecewiseTrajectory& ref, const Realization& real,
                                   const OutageWindow& w, const AssumptionBounds& b,
                                   double epsilon) {
  if (real.t.empty() || real.t.size() != real.x.size())
    throw Error(ErrorKind::InvalidInput, "realization samples malformed");
  const double tol = 1e-9 * std::max(1.0, std::abs(w.tau2));
  if (std::abs(real.t.front() - w.tau1) > tol || std::abs(real.t.back() - w.tau2) > tol)
    throw Error(ErrorKind::InvalidInput, "realization not time-aligned with the outage window");
  CertificateTriad tr;
  const Certificate c = make_certificate(b, epsilon);
  tr.delta_theoretical = c.delta;
  tr.dtau_theoretical = c.dtau_max;
  tr.dtau_actual = w.duration();
  for (std::size_t i = 0; i < real.t.size(); ++i) {
    tr.delta_computed = std::max(tr.delta_computed, (real.x[i] - ref.state_at(real.t[i])).norm());
  }
  if (tr.delta_computed == 0.0 || tr.dtau_actual == 0.0) {
    tr.degenerate = true;
    tr.dtau_computed = 0.0;
  } else {
    tr.dtau_computed = max_missed_thrust_duration(b, tr.delta_computed);
  }
  tr.certified_beyond_outage = tr.dtau_theoretical > tr.dtau_actual;
  return tr;
}

SufficiencyCheck check_sufficiency(const PiecewiseTrajectory& ref, double tau1, double horizon,
                                   double epsilon, int samples) {
  SufficiencyCheck out;
  out.horizon = horizon;
  const int ns = std::max(1, samples);
  std::vector<double> times(ns + 1);
  for (int i = 0; i <= ns; ++i) times[i] = tau1 + horizon * i / ns;
  const StmSamples s = sample_with_stm(ref, ref.state_at(tau1), tau1, times, true);
  const Vec3 zero = Vec3::Zero();
  for (int i = 0; i <= ns; ++i) {
    const double t = times[i];
    const Vec6 xr = ref.state_at(t);
    const Vec3 ur = ref.control_at(std::min(t, tau1 + horizon * (1.0 - 1e-12)));
    const double nu = anomaly_at(ref.model, t);
    const Vec6 xi = s.x[i] - xr;
    const Mat6 A = state_jacobian<double>(ref.model, nu, xr);
    Vec6 bu = Vec6::Zero();
    bu.tail<3>() = -ur;
    const Vec6 lin = A * xi + bu;
    const Vec6 rem = field<double>(ref.model, nu, s.x[i], zero) -
                     field<double>(ref.model, nu, xr, ur) - lin;
    const double ratio = rem.norm() / lin.norm();
    out.worst_ratio = std::max(out.worst_ratio, ratio);
    if (rem.norm() > epsilon * lin.norm()) ++out.violations;
    ++out.samples;
  }
  return out;
}

}  // namespace mtr
