#include <gtest/gtest.h>

#include <cstring>

#include <Eigen/SVD>

#include "mtrobust/certificate.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace mtr {
namespace {

AssumptionBounds bounds(double alpha, double H, double f_min, double f_max) {
  return AssumptionBounds::make(alpha, 1.0, H, f_min, f_max);
}

double bisect_safe_radius(const AssumptionBounds& b, double eps) {
  auto q = [&](double d) { return 0.5 * b.H * d * d + eps * b.alpha * d - eps * b.f_min; };
  double lo = 0.0, hi = 1.0;
  while (q(hi) < 0.0) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (q(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

TEST(Certificate, SafeRadiusExamples) {
  const SafeRadius a = safe_radius(bounds(0.0, 2.0, 1.0, 1.0), 0.5);
  EXPECT_NEAR(a.delta_hat, std::sqrt(0.5), 1e-15);
  EXPECT_EQ(a.delta, a.delta_hat);

  const AssumptionBounds b = bounds(1.0, 1.0, 1.0, 1.0);
  const SafeRadius r = safe_radius(b, 0.05);
  EXPECT_NEAR(r.delta_hat, std::sqrt(0.1025) - 0.05, 1e-15);
  EXPECT_NEAR(r.delta_hat, bisect_safe_radius(b, 0.05), 1e-14);
  EXPECT_EQ(r.delta, r.delta_hat);
  const double ratio = 0.5 * b.H * r.delta * r.delta / (b.f_min - b.alpha * r.delta);
  EXPECT_NEAR(ratio, 0.05, 1e-10);
}

TEST(Certificate, SafeRadiusLimits) {
  const SafeRadius u = safe_radius(bounds(0.0, 0.0, 1.0, 1.0), 0.1);
  EXPECT_TRUE(u.unbounded);
  EXPECT_TRUE(std::isinf(u.delta));
  // H -> 0 recovers f_min / alpha without cancellation.
  const SafeRadius s = safe_radius(bounds(2.0, 1e-30, 3.0, 3.0), 0.05);
  EXPECT_NEAR(s.delta_hat, 3.0 / 2.0, 1e-15);
  const SafeRadius s2 = safe_radius(bounds(2.0, 1e-12, 3.0, 3.0), 0.05);
  EXPECT_NEAR(s2.delta_hat, 1.5 - 1e-12 * 1.5 * 1.5 / (2 * 0.05 * 2.0), 1e-15);
  EXPECT_THROW(safe_radius(bounds(1.0, 1.0, 1.0, 1.0), 1.0), Error);
}

TEST(Certificate, QuadraticResidualAndSaturation) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 300; ++i) {
    const AssumptionBounds b = test::random_bounds(rng, i % 3);
    const double eps = test::uniform(rng, 0.001, 0.9);
    const SafeRadius r = safe_radius(b, eps);
    const double res = 0.5 * b.H * r.delta_hat * r.delta_hat + eps * b.alpha * r.delta_hat - eps * b.f_min;
    EXPECT_LE(std::abs(res) / (eps * b.f_min), 1e-10);
    EXPECT_LE(r.delta, b.f_min / b.alpha);
    const double rs = saturation_ratio(r.delta, b.f_min, b.alpha);
    EXPECT_GT(rs, 0.0);
    EXPECT_LE(rs, 1.0);
    const SafeRadius r2 = safe_radius(b, std::min(0.99, eps * 1.3));
    EXPECT_GE(r2.delta_hat, r.delta_hat);
    EXPECT_GE(max_missed_thrust_duration(b, r2.delta), max_missed_thrust_duration(b, r.delta));
  }
  EXPECT_TRUE(std::isnan(saturation_ratio(1.0, 1.0, 0.0)));
  EXPECT_DOUBLE_EQ(saturation_ratio(0.5, 1.0, 2.0), 1.0);
}

TEST(Certificate, EnvelopeZeroDiscriminantExample) {
  const AssumptionBounds b = bounds(2.0, 1.0, 2.0, 2.0);
  EXPECT_EQ(branch_of(b), Branch::ZeroDelta);
  EXPECT_EQ(riccati_envelope(b, 0.0), 0.0);
  // 4t / (2 (1 - t)) at t = 0.5.
  EXPECT_NEAR(riccati_envelope(b, 0.5), 2.0, 1e-15);
  EXPECT_NEAR(test::riccati_rk4(b, 0.5), 2.0, 1e-10);
  // delta / ((alpha/2) delta + alpha^2 / (2H)) with delta = 1.
  EXPECT_NEAR(max_missed_thrust_duration(b, 1.0), 1.0 / 3.0, 1e-15);
}

TEST(Certificate, EnvelopeMatchesOdeOnAllBranches) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 30; ++i) {
    const AssumptionBounds b = test::random_bounds(rng, i % 3);
    const double tb = envelope_blow_up_time(b);
    ASSERT_TRUE(std::isfinite(tb));
    for (double frac : {0.01, 0.2, 0.5, 0.8, 0.95}) {
      const double t = frac * tb;
      const double oracle = test::riccati_rk4(b, t);
      EXPECT_LE(std::abs(riccati_envelope(b, t) - oracle) / oracle, 1e-8)
          << branch_name(branch_of(b)) << " t/tb=" << frac;
    }
    try {
      riccati_envelope(b, tb);
      FAIL();
    } catch (const EnvelopeDivergedError& e) {
      EXPECT_EQ(e.blow_up_time(), tb);
    }
  }
}

TEST(Certificate, EnvelopeStrictlyIncreasing) {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 30; ++i) {
    const AssumptionBounds b = test::random_bounds(rng, i % 3);
    const double tb = envelope_blow_up_time(b);
    double prev = 0.0;
    for (int k = 1; k < 100; ++k) {
      const double v = riccati_envelope(b, tb * k / 100.0);
      EXPECT_GT(v, prev);
      prev = v;
    }
  }
}

TEST(Certificate, InversionConsistencyAndMonotonicity) {
  std::mt19937_64 rng(14);
  for (int branch = 0; branch < 3; ++branch) {
    for (int i = 0; i < 100; ++i) {
      const AssumptionBounds b = test::random_bounds(rng, branch);
      std::vector<double> deltas;
      for (int k = 0; k < 5; ++k) deltas.push_back(std::exp(test::uniform(rng, std::log(1e-4), std::log(20.0))));
      std::sort(deltas.begin(), deltas.end());
      double prev = 0.0;
      for (double d : deltas) {
        const double t = max_missed_thrust_duration(b, d);
        EXPECT_GT(t, prev);
        prev = t;
        EXPECT_LE(std::abs(riccati_envelope(b, t) - d) / d, 1e-8);
        EXPECT_LE(std::abs(dtau_closed_form(b, d) - t) / t, 1e-8);
      }
    }
  }
}

TEST(Certificate, SmallDeltaLeadingOrder) {
  const AssumptionBounds b = bounds(0.7, 0.3, 0.5, 1.5);
  for (double d : {1e-6, 1e-8, 1e-10}) {
    EXPECT_NEAR(max_missed_thrust_duration(b, d) * b.f_max / d, 1.0, 1e-5);
  }
  EXPECT_THROW(max_missed_thrust_duration(b, 0.0), Error);
}

TEST(Certificate, BranchContinuity) {
  std::mt19937_64 rng(15);
  for (int i = 0; i < 50; ++i) {
    AssumptionBounds b = test::random_bounds(rng, 1);
    const double a2 = b.alpha * b.alpha;
    AssumptionBounds lo = b, hi = b;
    // Delta = alpha^2 - 2 H f_max shifted by -/+ 1e-9 alpha^2.
    lo.H = (a2 + 1e-9 * a2) / (2 * b.f_max);
    hi.H = (a2 - 1e-9 * a2) / (2 * b.f_max);
    ASSERT_EQ(branch_of(lo), Branch::NegativeDelta);
    ASSERT_EQ(branch_of(hi), Branch::PositiveDelta);
    const double d = 0.3 * b.f_min / b.alpha;
    const double tl = max_missed_thrust_duration(lo, d), th = max_missed_thrust_duration(hi, d);
    EXPECT_LE(std::abs(tl - th) / th, 1e-4);
    b.H = a2 / (2 * b.f_max);
    EXPECT_LE(std::abs(max_missed_thrust_duration(b, d) - th) / th, 1e-4);
  }
}

TEST(Certificate, LinearEnvelope) {
  const AssumptionBounds b0 = bounds(0.0, 0.0, 1.0, 2.0);
  EXPECT_EQ(linear_error_envelope(b0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(linear_error_envelope(b0, 3.0), 6.0);
  const AssumptionBounds b1 = bounds(1e-14, 0.0, 1.0, 2.0);
  EXPECT_NEAR(linear_error_envelope(b1, 3.0), 6.0, 1e-12);
  const AssumptionBounds b2 = bounds(0.5, 0.0, 1.0, 2.0);
  EXPECT_NEAR(linear_error_envelope(b2, 2.0), 4.0 * std::expm1(1.0), 1e-14);
}

TEST(Certificate, LinearEnvelopeDominatesLtv) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 100; ++trial) {
    Mat6 A0, A1;
    for (int i = 0; i < 36; ++i) {
      A0.data()[i] = test::uniform(rng, -1, 1);
      A1.data()[i] = test::uniform(rng, -1, 1);
    }
    const double alpha = test::uniform(rng, 0.0, 1.5);
    const double n0 = A0.jacobiSvd().singularValues()[0], n1 = A1.jacobiSvd().singularValues()[0];
    A0 *= 0.6 * alpha / n0;
    A1 *= 0.4 * alpha / n1;
    const double w = test::uniform(rng, 0.1, 5.0);
    const double f = test::uniform(rng, 0.1, 2.0);
    Vec6 dir = test::random_state(rng, 1.0, 1.0).normalized();
    auto rhs = [&](double t, const Vec6& e) {
      const Mat6 A = A0 + std::sin(w * t) * A1;
      Vec6 v = dir * std::cos(0.7 * t);
      v[0] += 0.5 * std::sin(3 * t);
      if (v.norm() > 1.0) v.normalize();
      return Vec6(A * e + f * v);
    };
    AssumptionBounds b;
    b.alpha = alpha;
    b.f_max = f;
    Vec6 e = Vec6::Zero();
    const double T = 3.0;
    const int n = 3000;
    const double h = T / n;
    for (int i = 0; i < n; ++i) {
      const double t = i * h;
      const Vec6 k1 = rhs(t, e), k2 = rhs(t + h / 2, e + h / 2 * k1), k3 = rhs(t + h / 2, e + h / 2 * k2),
                 k4 = rhs(t + h, e + h * k3);
      e += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
      EXPECT_LE(e.norm(), linear_error_envelope(b, t + h) * (1 + 1e-10));
    }
  }
}

PiecewiseTrajectory thrusting_reference(const OrbitModel& m, int N, double T, const Vec3& u) {
  PiecewiseTrajectory ref;
  ref.model = m;
  ref.duration = T;
  ref.x.push_back((Vec6() << std::sqrt(0.5), 0, std::sqrt(0.5), 0, 0, 0).finished());
  for (int j = 0; j < N; ++j) {
    ref.u.push_back(u * (1.0 + 0.1 * j));
    ref.x.push_back(rk4_flow<double>(m, ref.x[j], ref.u[j], T * j / N, T * (j + 1) / N, 100));
  }
  return ref;
}

TEST(Certificate, ExtractBoundsLinearModel) {
  Mat6 A = Mat6::Zero();
  A.block<3, 3>(0, 3).setIdentity();
  A(3, 0) = 0.02;
  A(4, 1) = -0.01;
  const PiecewiseTrajectory ref = thrusting_reference(OrbitModel::linear(A), 4, 100.0, Vec3(1e-3, 0, 0));
  const AssumptionBounds b = extract_bounds(ref, {25.0, 75.0});
  EXPECT_NEAR(b.alpha, A.jacobiSvd().singularValues()[0], 1e-14);
  EXPECT_EQ(b.H, 0.0);
  EXPECT_EQ(b.beta, 1.0);
  EXPECT_NEAR(b.u_min_dag, 1.1e-3, 1e-15);
  EXPECT_NEAR(b.u_max_dag, 1.2e-3, 1e-15);
}

TEST(Certificate, ExtractBoundsCircular) {
  const PiecewiseTrajectory ref = thrusting_reference(test::mission_circular(), 10, 600.0, Vec3(0, 5e-7, 0));
  BoundsOptions o;
  o.samples = 20;
  const AssumptionBounds b = extract_bounds(ref, {120.0, 360.0}, o);
  o.samples = 200;
  const AssumptionBounds fine = extract_bounds(ref, {120.0, 360.0}, o);
  EXPECT_EQ(b.beta, 1.0);
  EXPECT_LE(std::abs(b.alpha - fine.alpha) / fine.alpha, 0.01);
  EXPECT_GT(b.H, 0.0);
  EXPECT_TRUE(b.certifiable);

  PiecewiseTrajectory coast = ref;
  coast.u[3].setZero();
  try {
    extract_bounds(coast, {120.0, 360.0});
    FAIL();
  } catch (const AssumptionViolation& e) {
    EXPECT_NEAR(e.time(), 180.0, 1e-9);
  }
}

TEST(Certificate, TriadAndSufficiency) {
  const OrbitModel m = test::mission_circular();
  const PiecewiseTrajectory ref = thrusting_reference(m, 10, 600.0, Vec3(4e-7, -3e-7, 2e-7));
  const OutageWindow w{120.0, 360.0};
  const AssumptionBounds b = extract_bounds(ref, w);
  const Certificate c = make_certificate(b, 0.05);
  const Realization real = simulate_coasting(ref, w, 200);
  const CertificateTriad tr = certificate_triad(ref, real, w, b, 0.05);
  EXPECT_FALSE(tr.degenerate);
  EXPECT_DOUBLE_EQ(tr.dtau_actual, 240.0);
  EXPECT_EQ(tr.delta_theoretical, c.delta);
  if (tr.delta_theoretical <= tr.delta_computed) EXPECT_LE(tr.dtau_theoretical, tr.dtau_computed);
  const SufficiencyCheck s = check_sufficiency(ref, w.tau1, std::min(c.dtau_max, w.duration()), 0.05, 100);
  EXPECT_EQ(s.violations, 0);
  // Envelope dominance along the realization.
  for (std::size_t i = 0; i < real.t.size(); ++i) {
    const double t = real.t[i] - w.tau1;
    if (t > c.dtau_max) break;
    EXPECT_LE((real.x[i] - ref.state_at(real.t[i])).norm(), riccati_envelope(b, t) * (1 + 1e-9) + 1e-15);
  }

  const OutageWindow zero{240.0, 240.0};
  const Realization r0 = simulate_coasting(ref, zero, 4);
  const CertificateTriad t0 = certificate_triad(ref, r0, zero, b, 0.05);
  EXPECT_TRUE(t0.degenerate);
  EXPECT_EQ(t0.delta_computed, 0.0);

  Realization shifted = real;
  shifted.t.front() += 1.0;
  EXPECT_THROW(certificate_triad(ref, shifted, w, b, 0.05), Error);
}

}  // namespace
}  // namespace mtr
