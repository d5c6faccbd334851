// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "mtrobust/app.hpp"
#include "mtrobust/certificate.hpp"
#include "mtrobust/propagation.hpp"
#include "mtrobust/recovery.hpp"
#include "nlp_oracles.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mtr;

namespace {

// Tolerances and sample counts.
constexpr double kEnvelopeTol = 1e-8;
constexpr int kBoundSets = 300;
constexpr int kMinSufficiencySolutions = 50;
constexpr double kEpsilon = 0.05;
constexpr double kJacobianMedianGate = 1e-9;
constexpr double kKktTol = 1e-6;
constexpr double kEminTol = 1e-3;
constexpr double kLtvTol = 1e-10;
constexpr int kTubeSamples = 1000;
constexpr double kModelLimitTol = 1e-6;
constexpr double kLeaderViolationTol = 1e-8;
constexpr int kBiLevelSeeds = 20;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

ScenarioConfig config(const std::string& name) {
  return load_scenario(std::string(MTR_CONFIG_DIR) + "/" + name + ".json");
}

// Converged leader-only circular solutions shared by criteria 2, 3 and 11.
struct LeaderRun {
  Checkpoint cp;
  CertifyReport cert;
  double r_e = 0.0;
};
std::vector<LeaderRun> g_leader;
int g_leader_attempts = 0;

void build_leader_runs() {
  if (g_leader_attempts) return;
  ScenarioConfig c = config("circular_leader");
  for (int seed = 0; (int)g_leader.size() < kMinSufficiencySolutions && seed < 2 * kMinSufficiencySolutions;
       ++seed) {
    ++g_leader_attempts;
    // slide a two-segment outage over the nominal follower grid
    const int first = seed % 7;
    c.mte = std::make_pair(first, first + 1);
    Checkpoint cp = solve_scenario(c, seed);
    if (cp.report.status != SolveStatus::Converged) continue;
    LeaderRun r;
    try {
      r.cert = certify(cp, kEpsilon, 200);
    } catch (const AssumptionViolation& e) {
      std::printf("    seed %d: not certifiable (%s)\n", seed, e.what());
      continue;
    }
    // an outage ending at the horizon leaves no recovery window
    r.r_e = r.cert.window.tau2 < cp.z[0] ? recover(cp).gramian.r_e : NAN;
    r.cp = std::move(cp);
    g_leader.push_back(std::move(r));
  }
}

// Own RK4 of the coasting realization from the reference state at tau1, checked against the
// first-order model at each sample. Returns the number of samples where ||r|| > eps ||A xi + B u||.
int coasting_violations(const PiecewiseTrajectory& ref, double tau1, double horizon, int samples,
                        double& worst) {
  const OrbitModel& m = ref.model;
  const Vec3 zero = Vec3::Zero();
  Vec6 x = ref.state_at(tau1);
  const int sub = 50;
  int bad = 0;
  for (int i = 0; i <= samples; ++i) {
    const double t = tau1 + horizon * i / samples;
    if (i > 0) {
      const double t0 = tau1 + horizon * (i - 1) / samples;
      const double h = (t - t0) / sub;
      for (int k = 0; k < sub; ++k) {
        const double s = t0 + k * h;
        const Vec6 k1 = eval_dynamics(m, s, x, zero);
        const Vec6 k2 = eval_dynamics(m, s + h / 2, x + h / 2 * k1, zero);
        const Vec6 k3 = eval_dynamics(m, s + h / 2, x + h / 2 * k2, zero);
        const Vec6 k4 = eval_dynamics(m, s + h, x + h * k3, zero);
        x += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
      }
    }
    const Vec6 xr = ref.state_at(t);
    const Vec3 ur = ref.control_at(std::min(t, tau1 + horizon * (1 - 1e-12)));
    const Vec6 xi = x - xr;
    const Vec6 lin = jacobian_state(m, t, xr, ur) * xi - jacobian_control(m, t, xr) * ur;
    const Vec6 rem = eval_dynamics(m, t, x, zero) - eval_dynamics(m, t, xr, ur) - lin;
    const double ratio = rem.norm() / lin.norm();
    worst = std::max(worst, ratio);
    if (rem.norm() > kEpsilon * lin.norm()) ++bad;
  }
  return bad;
}

Outcome envelope_consistency_check() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  int branches[3] = {0, 0, 0};
  for (int i = 0; i < kBoundSets; ++i) {
    const AssumptionBounds b = test::random_bounds(rng, i % 3);
    const double eps = test::uniform(rng, 0.01, 0.5);
    const Certificate c = make_certificate(b, eps);
    if (c.unbounded || !(c.delta > 0.0)) return {false, "degenerate certificate in sample"};
    ++branches[static_cast<int>(c.branch)];
    const double rho = test::riccati_rk4(b, c.dtau_max);
    worst = std::max(worst, std::abs(rho - c.delta) / c.delta);
  }
  const bool all = branches[0] && branches[1] && branches[2];
  return {all && worst <= kEnvelopeTol,
          fmt("max |rho(dtau)-delta|/delta = %.3e (tol %.0e), branch counts ", worst, kEnvelopeTol) +
              std::to_string(branches[0]) + "/" + std::to_string(branches[1]) + "/" +
              std::to_string(branches[2])};
}

Outcome sufficiency_check() {
  build_leader_runs();
  int checked = 0, bad = 0, lib_bad = 0;
  double worst = 0.0;
  for (const LeaderRun& r : g_leader) {
    if (r.cert.zero_outage) continue;
    const PiecewiseTrajectory ref = reference_of(r.cp);
    const double horizon = r.cert.triad.dtau_theoretical;
    bad += coasting_violations(ref, r.cert.window.tau1, horizon, 100, worst);
    lib_bad += check_sufficiency(ref, r.cert.window.tau1, horizon, kEpsilon, 100).violations;
    ++checked;
  }
  return {checked >= kMinSufficiencySolutions && bad == 0 && lib_bad == 0,
          fmt("%g converged solutions, %g violations (library check %g), worst ratio %.3e", checked,
              bad, lib_bad, worst) +
              fmt(" vs eps %.2f", kEpsilon)};
}

Outcome ordering_check() {
  build_leader_runs();
  std::vector<EnsembleRow> rows;
  for (const LeaderRun& r : g_leader) {
    EnsembleRow row;
    row.status = r.cp.report.status;
    row.T = r.cp.z[0];
    row.certified = !r.cert.zero_outage;
    row.delta_computed = r.cert.triad.delta_computed;
    row.dtau_theoretical = r.cert.triad.dtau_theoretical;
    row.dtau_computed = r.cert.triad.dtau_computed;
    row.dtau_actual = r.cert.triad.dtau_actual;
    rows.push_back(row);
  }
  const EnsembleSummary s = summarize("circular_leader", rows);
  int direct = 0;
  for (const EnsembleRow& r : rows) direct += r.dtau_theoretical > r.dtau_computed;
  return {s.ordering_checked > 0 && s.ordering_violations == 0 && direct == 0,
          fmt("%g of %g converged rows checked, %g violations", s.ordering_checked,
              static_cast<double>(rows.size()), s.ordering_violations)};
}

Outcome jacobian_check() {
  const NlpProblem p = make_problem(config("circular_small"));
  std::vector<double> maxes, medians;
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    for (PointSource src : {PointSource::Simulated, PointSource::Random}) {
      const Eigen::VectorXd z = jacobian_point(p, src, seed);
      const test::JacobianGate g = test::jacobian_gate(p, z, 1e-6);
      const JacobianCheck lib = check_jacobian(p, z);
      maxes.push_back(std::max(g.max_rel, lib.max_e_rel));
      medians.push_back(std::max(g.median_rel, lib.median_e_rel));
    }
  }
  const double mx = *std::max_element(maxes.begin(), maxes.end());
  const double md = *std::max_element(medians.begin(), medians.end());
  return {mx <= kJacobianGate && md <= kJacobianMedianGate,
          fmt("max e_rel %.3e (gate %.0e), median %.3e (gate %.0e) over 4 points", mx, kJacobianGate,
              md, kJacobianMedianGate)};
}

Outcome kkt_check() {
  std::mt19937_64 rng(77);
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    TranscriptionConfig c;
    c.n_dag = 2 + i % 4;
    c.n_om = c.n_dag + 1;
    c.steps = 20;
    c.t_min = 1500.0;
    c.t_max = 3000.0;
    const NlpProblem p(test::mission_circular(), c, MteScenario::range(1, 1));
    std::vector<Vec3> U;
    for (int k = 0; k < c.n_dag; ++k) U.push_back(test::random_control(rng));
    const DecisionVector ref = p.simulate(test::uniform(rng, 1500.0, 3000.0), U);
    worst = std::max(worst, test::kkt_relative(p, test::follower_gauss_newton(p, ref)));
  }
  return {worst <= kKktTol, fmt("max scaled KKT residual %.3e (tol %.0e) on 10 references", worst, kKktTol)};
}

PiecewiseTrajectory random_reference(const OrbitModel& m, int N, double T, std::mt19937_64& rng) {
  PiecewiseTrajectory ref;
  ref.model = m;
  ref.duration = T;
  ref.x.push_back((Vec6() << M_SQRT1_2, 0, M_SQRT1_2, 0, 0, 0).finished());
  for (int j = 0; j < N; ++j) {
    ref.u.push_back(test::random_control(rng));
    ref.x.push_back(rk4_flow<double>(m, ref.x[j], ref.u[j], T * j / N, T * (j + 1) / N, 100));
  }
  return ref;
}

Outcome emin_check() {
  std::mt19937_64 rng(606);
  const PiecewiseTrajectory di = random_reference(OrbitModel::double_integrator(), 10, 1000.0, rng);
  const PiecewiseTrajectory circ = random_reference(test::mission_circular(), 20, 1200.0, rng);
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const Vec6 xi = test::random_state(rng, 0.5, 5e-4);
    const double e1 = min_energy(controllability_gramian(di, 200.0, 600.0), xi).E_min;
    worst = std::max(worst, std::abs(e1 - test::discrete_min_energy(di, 200.0, 600.0, xi)) / e1);
    const double e2 = min_energy(controllability_gramian(circ, 300.0, 600.0), xi).E_min;
    worst = std::max(worst, std::abs(e2 - test::discrete_min_energy(circ, 300.0, 600.0, xi)) / e2);
  }
  return {worst <= kEminTol, fmt("max relative gap %.3e (tol %.0e), 20 deviations", worst, kEminTol)};
}

Outcome ltv_check() {
  std::mt19937_64 rng(16);
  double worst = -1.0;
  for (int trial = 0; trial < 100; ++trial) {
    Mat6 A0, A1;
    for (int i = 0; i < 36; ++i) {
      A0.data()[i] = test::uniform(rng, -1, 1);
      A1.data()[i] = test::uniform(rng, -1, 1);
    }
    // ||A(t)|| <= alpha, ||forcing|| <= f_max
    const double alpha = test::uniform(rng, 0.0, 1.5);
    A0 *= 0.6 * alpha / A0.jacobiSvd().singularValues()[0];
    A1 *= 0.4 * alpha / A1.jacobiSvd().singularValues()[0];
    const double w = test::uniform(rng, 0.1, 5.0);
    const double f = test::uniform(rng, 0.1, 2.0);
    const Vec6 dir = test::random_state(rng, 1.0, 1.0).normalized();
    auto rhs = [&](double t, const Vec6& e) {
      Vec6 v = dir * std::cos(0.7 * t);
      v[0] += 0.5 * std::sin(3 * t);
      if (v.norm() > 1.0) v.normalize();
      return Vec6((A0 + std::sin(w * t) * A1) * e + f * v);
    };
    AssumptionBounds b;
    b.alpha = alpha;
    b.f_max = f;
    Vec6 e = Vec6::Zero();
    const int n = 3000;
    const double h = 3.0 / n;
    for (int i = 0; i < n; ++i) {
      const double t = i * h;
      const Vec6 k1 = rhs(t, e), k2 = rhs(t + h / 2, e + h / 2 * k1),
                 k3 = rhs(t + h / 2, e + h / 2 * k2), k4 = rhs(t + h, e + h * k3);
      e += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
      worst = std::max(worst, e.norm() / linear_error_envelope(b, t + h) - 1.0);
    }
  }
  return {worst <= kLtvTol,
          fmt("max (||e|| / envelope - 1) = %.3e (tol %.0e) over 100 systems", worst, kLtvTol)};
}

Outcome remainder_check() {
  std::mt19937_64 rng(808);
  const OrbitModel models[2] = {test::mission_circular(), test::mission_eccentric()};
  int bad = 0;
  double worst = 0.0;
  for (int i = 0; i < kTubeSamples; ++i) {
    const OrbitModel& m = models[i % 2];
    const double nu = i % 2 ? test::uniform(rng, 60.0, 120.0) * M_PI / 180.0 : 0.0;
    const Vec6 xr = test::random_state(rng);
    const double radius = test::uniform(rng, 1e-3, 2.0);
    Vec6 e = test::random_state(rng, 1.0, 1e-3);
    e *= test::uniform(rng, 0.0, radius) / e.norm();
    const Vec3 u = test::random_control(rng);
    const Vec6 r = eval_at_anomaly(m, nu, xr + e, u) - eval_at_anomaly(m, nu, xr, u) -
                   state_jacobian<double>(m, nu, xr) * e;
    const double bound = 0.5 * tube_curvature_bound(m, nu, xr, radius) * e.squaredNorm();
    if (bound > 0.0) worst = std::max(worst, r.norm() / bound);
    if (r.norm() > bound * (1 + 1e-12) + 1e-24) ++bad;
  }
  return {bad == 0, fmt("%g/%g violations, max ||r|| / (H/2 ||e||^2) = %.6f", bad, kTubeSamples, worst)};
}

Outcome model_limit_check() {
  std::mt19937_64 rng(909);
  const double a = 6871.0;
  const OrbitModel ecc = OrbitModel::eccentric(a, 1e-10, test::kMu, 0.3, 2.0, 0.3);
  const OrbitModel circ = OrbitModel::circular(a, std::sqrt(test::kMu / (a * a * a)));
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vec6 x = test::random_state(rng);
    const Vec3 u = test::random_control(rng);
    const double t = test::uniform(rng, 0.0, 1000.0);
    const Vec6 fe = eval_dynamics(ecc, t, x, u), fc = eval_dynamics(circ, t, x, u);
    worst = std::max(worst, (fe - fc).norm() / fc.norm());
    const Mat6 Je = jacobian_state(ecc, t, x, u), Jc = jacobian_state(circ, t, x, u);
    worst = std::max(worst, (Je - Jc).norm() / Jc.norm());
  }
  return {worst <= kModelLimitTol,
          fmt("max relative gap %.3e (tol %.0e) on 100 states", worst, kModelLimitTol)};
}

int g_bilevel_tried = 0, g_bilevel_ok = 0;

Outcome end_to_end_check() {
  ScenarioConfig leader = config("circular_leader");
  leader.mte.reset();
  const Checkpoint l = solve_scenario(leader, 0);
  const NlpProblem lp = make_problem(leader);
  const double lv = max_violation(lp, l.z);
  const bool leader_ok = l.report.status == SolveStatus::Converged && lv <= kLeaderViolationTol;

  const ScenarioConfig bi = config("circular_small");
  double bv = 0.0;
  for (int seed = 0; seed < kBiLevelSeeds && !g_bilevel_ok; ++seed) {
    ++g_bilevel_tried;
    const Checkpoint cp = solve_scenario(bi, seed);
    if (cp.report.status == SolveStatus::Converged) {
      ++g_bilevel_ok;
      bv = cp.report.max_violation;
    }
  }
  return {leader_ok && g_bilevel_ok >= 1,
          fmt("leader-only violation %.2e (tol %.0e); bi-level converged at seed %g (violation %.2e)", lv,
              kLeaderViolationTol, static_cast<double>(g_bilevel_tried - 1), bv)};
}

Outcome report_only() {
  build_leader_runs();
  std::vector<double> rsat, re;
  for (const LeaderRun& r : g_leader) {
    if (r.cert.zero_outage) continue;
    rsat.push_back(r.cert.certificate.r_sat);
    re.push_back(r.r_e);
  }
  std::sort(rsat.begin(), rsat.end());
  std::sort(re.begin(), re.end());
  auto med = [](const std::vector<double>& v) { return v.empty() ? NAN : v[v.size() / 2]; };
  re.erase(std::remove_if(re.begin(), re.end(), [](double x) { return std::isnan(x); }), re.end());
  const double re_above = std::count_if(re.begin(), re.end(), [](double x) { return x > 1.0; });
  std::printf("    leader-only N=10 feasibility %d/%d; bi-level N=10 |M|=2 %d/%d (stopped at first success)\n",
              (int)g_leader.size(), g_leader_attempts, g_bilevel_ok, g_bilevel_tried);
  std::printf("    reference feasibility at N=50: circular %.1f%%, eccentric case 1 %.1f%%, case 2 %.1f%%\n",
              reference_feasibility_ratio("circular"), reference_feasibility_ratio("eccentric_case1"),
              reference_feasibility_ratio("eccentric_case2"));
  std::printf("    r_sat median %.6f [%.6f, %.6f] (reference: near 1)\n", med(rsat),
              rsat.empty() ? NAN : rsat.front(), rsat.empty() ? NAN : rsat.back());
  std::printf("    r_e median %.4g, %d/%d above 1 (reference: frequently > 1)\n", med(re), (int)re_above,
              (int)re.size());
  return {true, "reported only"};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"certificate vs envelope ODE", envelope_consistency_check},
      {"sufficiency on converged solutions", sufficiency_check},
      {"ordering dtau_theoretical <= dtau_computed", ordering_check},
      {"Jacobian gate", jacobian_check},
      {"KKT at follower descent optimum", kkt_check},
      {"E_min vs discrete least squares", emin_check},
      {"linear error envelope dominance", ltv_check},
      {"remainder bound in the tube", remainder_check},
      {"eccentric model at e -> 0", model_limit_check},
      {"small end-to-end solves", end_to_end_check},
      {"reported-only comparisons", report_only},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %zu (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", (int)criteria.size() - failed, criteria.size());
  return failed ? 1 : 0;
}
