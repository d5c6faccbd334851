#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "json.hpp"
#include "mtrobust/app.hpp"

using namespace mtr;
namespace fs = std::filesystem;

namespace {

ScenarioConfig leader_config() {
  return load_scenario(std::string(MTR_CONFIG_DIR) + "/circular_leader.json");
}

// One converged leader-only solution shared by the tests that only read it.
const Checkpoint& leader_solution() {
  static const Checkpoint cp = solve_scenario(leader_config(), 1);
  return cp;
}

fs::path scratch(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("mtrobust_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string write_config(const fs::path& dir, const ScenarioConfig& c) {
  const std::string path = (dir / "cfg.json").string();
  write_text_file(path, dump_scenario(c));
  return path;
}

std::string write_solution(const fs::path& dir, const Checkpoint& cp) {
  const std::string path = (dir / "sol.json").string();
  write_text_file(path, dump_checkpoint(cp));
  return path;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  Checkpoint cp = leader_solution();
  cp.report.worst_rows.emplace_back("row[3]", 1e-12);
  cp.report.penalty = std::numeric_limits<double>::infinity();
  const Checkpoint back = parse_checkpoint(dump_checkpoint(cp));
  EXPECT_EQ(back.z, cp.z);
  EXPECT_EQ(back.multipliers, cp.multipliers);
  EXPECT_EQ(back.seed, cp.seed);
  EXPECT_EQ(back.report.status, cp.report.status);
  EXPECT_EQ(back.report.objective, cp.report.objective);
  EXPECT_TRUE(std::isinf(back.report.penalty));
  EXPECT_EQ(back.report.worst_rows, cp.report.worst_rows);
  EXPECT_EQ(back.report.accepted_violations, cp.report.accepted_violations);
  EXPECT_EQ(dump_scenario(back.scenario), dump_scenario(cp.scenario));
}

TEST(Checkpoint, RejectsForeignAndMismatchedFiles) {
  EXPECT_THROW(parse_checkpoint(R"({"format": "other"})"), Error);
  Checkpoint cp = leader_solution();
  cp.z.conservativeResize(cp.z.size() - 1);
  EXPECT_THROW(parse_checkpoint(dump_checkpoint(cp)), Error);
}

TEST(App, LeaderSolutionConvergesWithinTolerance) {
  const Checkpoint& cp = leader_solution();
  ASSERT_EQ(cp.report.status, SolveStatus::Converged) << cp.report.message;
  EXPECT_LE(cp.report.max_violation, cp.scenario.solver.constraint_tolerance);
  const NlpProblem p = make_problem(cp.scenario);
  EXPECT_LE(max_violation(p, cp.z), cp.scenario.solver.constraint_tolerance);
}

TEST(App, SolveIsDeterministicPerSeed) {
  const Checkpoint a = solve_scenario(leader_config(), 1);
  EXPECT_EQ(a.z, leader_solution().z);
}

TEST(App, OutageWindowComesFromTheConfiguredMte) {
  const Checkpoint& cp = leader_solution();
  const OutageWindow w = outage_of(cp);
  const NlpProblem p = make_problem(cp.scenario);
  const double T = cp.z[0];
  const int n_om = cp.scenario.transcription().n_om;
  // segments 3..4 of an n_om grid over [0, T]
  EXPECT_NEAR(w.tau1, 3.0 * T / n_om, 1e-9 * T);
  EXPECT_NEAR(w.tau2, 5.0 * T / n_om, 1e-9 * T);

  Checkpoint none = cp;
  none.scenario.mte.reset();
  EXPECT_EQ(outage_of(none).duration(), 0.0);
}

TEST(App, ZeroOutageCertifiesDegenerate) {
  Checkpoint cp = leader_solution();
  cp.scenario.mte.reset();
  const CertifyReport r = certify(cp, 0.05, 50);
  EXPECT_TRUE(r.zero_outage);
  EXPECT_TRUE(r.triad.degenerate);
  const auto j = nlohmann::json::parse(certificate_json(r));
  EXPECT_TRUE(j.at("zero_outage").get<bool>());
}

TEST(App, ZeroDeviationGivesInfiniteMargin) {
  Checkpoint cp = leader_solution();
  cp.scenario.mte.reset();
  const RecoverReport r = recover(cp, 1000.0);
  EXPECT_EQ(r.gramian.xi_plus, Vec6::Zero());
  EXPECT_EQ(r.gramian.E_min, 0.0);
  EXPECT_TRUE(r.gramian.infinite_margin);
  EXPECT_TRUE(std::isinf(r.gramian.r_e));
}

TEST(App, CertificateEnvelopeMatchesIndependentIntegration) {
  const CertifyReport r = certify(leader_solution(), 0.05, 200);
  ASSERT_FALSE(r.zero_outage);
  ASSERT_FALSE(r.certificate.unbounded);
  // Explicit Euler with a tiny step, a different integrator from the one in the library.
  const AssumptionBounds& b = r.bounds;
  const int n = 2000000;
  const double h = r.certificate.dtau_max / n;
  double rho = 0.0;
  for (int i = 0; i < n; ++i) rho += h * (0.5 * b.H * rho * rho + b.alpha * rho + b.f_max);
  EXPECT_NEAR(rho / r.certificate.delta, 1.0, 1e-5);
  EXPECT_LE(r.envelope_gap, 1e-6);
}

TEST(Ensemble, RowsIndependentOfThreadCount) {
  ScenarioConfig c = leader_config();
  c.seed = 5;
  const auto one = run_ensemble(c, 3, 1);
  const auto two = run_ensemble(c, 3, 2);
  std::ostringstream a, b;
  write_ensemble_csv(a, one);
  write_ensemble_csv(b, two);
  EXPECT_EQ(a.str(), b.str());
  ASSERT_EQ(one.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(one[i].seed, 5u + i);
  EXPECT_EQ(a.str().rfind("# mtrobust-ensemble v1\n", 0), 0u);
}

TEST(Ensemble, SummaryCountsAndQuantiles) {
  std::vector<EnsembleRow> rows(5);
  for (int i = 0; i < 5; ++i) {
    rows[i].status = i < 4 ? SolveStatus::Converged : SolveStatus::MaxIter;
    rows[i].J = i + 1.0;
    rows[i].T = 1.0;
    rows[i].certified = true;
    rows[i].delta_computed = 1.0;
    rows[i].dtau_actual = 1.0;
    rows[i].dtau_theoretical = 1.0;
    rows[i].dtau_computed = i == 0 ? 0.5 : 2.0;  // row 0 breaks the ordering
  }
  const EnsembleSummary s = summarize("x", rows, 4);
  EXPECT_EQ(s.runs, 5);
  EXPECT_EQ(s.converged, 4);
  EXPECT_DOUBLE_EQ(s.feasibility_ratio, 80.0);
  EXPECT_EQ(s.ordering_checked, 4);
  EXPECT_EQ(s.ordering_violations, 1);
  const MetricSummary& J = s.metrics.front();
  ASSERT_EQ(J.name, "J");
  EXPECT_DOUBLE_EQ(J.min, 1.0);
  EXPECT_DOUBLE_EQ(J.max, 4.0);  // converged rows only
  EXPECT_DOUBLE_EQ(J.median, 2.5);
  int total = 0;
  for (int n : J.counts) total += n;
  EXPECT_EQ(total, J.count);
}

TEST(Ensemble, ReferenceRatiosMatchTheReportedCounts) {
  // 240, 256 and 272 feasible out of 500 initializations
  EXPECT_DOUBLE_EQ(reference_feasibility_ratio("circular"), 100.0 * 240 / 500);
  EXPECT_DOUBLE_EQ(reference_feasibility_ratio("eccentric_case1"), 100.0 * 256 / 500);
  EXPECT_DOUBLE_EQ(reference_feasibility_ratio("eccentric_case2"), 100.0 * 272 / 500);
  EXPECT_TRUE(std::isnan(reference_feasibility_ratio("circular_small")));
}

TEST(Commands, MissingOrBadConfigExitsTwo) {
  std::ostringstream out, err;
  CommandOptions o;
  o.config = "/nonexistent.json";
  o.out = scratch("badcfg").string();
  EXPECT_EQ(cmd_solve(o, out, err), kExitConfig);
  const fs::path d = scratch("badcfg2");
  write_text_file((d / "cfg.json").string(), R"({"epsilon": 3})");
  o.config = (d / "cfg.json").string();
  EXPECT_EQ(cmd_solve(o, out, err), kExitConfig);
  EXPECT_NE(err.str().find("epsilon"), std::string::npos);
  o.solution = "/nonexistent.json";
  EXPECT_EQ(cmd_certify(o, out, err), kExitConfig);
  EXPECT_EQ(cmd_recover(o, out, err), kExitConfig);
}

TEST(Commands, InfeasibleSolveExitsThree) {
  ScenarioConfig c = leader_config();
  c.n_dag = 2;
  c.mte.reset();
  c.solver.max_penalty = 1e4;
  const fs::path d = scratch("diverge");
  CommandOptions o;
  o.config = write_config(d, c);
  o.out = d.string();
  std::ostringstream out, err;
  EXPECT_EQ(cmd_solve(o, out, err), kExitDiverged) << out.str();
  EXPECT_TRUE(fs::exists(d / "solution_0.json"));
}

TEST(Commands, ZeroControlOnTheWindowExitsFour) {
  Checkpoint cp = leader_solution();
  const NlpProblem p = make_problem(cp.scenario);
  DecisionVector dv = DecisionVector::unpack(cp.z, p.layout());
  for (Vec3& u : dv.U_dag) u.setZero();
  cp.z = dv.pack();
  const fs::path d = scratch("gate");
  CommandOptions o;
  o.solution = write_solution(d, cp);
  o.out = d.string();
  std::ostringstream out, err;
  EXPECT_EQ(cmd_certify(o, out, err), kExitGate);
  EXPECT_NE(err.str().find("assumption"), std::string::npos);
}

TEST(Commands, OutputsEqualDirectApiCalls) {
  const Checkpoint& cp = leader_solution();
  const fs::path d = scratch("api");
  CommandOptions o;
  o.solution = write_solution(d, cp);
  o.out = d.string();
  std::ostringstream out, err;
  ASSERT_EQ(cmd_certify(o, out, err), kExitOk) << err.str();
  ASSERT_EQ(cmd_recover(o, out, err), kExitOk) << err.str();
  EXPECT_EQ(read_text_file((d / "certificate.json").string()),
            certificate_json(certify(cp, cp.scenario.epsilon, cp.scenario.certificate_samples)));
  EXPECT_EQ(read_text_file((d / "recovery.json").string()), recovery_json(recover(cp)));

  o.config = write_config(d, cp.scenario);
  o.point = PointSource::Random;
  o.seed = 3;
  EXPECT_EQ(cmd_check_jacobian(o, out, err), kExitOk) << out.str();
  const NlpProblem p = make_problem(cp.scenario);
  std::ostringstream erel;
  write_erel_csv(erel, p, check_jacobian(p, jacobian_point(p, PointSource::Random, 3)));
  EXPECT_EQ(read_text_file((d / "jacobian_erel.csv").string()), erel.str());
}

TEST(Commands, SolveWritesALoadableCheckpoint) {
  const fs::path d = scratch("solve");
  CommandOptions o;
  o.config = write_config(d, leader_config());
  o.seed = 1;
  o.out = d.string();
  std::ostringstream out, err;
  ASSERT_EQ(cmd_solve(o, out, err), kExitOk) << err.str();
  const Checkpoint cp = load_checkpoint((d / "solution_1.json").string());
  EXPECT_EQ(cp.z, leader_solution().z);

  // a warm start from the optimum stays there
  o.warm_start = (d / "solution_1.json").string();
  ASSERT_EQ(cmd_solve(o, out, err), kExitOk) << err.str();
  const Checkpoint warm = load_checkpoint((d / "solution_1.json").string());
  EXPECT_EQ(warm.report.status, SolveStatus::Converged);
  EXPECT_NEAR(warm.report.objective, cp.report.objective, 1e-6 * cp.report.objective);
}
