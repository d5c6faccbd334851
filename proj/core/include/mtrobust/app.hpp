#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mtrobust/certificate.hpp"
#include "mtrobust/recovery.hpp"
#include "mtrobust/scenario.hpp"
#include "mtrobust/solver.hpp"
#include "mtrobust/transcription.hpp"

namespace mtr {

// Process exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitDiverged = 3, kExitGate = 4 };

inline constexpr int kCheckpointVersion = 1;
inline constexpr int kEnsembleSchemaVersion = 1;

struct Checkpoint {
  ScenarioConfig scenario;
  std::uint64_t seed = 0;
  Eigen::VectorXd z;
  Eigen::VectorXd multipliers;
  SolveReport report;
};

std::string dump_checkpoint(const Checkpoint& cp);
Checkpoint parse_checkpoint(const std::string& text, const std::string& source = "<string>");
Checkpoint load_checkpoint(const std::string& path);

NlpProblem make_problem(const ScenarioConfig& cfg);

// initialize (or warm start) then solve, seeded by `seed`.
Checkpoint solve_scenario(const ScenarioConfig& cfg, std::uint64_t seed,
                          const Eigen::VectorXd* warm_start = nullptr);

// Leader reference of a solution on [0, T_dag].
PiecewiseTrajectory reference_of(const Checkpoint& cp);

// Outage window of the scenario on the solution's follower grid; empty at t = 0 without an MTE.
OutageWindow outage_of(const Checkpoint& cp);

// Relative gap |rho_bar(t) - delta| / delta with rho_bar from a fine RK4 run of the envelope ODE.
double envelope_consistency(const AssumptionBounds& b, double t, double delta, int steps = 20000);

struct CertifyReport {
  bool zero_outage = false;
  double mission_time = 0.0;
  OutageWindow window;
  AssumptionBounds bounds;
  Certificate certificate;
  CertificateTriad triad;
  double envelope_gap = 0.0;
};

// extract_bounds -> certificate -> coasting triad. Throws AssumptionViolation when a reference
// control vanishes on the window and Error(Divergence) when the envelope re-check exceeds 1e-6.
CertifyReport certify(const Checkpoint& cp, double epsilon, int samples);
std::string certificate_json(const CertifyReport& r);

struct RecoverReport {
  OutageWindow window;
  double mission_time = 0.0;
  double dtau_normalized = 0.0;
  GramianReport gramian;
};

RecoverReport recover(const Checkpoint& cp, std::optional<double> t_rec = std::nullopt,
                      std::optional<Vec3> u_bar = std::nullopt);
std::string recovery_json(const RecoverReport& r);

struct EnsembleRow {
  std::uint64_t seed = 0;
  SolveStatus status = SolveStatus::MaxIter;
  double J = 0.0;
  double T = 0.0;
  double max_violation = 0.0;
  bool certified = false;  // certificate and triad evaluated
  double delta_theoretical = 0.0;
  double delta_computed = 0.0;
  double dtau_theoretical = 0.0;
  double dtau_computed = 0.0;
  double dtau_actual = 0.0;
  double r_sat = 0.0;
  double r_e = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double H = 0.0;
  double f_min = 0.0;
  double f_max = 0.0;
  std::string branch;
  std::string note;
};

EnsembleRow ensemble_row(const ScenarioConfig& cfg, std::uint64_t seed);

// Seeds cfg.seed .. cfg.seed + runs - 1 on a worker pool; rows come back in seed order.
std::vector<EnsembleRow> run_ensemble(const ScenarioConfig& cfg, int runs, int threads = 0);

void write_ensemble_csv(std::ostream& os, const std::vector<EnsembleRow>& rows);

struct MetricSummary {
  std::string name;
  int count = 0;
  double min = 0.0, q25 = 0.0, median = 0.0, q75 = 0.0, max = 0.0;
  std::vector<double> edges;  // bins + 1
  std::vector<int> counts;
};

struct EnsembleSummary {
  std::string scenario;
  int runs = 0;
  int converged = 0;
  double feasibility_ratio = 0.0;  // percent
  int ordering_checked = 0;
  int ordering_violations = 0;  // converged rows with dtau_theoretical > dtau_computed
  std::vector<MetricSummary> metrics;
};

// Published feasibility ratio (percent) of the reference study cases, NaN for other names.
double reference_feasibility_ratio(const std::string& scenario);

EnsembleSummary summarize(const std::string& scenario, const std::vector<EnsembleRow>& rows,
                          int bins = 20);
std::string summary_json(const EnsembleSummary& s);
void write_histograms_csv(std::ostream& os, const EnsembleSummary& s);

enum class PointSource { Random, Simulated, File };

struct JacobianEntry {
  int row = 0;
  int col = 0;
  double exact = 0.0;
  double fd = 0.0;
  double e_rel = 0.0;
};

struct JacobianCheck {
  double max_e_rel = 0.0;
  double median_e_rel = 0.0;
  std::vector<JacobianEntry> entries;  // declared pattern, scaled coordinates
};

inline constexpr double kJacobianGate = 1e-6;

std::string variable_label(const VariableLayout& l, int index);

Eigen::VectorXd jacobian_point(const NlpProblem& p, PointSource src, std::uint64_t seed,
                               const std::string& file = "");
JacobianCheck check_jacobian(const NlpProblem& p, const Eigen::VectorXd& z, double step = 1e-6);
void write_erel_csv(std::ostream& os, const NlpProblem& p, const JacobianCheck& c);

// Command-line entry points. Each returns an ExitCode and writes into opts.out.
struct CommandOptions {
  std::string config;
  std::string solution;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  std::optional<int> threads;
  std::optional<double> epsilon;
  std::optional<double> t_rec;
  std::optional<Vec3> u_bar;
  std::string warm_start;
  PointSource point = PointSource::Simulated;
  std::string point_file;
};

int cmd_solve(const CommandOptions& o, std::ostream& out, std::ostream& err);
int cmd_certify(const CommandOptions& o, std::ostream& out, std::ostream& err);
int cmd_ensemble(const CommandOptions& o, std::ostream& out, std::ostream& err);
int cmd_check_jacobian(const CommandOptions& o, std::ostream& out, std::ostream& err);
int cmd_recover(const CommandOptions& o, std::ostream& out, std::ostream& err);

}  // namespace mtr
