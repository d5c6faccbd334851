#pragma once

#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "mtrobust/common.hpp"
#include "mtrobust/dynamics.hpp"

namespace mtr {

struct Obstacle {
  Vec3 center = Vec3::Zero();  // km, Hill frame
  double radius = 0.0;         // km
};

// Disabled follower segments of a single outage. Contiguous by construction.
struct MteScenario {
  std::vector<int> segments;

  static MteScenario range(int first, int last);  // inclusive
  static MteScenario none() { return {}; }

  bool empty() const { return segments.empty(); }
  int count() const { return static_cast<int>(segments.size()); }
  int first() const;
  int last() const;
  bool contains(int k) const;
  double tau1(double T_om, int n_om) const;
  double dtau(double T_om, int n_om) const;
  void validate(int n_om) const;
};

struct TranscriptionConfig {
  int n_dag = 50;
  int n_om = 40;
  int steps = 100;  // RK4 steps per segment
  Vec6 x0 = (Vec6() << M_SQRT1_2, 0.0, M_SQRT1_2, 0.0, 0.0, 0.0).finished();
  Vec6 x1 = Vec6::Zero();
  // Follower weights act on deviations measured in length_unit and time_unit
  // (time_unit <= 0 selects 1 / mean motion).
  Mat6 Q = Mat6::Identity();
  Mat3 R = 0.1 * Mat3::Identity();
  Mat6 Qf = 10.0 * Mat6::Identity();
  double length_unit = 1.0;  // km
  double time_unit = 0.0;    // s
  std::vector<Obstacle> obstacles;
  Vec6 x_lower = Vec6::Constant(-std::numeric_limits<double>::infinity());
  Vec6 x_upper = Vec6::Constant(std::numeric_limits<double>::infinity());
  double u_max = 1e-6;  // km/s^2
  double t_min = 600.0;
  double t_max = 5400.0;
  double w_t = 0.0;
  double w_u = 1.0;
  bool follower = true;
  bool free_t_om = false;
};

// Flat packing: T_dag, X_dag[0..N], U_dag[0..N-1], T_om, X_om[0..N], U_om[0..N-1],
// L_om[0..N]. The follower part is absent in leader-only problems.
struct VariableLayout {
  int n_dag = 0;
  int n_om = 0;
  bool follower = false;

  int t_dag() const { return 0; }
  int x_dag(int k) const { return 1 + 6 * k; }
  int u_dag(int k) const { return 1 + 6 * (n_dag + 1) + 3 * k; }
  int t_om() const { return u_dag(n_dag); }
  int x_om(int k) const { return t_om() + 1 + 6 * k; }
  int u_om(int k) const { return x_om(n_om + 1) + 3 * k; }
  int lam(int k) const { return u_om(n_om) + 6 * k; }
  int size() const { return follower ? lam(n_om + 1) : t_om(); }
};

struct DecisionVector {
  double T_dag = 0.0;
  std::vector<Vec6> X_dag;
  std::vector<Vec3> U_dag;
  double T_om = 0.0;
  std::vector<Vec6> X_om;
  std::vector<Vec3> U_om;
  std::vector<Vec6> L_om;

  VariableLayout layout() const;
  Eigen::VectorXd pack() const;
  static DecisionVector unpack(const Eigen::VectorXd& z, const VariableLayout& layout);
};

enum class RowFamily {
  LeaderInitial,
  LeaderContinuity,
  LeaderTerminal,
  FlightTime,
  Branch,
  PrePin,
  CostatePin,
  FollowerContinuity,
  FollowerTerminal,
  Mte,
  Stationarity,
  Costate,
  Transversality,
  Obstacle,
};

const char* family_name(RowFamily f);

struct RowGroup {
  RowFamily family;
  int index;  // segment/node index, obstacle rows use node * n_obstacles + j
  int row0;
  int nrows;
};

// Nearest leader segment by midpoint time, ties toward the earlier one.
int segment_map(int k_om, int n_om, int n_dag, double T_om, double T_dag);

// N_om = N_dag - |M| unless overridden.
int adaptive_segments(int mte_count, int n_dag, std::optional<int> override_n = std::nullopt);

// Follower weights in physical units (km, km/s, km/s^2).
struct FollowerWeights {
  Mat6 Q;
  Mat6 Qf;
  Mat3 R;
};

class NlpProblem {
 public:
  NlpProblem(const OrbitModel& model, const TranscriptionConfig& cfg, const MteScenario& mte);

  const OrbitModel& model() const;
  const TranscriptionConfig& config() const;
  const MteScenario& scenario() const;
  const VariableLayout& layout() const;
  const FollowerWeights& weights() const;
  bool has_follower() const { return layout().follower; }

  int num_vars() const;
  int num_rows() const;
  const std::vector<RowGroup>& groups() const;
  const std::vector<char>& inequality() const;  // one flag per row
  std::string row_label(int row) const;
  std::vector<int> rows_of(RowFamily f) const;

  const Eigen::VectorXd& lower() const;
  const Eigen::VectorXd& upper() const;
  const Eigen::VectorXd& var_scale() const;
  const Eigen::VectorXd& row_scale() const;
  double objective_scale() const;

  // Leader objective; smoothing > 0 replaces |U| by sqrt(|U|^2 + s^2) - s with
  // s = smoothing * u_max.
  double objective(const Eigen::VectorXd& z, double smoothing = 0.0) const;
  Eigen::VectorXd objective_gradient(const Eigen::VectorXd& z, double smoothing = 0.0) const;
  Eigen::SparseMatrix<double> objective_hessian(const Eigen::VectorXd& z, double smoothing) const;

  double follower_objective(const Eigen::VectorXd& z) const;

  Eigen::VectorXd constraints(const Eigen::VectorXd& z) const;
  Eigen::SparseMatrix<double> jacobian(const Eigen::VectorXd& z,
                                       Eigen::VectorXd* c = nullptr) const;
  std::vector<std::pair<int, int>> sparsity() const;
  // Hessian of w^T c(z), by central differences of the exact block gradients.
  Eigen::SparseMatrix<double> lagrangian_hessian(const Eigen::VectorXd& z,
                                                 const Eigen::VectorXd& w) const;

  std::vector<int> kkt_rows() const;
  Eigen::VectorXd kkt_residuals(const Eigen::VectorXd& z) const;

  // Follower bookkeeping.
  int node_leader_segment(int k_om) const;  // segment whose partial flow gives xi_dag(t_k)
  int mapped_segment(int k_om) const;       // pi(k_om) at the nominal time ratio
  Vec6 reference_at_node(const DecisionVector& dv, int k_om) const;

  // Leader states by forward simulation of (T, U); follower filled by complete_follower.
  DecisionVector simulate(double T, const std::vector<Vec3>& U_dag) const;
  // Fills follower states by simulation from the branch point and costates by the
  // backward adjoint recursion. Keeps the active follower controls in dv.
  void complete_follower(DecisionVector& dv) const;

  void write_sparsity_csv(std::ostream& os) const;

  struct Impl;

 private:
  std::shared_ptr<const Impl> impl_;
};

}  // namespace mtr
