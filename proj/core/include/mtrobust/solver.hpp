#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "mtrobust/transcription.hpp"

namespace mtr {

struct SolveOptions {
  int max_outer_iterations = 60;
  int max_inner_iterations = 300;
  double constraint_tolerance = 1e-8;    // scaled inf-norm
  double stationarity_tolerance = 1e-6;  // scaled projected gradient, inf-norm
  double initial_penalty = 10.0;
  double penalty_growth = 10.0;
  double max_penalty = 1e14;
  // Scaled violation below which the inner model adds constraint curvature.
  double curvature_switch = 1e-4;
  double smoothing = 1e-3;  // fraction of u_max used to smooth |U|
  std::uint64_t seed = 0;
  bool trace = false;  // one line per outer iteration on stderr

  void validate() const;
};

enum class SolveStatus { Converged, MaxIter, Diverged };

const char* status_name(SolveStatus s);
SolveStatus status_from_name(const std::string& s);

struct SolveReport {
  SolveStatus status = SolveStatus::MaxIter;
  double objective = 0.0;
  double max_violation = 0.0;
  double stationarity = 0.0;
  int outer_iterations = 0;
  int inner_iterations = 0;
  double wall_time = 0.0;  // s
  double penalty = 0.0;
  std::string message;
  std::vector<std::pair<std::string, double>> worst_rows;  // label, scaled residual
  // Violation of every accepted outer iterate, in order.
  std::vector<double> accepted_violations;
};

struct SolveResult {
  Eigen::VectorXd z;
  Eigen::VectorXd multipliers;  // scaled, one per constraint row
  SolveReport report;
};

// Smooth NLP as seen by the solver: min f(z) s.t. c_E(z) = 0, c_I(z) <= 0, lower <= z <= upper.
// The scales map variables, rows and the objective to O(1) quantities.
class NlpModel {
 public:
  virtual ~NlpModel() = default;

  virtual int num_vars() const = 0;
  virtual int num_rows() const = 0;
  virtual const Eigen::VectorXd& lower() const = 0;
  virtual const Eigen::VectorXd& upper() const = 0;
  virtual const Eigen::VectorXd& var_scale() const = 0;
  virtual const Eigen::VectorXd& row_scale() const = 0;
  virtual const std::vector<char>& inequality() const = 0;
  virtual double objective_scale() const = 0;

  // smooth = false asks for the exact objective when the model smooths it internally
  virtual double objective(const Eigen::VectorXd& z, bool smooth = true) const = 0;
  virtual Eigen::VectorXd objective_gradient(const Eigen::VectorXd& z) const = 0;
  virtual Eigen::SparseMatrix<double> objective_hessian(const Eigen::VectorXd& z) const = 0;
  virtual Eigen::VectorXd constraints(const Eigen::VectorXd& z) const = 0;
  virtual Eigen::SparseMatrix<double> jacobian(const Eigen::VectorXd& z,
                                               Eigen::VectorXd* c = nullptr) const = 0;
  // Hessian of w^T c(z).
  virtual Eigen::SparseMatrix<double> lagrangian_hessian(const Eigen::VectorXd& z,
                                                         const Eigen::VectorXd& w) const = 0;
  virtual std::string row_label(int row) const { return "row[" + std::to_string(row) + "]"; }
};

// NlpProblem with the smoothed leader objective.
class TranscribedNlp final : public NlpModel {
 public:
  explicit TranscribedNlp(const NlpProblem& p, double smoothing = 1e-3);

  int num_vars() const override;
  int num_rows() const override;
  const Eigen::VectorXd& lower() const override;
  const Eigen::VectorXd& upper() const override;
  const Eigen::VectorXd& var_scale() const override;
  const Eigen::VectorXd& row_scale() const override;
  const std::vector<char>& inequality() const override;
  double objective_scale() const override;
  double objective(const Eigen::VectorXd& z, bool smooth = true) const override;
  Eigen::VectorXd objective_gradient(const Eigen::VectorXd& z) const override;
  Eigen::SparseMatrix<double> objective_hessian(const Eigen::VectorXd& z) const override;
  Eigen::VectorXd constraints(const Eigen::VectorXd& z) const override;
  Eigen::SparseMatrix<double> jacobian(const Eigen::VectorXd& z,
                                       Eigen::VectorXd* c = nullptr) const override;
  Eigen::SparseMatrix<double> lagrangian_hessian(const Eigen::VectorXd& z,
                                                 const Eigen::VectorXd& w) const override;
  std::string row_label(int row) const override;

 private:
  const NlpProblem& p_;
  double sm_;
};

// Scaled violation: max |c_i| / s_i over equalities and max(c_i, 0) / s_i over inequalities.
double max_violation(const NlpModel& p, const Eigen::VectorXd& z);
double max_violation(const NlpProblem& p, const Eigen::VectorXd& z);

// Labels and scaled residuals of the k largest violations.
std::vector<std::pair<std::string, double>> worst_rows(const NlpModel& p,
                                                       const Eigen::VectorXd& z, int k = 5);
std::vector<std::pair<std::string, double>> worst_rows(const NlpProblem& p,
                                                       const Eigen::VectorXd& z, int k = 5);

// Deterministic for fixed (z0, opts). The NlpProblem overload smooths |U| with opts.smoothing.
SolveResult solve(const NlpModel& p, const Eigen::VectorXd& z0, const SolveOptions& opts = {});
SolveResult solve(const NlpProblem& p, const Eigen::VectorXd& z0, const SolveOptions& opts = {});

// Uniform leader controls and flight time within bounds, leader and follower simulated.
DecisionVector initialize(const NlpProblem& p, std::mt19937_64& rng);

}  // namespace mtr
