#pragma once

#include <limits>
#include <vector>

#include "mtrobust/common.hpp"
#include "mtrobust/dynamics.hpp"
#include "mtrobust/propagation.hpp"

namespace mtr {

struct AssumptionBounds {
  double alpha = 0.0;      // max ||A_t||_2, 1/s
  double beta = 1.0;       // max ||B_t||_2
  double H = 0.0;          // curvature bound over the tube
  double u_min_dag = 0.0;  // km/s^2
  double u_max_dag = 0.0;
  double f_min = 0.0;  // beta * u_min_dag
  double f_max = 0.0;  // beta * u_max_dag
  double tube_radius = 0.0;
  bool certifiable = true;

  static AssumptionBounds make(double alpha, double beta, double H, double u_min, double u_max);
  void validate() const;
};

enum class Branch { PositiveDelta, ZeroDelta, NegativeDelta };

const char* branch_name(Branch b);

struct SafeRadius {
  double delta_hat = 0.0;
  double delta = 0.0;
  bool unbounded = false;  // alpha = H = 0: remainder vanishes identically
};

struct Certificate {
  double epsilon = 0.05;
  double delta_hat = 0.0;
  double delta = 0.0;
  double discriminant = 0.0;
  Branch branch = Branch::PositiveDelta;
  double dtau_max = 0.0;
  double r_sat = 0.0;
  bool unbounded = false;
};

struct CertificateTriad {
  double delta_theoretical = 0.0;
  double delta_computed = 0.0;
  double dtau_theoretical = 0.0;
  double dtau_computed = 0.0;
  double dtau_actual = 0.0;
  bool degenerate = false;
  bool certified_beyond_outage = false;  // dtau_theoretical > dtau_actual
};

struct OutageWindow {
  double tau1 = 0.0;
  double tau2 = 0.0;
  double duration() const { return tau2 - tau1; }
};

struct BoundsOptions {
  int samples = 200;
  double epsilon = 0.05;
  CurvatureConvention convention = CurvatureConvention::Rigorous;
};

// Sampled bound constants (alpha, beta, H, control range) on the outage window, with the
// curvature bound taken over a tube fixed by one refinement of the safe radius.
AssumptionBounds extract_bounds(const PiecewiseTrajectory& ref, const OutageWindow& w,
                                const BoundsOptions& opt = {});

double discriminant(const AssumptionBounds& b);
Branch branch_of(const AssumptionBounds& b);

SafeRadius safe_radius(const AssumptionBounds& b, double epsilon);

// Solution of rho' = (H/2) rho^2 + alpha rho + f_max, rho(0) = 0.
double riccati_envelope(const AssumptionBounds& b, double t);
double envelope_blow_up_time(const AssumptionBounds& b);

// Closed-form inverse of the envelope.
double dtau_closed_form(const AssumptionBounds& b, double delta);

// Closed form refined by a bracketed root of rho_bar(t) - delta.
double max_missed_thrust_duration(const AssumptionBounds& b, double delta);

double linear_error_envelope(const AssumptionBounds& b, double t);

// NaN when alpha = 0.
double saturation_ratio(double delta, double f_min, double alpha);

Certificate make_certificate(const AssumptionBounds& b, double epsilon);

struct Realization {
  std::vector<double> t;
  std::vector<Vec6> x;
};

// Follows the reference to tau1, then coasts; sampled on `samples` + 1 uniform times.
Realization simulate_coasting(const PiecewiseTrajectory& ref, const OutageWindow& w, int samples);

CertificateTriad certificate_triad(const PiecewiseTrajectory& ref, const Realization& real,
                                   const OutageWindow& w, const AssumptionBounds& b,
                                   double epsilon);

struct SufficiencyCheck {
  int samples = 0;
  int violations = 0;
  double worst_ratio = 0.0;  // max ||r|| / ||A xi + B u||
  double horizon = 0.0;
};

// Relative-error condition of the linearization along the coasting realization over
// [tau1, tau1 + horizon].
SufficiencyCheck check_sufficiency(const PiecewiseTrajectory& ref, double tau1, double horizon,
                                   double epsilon, int samples);

}  // namespace mtr
