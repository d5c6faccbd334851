#pragma once

#include "mtrobust/common.hpp"
#include "mtrobust/propagation.hpp"

namespace mtr {

// Recovery: W = int Phi(tau2, t) B B^T Phi(tau2, t)^T dt, the Gramian whose inverse quadratic
// form is the minimum energy to steer xi(tau2) = xi_plus to xi(tau2 + T_rec) = 0.
// Forward: W = int Phi(t, tau2) B B^T Phi(t, tau2)^T dt.
enum class GramianConvention { Recovery, Forward };

struct GramianOptions {
  int intervals = 200;  // composite Simpson, rounded up to even
  GramianConvention convention = GramianConvention::Recovery;
};

Mat6 controllability_gramian(const PiecewiseTrajectory& ref, double tau2, double T_rec,
                             const GramianOptions& opt = {});

struct MinEnergy {
  double E_min = 0.0;
  double condition = 1.0;
  bool singular = false;
};

MinEnergy min_energy(const Mat6& W, const Vec6& xi_plus);

double available_energy(const Vec3& u_bar, double T_rec);

struct EnergyRatio {
  double r_e = 0.0;
  bool feasible = false;
  bool infinite_margin = false;
};

EnergyRatio energy_ratio(double E_avail, double E_min);

struct GramianReport {
  Mat6 W = Mat6::Zero();
  double eig_min = 0.0;
  double eig_max = 0.0;
  double E_min = 0.0;
  double E_avail = 0.0;
  double r_e = 0.0;
  bool feasible = false;
  bool infinite_margin = false;
  bool singular = false;
  double T_rec = 0.0;
  Vec6 xi_plus = Vec6::Zero();
};

GramianReport recovery_report(const PiecewiseTrajectory& ref, double tau2, double T_rec,
                              const Vec6& xi_plus, const Vec3& u_bar,
                              const GramianOptions& opt = {});

}  // namespace mtr
