#include "mtrobust/recovery.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace mtr {

Mat6 controllability_gramian(const PiecewiseTrajectory& ref, double tau2, double T_rec,
                             const GramianOptions& opt) {
  if (!(T_rec >= 0.0)) throw Error(ErrorKind::InvalidInput, "T_rec must be nonnegative");
  const double tol = 1e-9 * std::max(1.0, ref.t_end());
  if (tau2 < ref.t0 - tol || tau2 + T_rec > ref.t_end() + tol)
    throw Error(ErrorKind::Domain, "reference does not cover the recovery interval");
  if (T_rec == 0.0) return Mat6::Zero();
  int n = std::max(2, opt.intervals);
  if (n % 2) ++n;
  std::vector<double> times(n + 1);
  for (int i = 0; i <= n; ++i) times[i] = tau2 + T_rec * i / n;
  const StmSamples s = sample_with_stm(ref, ref.state_at(tau2), tau2, times);
  const double h = T_rec / n;
  Mat6 W = Mat6::Zero();
  for (int i = 0; i <= n; ++i) {
    const Mat6 P = opt.convention == GramianConvention::Recovery ? Mat6(s.phi[i].inverse())
                                                                 : s.phi[i];
    const Mat63 PB = P.rightCols<3>();
    const double wgt = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    W.noalias() += (wgt * h / 3.0) * (PB * PB.transpose());
  }
  return 0.5 * (W + W.transpose());
}

MinEnergy min_energy(const Mat6& W, const Vec6& xi_plus) {
  MinEnergy r;
  if (xi_plus.isZero(0.0)) return r;
  Eigen::SelfAdjointEigenSolver<Mat6> es(W);
  const Vec6 ev = es.eigenvalues();
  const double lmax = ev.cwiseAbs().maxCoeff();
  const double lmin = ev.minCoeff();
  r.condition = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
  r.singular = !(r.condition <= 1e12);
  if (!r.singular) {
    Eigen::LLT<Mat6> llt(W);
    if (llt.info() == Eigen::Success) {
      r.E_min = xi_plus.dot(llt.solve(xi_plus));
      return r;
    }
    r.singular = true;
  }
  // Pseudo-inverse on the numerically significant eigenspace.
  const Mat6 V = es.eigenvectors();
  const Vec6 c = V.transpose() * xi_plus;
  const double cut = 1e-12 * lmax;
  double null_part = 0.0;
  for (int i = 0; i < 6; ++i) {
    if (ev[i] > cut) {
      r.E_min += c[i] * c[i] / ev[i];
    } else {
      null_part += c[i] * c[i];
    }
  }
  if (std::sqrt(null_part) > 1e-8 * xi_plus.norm())
    throw Error(ErrorKind::InfeasibleRecovery, "deviation outside the range of a singular Gramian");
  return r;
}

double available_energy(const Vec3& u_bar, double T_rec) {
  if ((u_bar.array() < 0.0).any()) throw Error(ErrorKind::InvalidInput, "u_bar must be >= 0");
  return T_rec * u_bar.squaredNorm();
}

EnergyRatio energy_ratio(double E_avail, double E_min) {
  EnergyRatio r;
  if (E_min == 0.0) {
    r.r_e = std::numeric_limits<double>::infinity();
    r.feasible = true;
    r.infinite_margin = true;
    return r;
  }
  r.r_e = E_avail / E_min;
  r.feasible = r.r_e >= 1.0;
  return r;
}

GramianReport recovery_report(const PiecewiseTrajectory& ref, double tau2, double T_rec,
                              const Vec6& xi_plus, const Vec3& u_bar, const GramianOptions& opt) {
  GramianReport g;
  g.T_rec = T_rec;
  g.xi_plus = xi_plus;
  g.W = controllability_gramian(ref, tau2, T_rec, opt);
  Eigen::SelfAdjointEigenSolver<Mat6> es(g.W, Eigen::EigenvaluesOnly);
  g.eig_min = es.eigenvalues().minCoeff();
  g.eig_max = es.eigenvalues().maxCoeff();
  const MinEnergy e = min_energy(g.W, xi_plus);
  g.E_min = e.E_min;
  g.singular = e.singular;
  g.E_avail = available_energy(u_bar, T_rec);
  const EnergyRatio r = energy_ratio(g.E_avail, g.E_min);
  g.r_e = r.r_e;
  g.feasible = r.feasible;
  g.infinite_margin = r.infinite_margin;
  return g;
}

}  // namespace mtr
