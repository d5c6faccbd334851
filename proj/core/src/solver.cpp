#include "mtrobust/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <Eigen/SparseCholesky>

namespace mtr {

void SolveOptions::validate() const {
  if (!(constraint_tolerance > 0.0) || !(stationarity_tolerance > 0.0)) {
    throw Error(ErrorKind::Config, "solver tolerances must be positive");
  }
  if (!(penalty_growth > 1.0)) throw Error(ErrorKind::Config, "penalty growth must exceed 1");
  if (!(initial_penalty > 0.0)) throw Error(ErrorKind::Config, "initial penalty must be positive");
  if (max_outer_iterations < 1 || max_inner_iterations < 1) {
    throw Error(ErrorKind::Config, "iteration limits must be positive");
  }
  if (smoothing < 0.0) throw Error(ErrorKind::Config, "smoothing must be >= 0");
}

const char* status_name(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIter: return "max_iter";
    case SolveStatus::Diverged: return "diverged";
  }
  return "?";
}

SolveStatus status_from_name(const std::string& s) {
  if (s == "converged") return SolveStatus::Converged;
  if (s == "max_iter") return SolveStatus::MaxIter;
  if (s == "diverged") return SolveStatus::Diverged;
  throw Error(ErrorKind::Config, "unknown solve status '" + s + "'");
}

namespace {

Eigen::VectorXd scaled_violations(const NlpModel& p, const Eigen::VectorXd& c) {
  Eigen::VectorXd v = c.cwiseQuotient(p.row_scale());
  const auto& ineq = p.inequality();
  for (int i = 0; i < v.size(); ++i) v[i] = ineq[i] ? std::max(v[i], 0.0) : std::abs(v[i]);
  return v;
}

using SpMat = Eigen::SparseMatrix<double>;

// Augmented Lagrangian in scaled variables v = (z / var_scale, slacks).
class Merit {
 public:
  explicit Merit(const NlpModel& p) : p_(p) {
    n_ = p.num_vars();
    m_ = p.num_rows();
    const auto& ineq = p.inequality();
    slack_of_.assign(m_, -1);
    for (int i = 0; i < m_; ++i) {
      if (ineq[i]) slack_of_[i] = ns_++;
    }
    lo_.resize(n_ + ns_);
    hi_.resize(n_ + ns_);
    lo_.head(n_) = p.lower().cwiseQuotient(p.var_scale());
    hi_.head(n_) = p.upper().cwiseQuotient(p.var_scale());
    lo_.tail(ns_).setZero();
    hi_.tail(ns_).setConstant(std::numeric_limits<double>::infinity());
  }

  int size() const { return n_ + ns_; }
  const Eigen::VectorXd& lo() const { return lo_; }
  const Eigen::VectorXd& hi() const { return hi_; }

  Eigen::VectorXd to_z(const Eigen::VectorXd& v) const {
    return v.head(n_).cwiseProduct(p_.var_scale());
  }

  Eigen::VectorXd from_z(const Eigen::VectorXd& z) const {
    Eigen::VectorXd v(size());
    v.head(n_) = z.cwiseQuotient(p_.var_scale());
    const Eigen::VectorXd c = p_.constraints(z).cwiseQuotient(p_.row_scale());
    for (int i = 0; i < m_; ++i) {
      if (slack_of_[i] >= 0) v[n_ + slack_of_[i]] = std::max(-c[i], 0.0);
    }
    return project(v);
  }

  Eigen::VectorXd project(const Eigen::VectorXd& v) const { return v.cwiseMax(lo_).cwiseMin(hi_); }

  struct Point {
    Eigen::VectorXd v;
    Eigen::VectorXd h;  // scaled residual with slacks
    double f = 0.0;     // scaled objective
    double phi = 0.0;
    bool ok = false;
    // first-order data
    bool has_jac = false;
    SpMat J;
    Eigen::VectorXd g;
    Eigen::VectorXd gf;  // objective part of g
  };

  Point eval(const Eigen::VectorXd& v, const Eigen::VectorXd& lam, double rho, bool jac) const {
    Point pt;
    pt.v = v;
    const Eigen::VectorXd z = to_z(v);
    Eigen::VectorXd c;
    SpMat Jz;
    try {
      if (jac) {
        Jz = p_.jacobian(z, &c);
      } else {
        c = p_.constraints(z);
      }
    } catch (const Error&) {
      return pt;
    }
    pt.h = c.cwiseQuotient(p_.row_scale());
    for (int i = 0; i < m_; ++i) {
      if (slack_of_[i] >= 0) pt.h[i] += v[n_ + slack_of_[i]];
    }
    pt.f = p_.objective(z) / p_.objective_scale();
    pt.phi = pt.f + lam.dot(pt.h) + 0.5 * rho * pt.h.squaredNorm();
    pt.ok = std::isfinite(pt.phi) && pt.h.allFinite();
    if (!pt.ok || !jac) return pt;

    std::vector<Eigen::Triplet<double>> t;
    t.reserve(Jz.nonZeros() + ns_);
    const Eigen::VectorXd& rs = p_.row_scale();
    const Eigen::VectorXd& xs = p_.var_scale();
    for (int k = 0; k < Jz.outerSize(); ++k) {
      for (SpMat::InnerIterator it(Jz, k); it; ++it) {
        t.emplace_back(it.row(), it.col(), it.value() * xs[it.col()] / rs[it.row()]);
      }
    }
    for (int i = 0; i < m_; ++i) {
      if (slack_of_[i] >= 0) t.emplace_back(i, n_ + slack_of_[i], 1.0);
    }
    pt.J.resize(m_, size());
    pt.J.setFromTriplets(t.begin(), t.end());
    pt.g = Eigen::VectorXd::Zero(size());
    pt.g.head(n_) = p_.objective_gradient(z).cwiseProduct(xs) / p_.objective_scale();
    pt.gf = pt.g;
    pt.g += pt.J.transpose() * (lam + rho * pt.h);
    pt.has_jac = true;
    return pt;
  }

  // Scaled Hessian of f + w^T h, w in scaled rows. The slack part is linear.
  SpMat lagrangian_hessian(const Eigen::VectorXd& v, const Eigen::VectorXd& w,
                           bool constraint_part) const {
    const Eigen::VectorXd z = to_z(v);
    const Eigen::VectorXd& xs = p_.var_scale();
    std::vector<Eigen::Triplet<double>> t;
    auto add = [&](const SpMat& Hz, double f) {
      for (int k = 0; k < Hz.outerSize(); ++k) {
        for (SpMat::InnerIterator it(Hz, k); it; ++it) {
          t.emplace_back(it.row(), it.col(), f * it.value() * xs[it.row()] * xs[it.col()]);
        }
      }
    };
    add(p_.objective_hessian(z), 1.0 / p_.objective_scale());
    if (constraint_part) add(p_.lagrangian_hessian(z, w.cwiseQuotient(p_.row_scale())), 1.0);
    SpMat H(size(), size());
    H.setFromTriplets(t.begin(), t.end());
    return H;
  }

  Eigen::VectorXd projected_gradient(const Eigen::VectorXd& v, const Eigen::VectorXd& g) const {
    return project(v - g) - v;
  }

  // First-order residual with least-squares multipliers, independent of (lam, rho). Variables
  // on a bound stay out of the fit while their residual points outward.
  double kkt_residual(const Point& pt) const {
    const int n = size();
    const int m = static_cast<int>(pt.J.rows());
    std::vector<char> bound(n, 0);
    for (int i = 0; i < n; ++i) bound[i] = pt.v[i] <= lo_[i] || pt.v[i] >= hi_[i];
    Eigen::VectorXd r = pt.gf;
    Eigen::SimplicialLDLT<SpMat> ldlt;
    for (int pass = 0; pass < 6; ++pass) {
      std::vector<Eigen::Triplet<double>> t;
      t.reserve(n + m + pt.J.nonZeros());
      for (int i = 0; i < n; ++i) t.emplace_back(i, i, 1.0);
      for (int k = 0; k < pt.J.outerSize(); ++k) {
        for (SpMat::InnerIterator e(pt.J, k); e; ++e) {
          if (!bound[e.col()]) t.emplace_back(n + e.row(), e.col(), e.value());
        }
      }
      for (int i = 0; i < m; ++i) t.emplace_back(n + i, n + i, -1e-12);
      SpMat K(n + m, n + m);
      K.setFromTriplets(t.begin(), t.end());
      ldlt.compute(K);
      if (ldlt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + m);
      for (int i = 0; i < n; ++i) rhs[i] = bound[i] ? 0.0 : pt.gf[i];
      const Eigen::VectorXd y = -ldlt.solve(rhs).tail(m);
      r = pt.gf + pt.J.transpose() * y;
      bool changed = false;
      for (int i = 0; i < n; ++i) {
        if (!bound[i]) continue;
        if ((pt.v[i] <= lo_[i] && r[i] < 0.0) || (pt.v[i] >= hi_[i] && r[i] > 0.0)) {
          bound[i] = 0;
          changed = true;
        }
      }
      if (!changed) break;
    }
    return projected_gradient(pt.v, r).lpNorm<Eigen::Infinity>();
  }

 private:
  const NlpModel& p_;
  int n_ = 0;
  int m_ = 0;
  int ns_ = 0;
  std::vector<int> slack_of_;
  Eigen::VectorXd lo_, hi_;
};

struct InnerResult {
  Merit::Point pt;
  int iterations = 0;
  double pg = 0.0;
  bool failed = false;
};

// Damped Newton on the merit function with a primal active set for the box. The step
// keeps every iterate inside the box: variables on a bound whose Newton component points
// outward are held, and the step is cut at the first bound it reaches.
InnerResult minimize_inner(const Merit& M, Merit::Point pt, const Eigen::VectorXd& lam,
                           double rho, double omega, int max_iter, double curvature_switch) {
  InnerResult r;
  const int n = M.size();
  const Eigen::VectorXd& lo = M.lo();
  const Eigen::VectorXd& hi = M.hi();
  double mu = 1e-8;
  int stalls = 0;
  Eigen::SimplicialLDLT<SpMat> ldlt;

  auto at_lower = [&](int i, const Eigen::VectorXd& v) { return v[i] <= lo[i]; };
  auto at_upper = [&](int i, const Eigen::VectorXd& v) { return v[i] >= hi[i]; };

  for (int it = 0; it < max_iter; ++it) {
    r.pg = M.projected_gradient(pt.v, pt.g).lpNorm<Eigen::Infinity>();
    if (r.pg <= omega) break;

    SpMat H;
    try {
      // constraint curvature only pays off near feasibility
      const bool second = pt.h.lpNorm<Eigen::Infinity>() <= curvature_switch;
      H = M.lagrangian_hessian(pt.v, lam + rho * pt.h, second);
    } catch (const Error&) {
      break;
    }
    const int m = static_cast<int>(pt.J.rows());

    std::vector<char> fixed(n, 0);
    for (int i = 0; i < n; ++i) {
      fixed[i] = (at_lower(i, pt.v) && pt.g[i] >= 0.0) || (at_upper(i, pt.v) && pt.g[i] <= 0.0);
    }

    // Newton step on phi in augmented form [H J^T; J -I/rho], which stays well conditioned
    // as rho grows; inertia (n, m) certifies that H + rho J^T J is positive definite.
    auto newton = [&](Eigen::VectorXd& d) {
      std::vector<Eigen::Triplet<double>> base;
      base.reserve(H.nonZeros() + 2 * pt.J.nonZeros() + n + m);
      for (int k = 0; k < H.outerSize(); ++k) {
        for (SpMat::InnerIterator e(H, k); e; ++e) {
          if (!fixed[e.row()] && !fixed[e.col()]) base.emplace_back(e.row(), e.col(), e.value());
        }
      }
      for (int k = 0; k < pt.J.outerSize(); ++k) {
        for (SpMat::InnerIterator e(pt.J, k); e; ++e) {
          if (fixed[e.col()]) continue;
          base.emplace_back(n + e.row(), e.col(), e.value());
          base.emplace_back(e.col(), n + e.row(), e.value());
        }
      }
      for (int i = 0; i < m; ++i) base.emplace_back(n + i, n + i, -1.0 / rho);
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + m);
      for (int i = 0; i < n; ++i) rhs[i] = fixed[i] ? 0.0 : -pt.g[i];
      while (mu <= 1e12) {
        std::vector<Eigen::Triplet<double>> t = base;
        for (int i = 0; i < n; ++i) t.emplace_back(i, i, fixed[i] ? 1.0 : mu);
        SpMat K(n + m, n + m);
        K.setFromTriplets(t.begin(), t.end());
        ldlt.compute(K);
        if (ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0.0).count() == n &&
            (ldlt.vectorD().array() < 0.0).count() == m) {
          d = ldlt.solve(rhs).head(n);
          if (d.allFinite()) return true;
        }
        mu = std::max(mu * 10.0, 1e-8);
      }
      return false;
    };

    Eigen::VectorXd d;
    bool ok = false;
    for (int pass = 0; pass < 8; ++pass) {
      ok = newton(d);
      if (!ok) break;
      bool changed = false;
      for (int i = 0; i < n; ++i) {
        if (fixed[i]) continue;
        if ((at_lower(i, pt.v) && d[i] < 0.0) || (at_upper(i, pt.v) && d[i] > 0.0)) {
          fixed[i] = 1;
          changed = true;
        }
      }
      if (!changed) break;
    }
    if (!ok) break;
    for (int i = 0; i < n; ++i) {
      if (fixed[i]) d[i] = 0.0;
    }
    const double slope = pt.g.dot(d);
    if (!(slope < 0.0)) break;

    double amax = 1.0;
    int blocking = -1;
    for (int i = 0; i < n; ++i) {
      double a = std::numeric_limits<double>::infinity();
      if (d[i] < 0.0) a = (lo[i] - pt.v[i]) / d[i];
      if (d[i] > 0.0) a = (hi[i] - pt.v[i]) / d[i];
      if (a < amax) {
        amax = a;
        blocking = i;
      }
    }
    auto trial_point = [&](double alpha) {
      Eigen::VectorXd vn = M.project(pt.v + alpha * d);
      if (alpha == amax && blocking >= 0) vn[blocking] = d[blocking] < 0.0 ? lo[blocking] : hi[blocking];
      return vn;
    };

    bool stepped = false;
    const double phi0 = pt.phi;
    double alpha = amax;
    while (alpha >= 1e-12 * amax && alpha > 0.0) {
      Merit::Point trial = M.eval(trial_point(alpha), lam, rho, false);
      if (trial.ok && trial.phi <= pt.phi + 1e-4 * alpha * slope) {
        trial = M.eval(trial.v, lam, rho, true);
        if (trial.ok) {
          pt = std::move(trial);
          stepped = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!stepped) {
      // Near the noise floor of phi the decrease test is meaningless; take the longest
      // step when it changes phi only at roundoff level and halves the projected gradient.
      Merit::Point trial = M.eval(trial_point(amax), lam, rho, true);
      if (trial.ok && std::abs(trial.phi - pt.phi) <= 1e-11 * std::max(1.0, std::abs(pt.phi)) &&
          M.projected_gradient(trial.v, trial.g).lpNorm<Eigen::Infinity>() <= 0.5 * r.pg) {
        pt = std::move(trial);
        stepped = true;
        alpha = amax;
      }
    }
    ++r.iterations;
    if (!stepped) {
      mu = std::max(mu * 100.0, 1e-6);
      if (mu > 1e12) break;
      ++stalls;
      if (stalls >= 5) break;
      continue;
    }
    if (alpha == amax) mu = std::max(mu * 0.1, 1e-12);
    const bool better = pt.phi < phi0 ||
                        M.projected_gradient(pt.v, pt.g).lpNorm<Eigen::Infinity>() < 0.9 * r.pg;
    stalls = better ? 0 : stalls + 1;
    if (stalls >= 5) break;
  }
  r.pg = M.projected_gradient(pt.v, pt.g).lpNorm<Eigen::Infinity>();
  r.pt = std::move(pt);
  return r;
}

}  // namespace

double max_violation(const NlpModel& p, const Eigen::VectorXd& z) {
  const Eigen::VectorXd v = scaled_violations(p, p.constraints(z));
  return v.size() ? v.maxCoeff() : 0.0;
}

std::vector<std::pair<std::string, double>> worst_rows(const NlpModel& p,
                                                       const Eigen::VectorXd& z, int k) {
  Eigen::VectorXd v;
  try {
    v = scaled_violations(p, p.constraints(z));
  } catch (const Error& e) {
    return {{e.what(), std::numeric_limits<double>::infinity()}};
  }
  std::vector<int> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min<int>(k, v.size());
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [&](int a, int b) { return v[a] > v[b]; });
  std::vector<std::pair<std::string, double>> out;
  for (int i = 0; i < k; ++i) out.emplace_back(p.row_label(idx[i]), v[idx[i]]);
  return out;
}

SolveResult solve(const NlpModel& p, const Eigen::VectorXd& z0, const SolveOptions& opts) {
  opts.validate();
  if (z0.size() != p.num_vars()) throw Error(ErrorKind::InvalidInput, "solve: bad z0 size");
  const auto start = std::chrono::steady_clock::now();
  const Merit M(p);
  SolveResult res;
  SolveReport& rep = res.report;

  Eigen::VectorXd lam = Eigen::VectorXd::Zero(p.num_rows());
  double rho = opts.initial_penalty;
  const double omega = 0.5 * opts.stationarity_tolerance;
  double last_accepted = std::numeric_limits<double>::infinity();

  Eigen::VectorXd v0;
  try {
    v0 = M.from_z(z0);
  } catch (const Error& e) {
    rep.status = SolveStatus::Diverged;
    rep.message = std::string("initial point: ") + e.what();
    res.z = z0;
    res.multipliers = lam;
    return res;
  }
  Merit::Point pt = M.eval(v0, lam, rho, true);
  rep.status = SolveStatus::MaxIter;
  if (!pt.ok) {
    rep.status = SolveStatus::Diverged;
    rep.message = "non-finite evaluation at the initial point";
  }

  for (int k = 0; k < opts.max_outer_iterations && rep.status == SolveStatus::MaxIter; ++k) {
    ++rep.outer_iterations;
    InnerResult in = minimize_inner(M, std::move(pt), lam, rho, omega,
                                    opts.max_inner_iterations, opts.curvature_switch);
    rep.inner_iterations += in.iterations;
    pt = std::move(in.pt);
    const double hv = pt.h.lpNorm<Eigen::Infinity>();
    if (opts.trace) {
      std::fprintf(stderr, "outer %3d rho %.1e |h| %.3e pg %.3e inner %4d |lam| %.3e f %.6e\n",
                   k, rho, hv, in.pg, in.iterations, lam.lpNorm<Eigen::Infinity>(), pt.f);
    }
    // accepted iterates halve the violation; otherwise the penalty grows
    const bool feasible = hv <= opts.constraint_tolerance;
    if (feasible || hv <= 0.5 * last_accepted) {
      lam += rho * pt.h;
      // a feasible iterate above the last accepted one updates the multipliers only
      if (hv <= last_accepted) {
        last_accepted = hv;
        rep.accepted_violations.push_back(hv);
      }
      const double viol = max_violation(p, M.to_z(pt.v));
      if (viol <= opts.constraint_tolerance) {
        // at large rho the merit gradient sits on a noise floor of order rho * eps * |J|
        const double stat = std::min(in.pg, M.kkt_residual(pt));
        if (stat <= opts.stationarity_tolerance) {
          rep.status = SolveStatus::Converged;
          rep.stationarity = stat;
          break;
        }
      }
    } else {
      rho *= opts.penalty_growth;
      if (rho > opts.max_penalty) {
        rep.status = SolveStatus::Diverged;
        rep.message = "penalty exceeded its maximum";
        break;
      }
    }
    // the gradient depends on (lam, rho)
    pt = M.eval(pt.v, lam, rho, true);
    if (!pt.ok) {
      rep.status = SolveStatus::Diverged;
      rep.message = "non-finite evaluation";
      break;
    }
  }
  if (rep.status != SolveStatus::Converged && pt.ok && pt.has_jac) {
    rep.stationarity = std::min(M.projected_gradient(pt.v, pt.g).lpNorm<Eigen::Infinity>(),
                                M.kkt_residual(pt));
  }

  res.z = M.to_z(pt.v);
  res.multipliers = lam;
  rep.penalty = rho;
  rep.objective = p.objective(res.z, false);
  try {
    rep.max_violation = max_violation(p, res.z);
  } catch (const Error& e) {
    rep.max_violation = std::numeric_limits<double>::infinity();
    rep.message = e.what();
  }
  if (rep.status == SolveStatus::Converged &&
      !(rep.max_violation <= opts.constraint_tolerance &&
        rep.stationarity <= opts.stationarity_tolerance)) {
    rep.status = SolveStatus::MaxIter;
  }
  if (rep.status != SolveStatus::Converged) rep.worst_rows = worst_rows(p, res.z);
  rep.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

TranscribedNlp::TranscribedNlp(const NlpProblem& p, double smoothing) : p_(p), sm_(smoothing) {
  if (smoothing < 0.0) throw Error(ErrorKind::Config, "smoothing must be >= 0");
}

int TranscribedNlp::num_vars() const { return p_.num_vars(); }
int TranscribedNlp::num_rows() const { return p_.num_rows(); }
const Eigen::VectorXd& TranscribedNlp::lower() const { return p_.lower(); }
const Eigen::VectorXd& TranscribedNlp::upper() const { return p_.upper(); }
const Eigen::VectorXd& TranscribedNlp::var_scale() const { return p_.var_scale(); }
const Eigen::VectorXd& TranscribedNlp::row_scale() const { return p_.row_scale(); }
const std::vector<char>& TranscribedNlp::inequality() const { return p_.inequality(); }
double TranscribedNlp::objective_scale() const { return p_.objective_scale(); }

double TranscribedNlp::objective(const Eigen::VectorXd& z, bool smooth) const {
  return p_.objective(z, smooth ? sm_ : 0.0);
}

Eigen::VectorXd TranscribedNlp::objective_gradient(const Eigen::VectorXd& z) const {
  return p_.objective_gradient(z, sm_);
}

Eigen::SparseMatrix<double> TranscribedNlp::objective_hessian(const Eigen::VectorXd& z) const {
  return p_.objective_hessian(z, sm_);
}

Eigen::VectorXd TranscribedNlp::constraints(const Eigen::VectorXd& z) const {
  return p_.constraints(z);
}

Eigen::SparseMatrix<double> TranscribedNlp::jacobian(const Eigen::VectorXd& z,
                                                     Eigen::VectorXd* c) const {
  return p_.jacobian(z, c);
}

Eigen::SparseMatrix<double> TranscribedNlp::lagrangian_hessian(const Eigen::VectorXd& z,
                                                               const Eigen::VectorXd& w) const {
  return p_.lagrangian_hessian(z, w);
}

std::string TranscribedNlp::row_label(int row) const { return p_.row_label(row); }

double max_violation(const NlpProblem& p, const Eigen::VectorXd& z) {
  return max_violation(TranscribedNlp(p), z);
}

std::vector<std::pair<std::string, double>> worst_rows(const NlpProblem& p,
                                                       const Eigen::VectorXd& z, int k) {
  return worst_rows(TranscribedNlp(p), z, k);
}

SolveResult solve(const NlpProblem& p, const Eigen::VectorXd& z0, const SolveOptions& opts) {
  opts.validate();
  return solve(TranscribedNlp(p, opts.smoothing), z0, opts);
}

DecisionVector initialize(const NlpProblem& p, std::mt19937_64& rng) {
  const TranscriptionConfig& cfg = p.config();
  std::uniform_real_distribution<double> U(-cfg.u_max, cfg.u_max);
  std::uniform_real_distribution<double> T(cfg.t_min, cfg.t_max);
  std::vector<Vec3> u(cfg.n_dag);
  for (Vec3& x : u) {
    for (int i = 0; i < 3; ++i) x[i] = U(rng);
  }
  return p.simulate(T(rng), u);
}

}  // namespace mtr
