#include "mtrobust/transcription.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>

#include <Eigen/Eigenvalues>

#include "mtrobust/dual.hpp"
#include "mtrobust/propagation.hpp"

namespace mtr {

MteScenario MteScenario::range(int first, int last) {
  if (last < first) throw Error(ErrorKind::Config, "outage range: last index below first");
  MteScenario s;
  for (int k = first; k <= last; ++k) s.segments.push_back(k);
  return s;
}

int MteScenario::first() const {
  if (empty()) throw Error(ErrorKind::InvalidInput, "outage set is empty");
  return segments.front();
}

int MteScenario::last() const {
  if (empty()) throw Error(ErrorKind::InvalidInput, "outage set is empty");
  return segments.back();
}

bool MteScenario::contains(int k) const {
  return !empty() && k >= segments.front() && k <= segments.back();
}

double MteScenario::tau1(double T_om, int n_om) const {
  return empty() ? T_om : segments.front() * T_om / n_om;
}

double MteScenario::dtau(double T_om, int n_om) const { return count() * T_om / n_om; }

void MteScenario::validate(int n_om) const {
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const int k = segments[i];
    if (k < 0 || k >= n_om) {
      throw Error(ErrorKind::Config, "outage segment " + std::to_string(k) +
                                         " outside follower grid of " + std::to_string(n_om));
    }
    if (i > 0 && k != segments[i - 1] + 1) {
      throw Error(ErrorKind::Config, "outage segments must be contiguous and increasing");
    }
  }
}

int segment_map(int k_om, int n_om, int n_dag, double T_om, double T_dag) {
  if (n_om < 1 || n_dag < 1 || k_om < 0 || k_om >= n_om) {
    throw Error(ErrorKind::InvalidInput, "segment_map: index out of range");
  }
  if (!(T_om > 0.0) || !(T_dag > 0.0)) {
    throw Error(ErrorKind::InvalidInput, "segment_map: flight times must be positive");
  }
  // leader midpoints sit at j + 1/2 in units of the leader step
  const double x = (k_om + 0.5) * (T_om / n_om) / (T_dag / n_dag) - 0.5;
  const int j = static_cast<int>(std::ceil(x - 0.5 - 1e-9));
  return std::clamp(j, 0, n_dag - 1);
}

int adaptive_segments(int mte_count, int n_dag, std::optional<int> override_n) {
  const int n = override_n ? *override_n : n_dag - mte_count;
  if (n < 1) {
    throw Error(ErrorKind::Config,
                "follower segment count must be positive, got " + std::to_string(n));
  }
  return n;
}

VariableLayout DecisionVector::layout() const {
  VariableLayout l;
  l.n_dag = static_cast<int>(U_dag.size());
  l.n_om = static_cast<int>(U_om.size());
  l.follower = !X_om.empty();
  return l;
}

Eigen::VectorXd DecisionVector::pack() const {
  const VariableLayout l = layout();
  if (static_cast<int>(X_dag.size()) != l.n_dag + 1) {
    throw Error(ErrorKind::InvalidInput, "pack: leader state count mismatch");
  }
  Eigen::VectorXd z(l.size());
  z[l.t_dag()] = T_dag;
  for (int k = 0; k <= l.n_dag; ++k) z.segment<6>(l.x_dag(k)) = X_dag[k];
  for (int k = 0; k < l.n_dag; ++k) z.segment<3>(l.u_dag(k)) = U_dag[k];
  if (!l.follower) return z;
  if (static_cast<int>(X_om.size()) != l.n_om + 1 ||
      static_cast<int>(L_om.size()) != l.n_om + 1) {
    throw Error(ErrorKind::InvalidInput, "pack: follower vector sizes mismatch");
  }
  z[l.t_om()] = T_om;
  for (int k = 0; k <= l.n_om; ++k) z.segment<6>(l.x_om(k)) = X_om[k];
  for (int k = 0; k < l.n_om; ++k) z.segment<3>(l.u_om(k)) = U_om[k];
  for (int k = 0; k <= l.n_om; ++k) z.segment<6>(l.lam(k)) = L_om[k];
  return z;
}

DecisionVector DecisionVector::unpack(const Eigen::VectorXd& z, const VariableLayout& l) {
  if (z.size() != l.size()) {
    throw Error(ErrorKind::InvalidInput, "unpack: expected " + std::to_string(l.size()) +
                                             " entries, got " + std::to_string(z.size()));
  }
  DecisionVector dv;
  dv.T_dag = z[l.t_dag()];
  for (int k = 0; k <= l.n_dag; ++k) dv.X_dag.push_back(z.segment<6>(l.x_dag(k)));
  for (int k = 0; k < l.n_dag; ++k) dv.U_dag.push_back(z.segment<3>(l.u_dag(k)));
  if (!l.follower) return dv;
  dv.T_om = z[l.t_om()];
  for (int k = 0; k <= l.n_om; ++k) dv.X_om.push_back(z.segment<6>(l.x_om(k)));
  for (int k = 0; k < l.n_om; ++k) dv.U_om.push_back(z.segment<3>(l.u_om(k)));
  for (int k = 0; k <= l.n_om; ++k) dv.L_om.push_back(z.segment<6>(l.lam(k)));
  return dv;
}

const char* family_name(RowFamily f) {
  switch (f) {
    case RowFamily::LeaderInitial: return "leader_initial";
    case RowFamily::LeaderContinuity: return "leader_continuity";
    case RowFamily::LeaderTerminal: return "leader_terminal";
    case RowFamily::FlightTime: return "flight_time";
    case RowFamily::Branch: return "branch";
    case RowFamily::PrePin: return "pre_outage_control";
    case RowFamily::CostatePin: return "costate_pin";
    case RowFamily::FollowerContinuity: return "follower_continuity";
    case RowFamily::FollowerTerminal: return "follower_terminal";
    case RowFamily::Mte: return "missed_thrust";
    case RowFamily::Stationarity: return "stationarity";
    case RowFamily::Costate: return "costate";
    case RowFamily::Transversality: return "transversality";
    case RowFamily::Obstacle: return "obstacle";
  }
  return "unknown";
}

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

template <class S>
S node_time(const S& T, int k, int n) {
  return T * (static_cast<double>(k) / n);
}

template <class S>
Vec6T<S> load6(const S* v) {
  Vec6T<S> x;
  for (int i = 0; i < 6; ++i) x[i] = v[i];
  return x;
}

template <class S>
Vec3T<S> load3(const S* v) {
  return Vec3T<S>(v[0], v[1], v[2]);
}

template <class S>
Vec6T<S> flow_segment(const OrbitModel& m, const Vec6T<S>& x, const Vec3T<S>& u, const S& t0,
                      const S& t1, int steps) {
  const S nu0 = anomaly_at(m, t0);
  if (value_of(t1) == value_of(t0)) {
    // zero-length flow, keep the time derivative
    return x + (t1 - t0) * field(m, nu0, x, u);
  }
  return rk4_flow_from(m, x, u, nu0, t0, t1, steps);
}

// x_{k+1} - F(x_k, u_k). Vars: x_k(6) u_k(3) x_{k+1}(6) T(1).
struct ContinuityF {
  const OrbitModel* m;
  int k, n, steps;

  template <class S>
  void operator()(const S* v, S* out) const {
    const S& T = v[15];
    const Vec6T<S> xe = flow_segment(*m, load6(v), load3(v + 6), node_time(T, k, n),
                                     node_time(T, k + 1, n), steps);
    for (int i = 0; i < 6; ++i) out[i] = v[9 + i] - xe[i];
  }
};

// Leader state at a follower node by a partial flow of leader segment j.
template <class S>
Vec6T<S> leader_at_node(const OrbitModel& m, const S* xj, const S* uj, const S& T_dag,
                        const S& T_om, int j, int n_dag, int k, int n_om, int steps) {
  return flow_segment(m, load6(xj), load3(uj), node_time(T_dag, j, n_dag),
                      node_time(T_om, k, n_om), steps);
}

// W (X_k - xi_dag(t_k)). Vars: X_k(6) X_dag_j(6) U_dag_j(3) T_dag T_om.
struct DeviationF {
  const OrbitModel* m;
  Mat6 W;
  int j, n_dag, k, n_om, steps;

  template <class S>
  void operator()(const S* v, S* out) const {
    const Vec6T<S> ref = leader_at_node(*m, v + 6, v + 12, v[15], v[16], j, n_dag, k, n_om, steps);
    const Vec6T<S> d = load6(v) - ref;
    const Vec6T<S> r = W.cast<S>() * d;
    for (int i = 0; i < 6; ++i) out[i] = r[i];
  }
};

// Phi_k^T Lambda_{k+1}. Vars: X_k(6) U_k(3) T(1) Lambda_{k+1}(6).
struct AdjointF {
  const OrbitModel* m;
  int k, n, steps;

  template <class S>
  void operator()(const S* v, S* out) const {
    const S& T = v[9];
    const S t0 = node_time(T, k, n);
    Eigen::Matrix<S, 6, 6> P = Eigen::Matrix<S, 6, 6>::Identity();
    rk4_flow_sens<S, 6>(*m, load6(v), load3(v + 6), anomaly_at(*m, t0), t0,
                        node_time(T, k + 1, n), steps, P, -1);
    const Vec6T<S> r = P.transpose() * load6(v + 10);
    for (int i = 0; i < 6; ++i) out[i] = r[i];
  }
};

// G_k^T Lambda_{k+1}, G the control sensitivity. Same vars as AdjointF.
struct ControlAdjointF {
  const OrbitModel* m;
  int k, n, steps;

  template <class S>
  void operator()(const S* v, S* out) const {
    const S& T = v[9];
    const S t0 = node_time(T, k, n);
    Eigen::Matrix<S, 6, 3> G = Eigen::Matrix<S, 6, 3>::Zero();
    rk4_flow_sens<S, 3>(*m, load6(v), load3(v + 6), anomaly_at(*m, t0), t0,
                        node_time(T, k + 1, n), steps, G, 0);
    const Vec3T<S> r = G.transpose() * load6(v + 10);
    for (int i = 0; i < 3; ++i) out[i] = r[i];
  }
};

// R_j - |p - c|. Vars: position(3).
struct ObstacleF {
  Vec3 c;
  double radius;

  template <class S>
  void operator()(const S* v, S* out) const {
    S d2(0.0);
    for (int i = 0; i < 3; ++i) d2 += (v[i] - c[i]) * (v[i] - c[i]);
    if (value_of(d2) == 0.0) {
      out[0] = S(radius);
      return;
    }
    using std::sqrt;
    out[0] = radius - sqrt(d2);
  }
};

struct Block {
  int row0 = 0;
  int nrows = 0;
  virtual ~Block() = default;
  virtual void eval(const Eigen::VectorXd& z, Eigen::VectorXd& c) const = 0;
  virtual void jac(const Eigen::VectorXd& z, Eigen::VectorXd& c, Triplets& t) const = 0;
  virtual void pattern(std::vector<std::pair<int, int>>& out) const = 0;
  // Hessian of sum_r w[row0 + r] c_r, affine blocks contribute nothing.
  virtual void hess(const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::VectorXd&,
                    Triplets&) const {}
};

template <int NV, int NR, class F>
struct DualBlock final : Block {
  std::array<int, NV> vars;
  F f;

  DualBlock(int r0, const std::array<int, NV>& v, const F& fn) : vars(v), f(fn) {
    row0 = r0;
    nrows = NR;
  }

  void eval(const Eigen::VectorXd& z, Eigen::VectorXd& c) const override {
    std::array<double, NV> v;
    for (int i = 0; i < NV; ++i) v[i] = z[vars[i]];
    std::array<double, NR> out{};
    f(v.data(), out.data());
    for (int r = 0; r < NR; ++r) c[row0 + r] += out[r];
  }

  void jac(const Eigen::VectorXd& z, Eigen::VectorXd& c, Triplets& t) const override {
    using D = Dual<NV>;
    std::array<D, NV> v;
    for (int i = 0; i < NV; ++i) v[i] = D::variable(z[vars[i]], i);
    std::array<D, NR> out;
    f(v.data(), out.data());
    for (int r = 0; r < NR; ++r) {
      c[row0 + r] += out[r].v;
      for (int i = 0; i < NV; ++i) t.emplace_back(row0 + r, vars[i], out[r].d[i]);
    }
  }

  void pattern(std::vector<std::pair<int, int>>& out) const override {
    for (int r = 0; r < NR; ++r) {
      for (int i = 0; i < NV; ++i) out.emplace_back(row0 + r, vars[i]);
    }
  }

  // Central differences of the exact weighted gradient, steps relative to the variable scale.
  void hess(const Eigen::VectorXd& z, const Eigen::VectorXd& w, const Eigen::VectorXd& xs,
            Triplets& t) const override {
    using D = Dual<NV>;
    using G = Eigen::Matrix<double, NV, 1>;
    bool any = false;
    for (int r = 0; r < NR; ++r) any = any || w[row0 + r] != 0.0;
    if (!any) return;
    auto grad = [&](int k, double step) {
      std::array<D, NV> v;
      for (int i = 0; i < NV; ++i) v[i] = D::variable(z[vars[i]] + (i == k ? step : 0.0), i);
      std::array<D, NR> out;
      f(v.data(), out.data());
      G g = G::Zero();
      for (int r = 0; r < NR; ++r) g += w[row0 + r] * out[r].d;
      return g;
    };
    Eigen::Matrix<double, NV, NV> H;
    for (int k = 0; k < NV; ++k) {
      const double h = 1e-5 * xs[vars[k]];
      H.col(k) = (grad(k, h) - grad(k, -h)) / (2.0 * h);
    }
    H = 0.5 * (H + H.transpose()).eval();
    for (int j = 0; j < NV; ++j) {
      for (int i = 0; i < NV; ++i) {
        if (H(i, j) != 0.0) t.emplace_back(vars[i], vars[j], H(i, j));
      }
    }
  }
};

// Affine rows sum_j a_j z_j - b.
struct LinearBlock final : Block {
  struct Term {
    int row;
    int var;
    double coef;
  };
  std::vector<Term> terms;
  std::vector<double> rhs;

  LinearBlock(int r0, int n) {
    row0 = r0;
    nrows = n;
    rhs.assign(n, 0.0);
  }

  void add(int r, int var, double coef) { terms.push_back({r, var, coef}); }

  void eval(const Eigen::VectorXd& z, Eigen::VectorXd& c) const override {
    for (int r = 0; r < nrows; ++r) c[row0 + r] -= rhs[r];
    for (const Term& t : terms) c[row0 + t.row] += t.coef * z[t.var];
  }

  void jac(const Eigen::VectorXd& z, Eigen::VectorXd& c, Triplets& t) const override {
    eval(z, c);
    for (const Term& term : terms) t.emplace_back(row0 + term.row, term.var, term.coef);
  }

  void pattern(std::vector<std::pair<int, int>>& out) const override {
    for (const Term& t : terms) out.emplace_back(row0 + t.row, t.var);
  }
};

template <int N>
std::array<int, N> span_of(std::initializer_list<std::pair<int, int>> pieces) {
  std::array<int, N> out{};
  int i = 0;
  for (const auto& [start, len] : pieces) {
    for (int j = 0; j < len; ++j) out[i++] = start + j;
  }
  return out;
}

bool is_psd(const Mat6& M) {
  Eigen::SelfAdjointEigenSolver<Mat6> es(0.5 * (M + M.transpose()));
  return es.eigenvalues().minCoeff() >= -1e-12 * std::max(1.0, M.norm());
}

double reference_rate(const OrbitModel& m, double T_ref) {
  switch (m.kind) {
    case OrbitKind::Circular: return m.n;
    case OrbitKind::Eccentric: return std::sqrt(m.mu / (m.a * m.a * m.a));
    case OrbitKind::Linear: return 1.0 / T_ref;
  }
  return 1.0 / T_ref;
}

}  // namespace


struct NlpProblem::Impl {
  OrbitModel model;
  TranscriptionConfig cfg;
  MteScenario mte;
  VariableLayout lay;
  int rows = 0;
  int m0 = 0;
  int m1 = -1;
  std::vector<std::unique_ptr<Block>> blocks;
  std::vector<RowGroup> groups;
  std::vector<char> ineq;
  std::vector<int> node_seg;  // per follower node
  std::vector<int> pi;        // per follower segment
  Eigen::VectorXd lo, hi, xs, rs;
  double fscale = 1.0;
  FollowerWeights w;
  Vec6 state_scale = Vec6::Ones();
  Vec6 lam_scale = Vec6::Ones();
  double ctrl_scale = 1.0;
  double stat_scale = 1.0;

  int open(RowFamily f, int index, int n, bool inequality = false) {
    const int r0 = rows;
    groups.push_back({f, index, r0, n});
    ineq.insert(ineq.end(), n, inequality ? 1 : 0);
    rows += n;
    return r0;
  }

  std::array<int, 17> deviation_vars(int k) const {
    const int j = node_seg[k];
    return span_of<17>({{lay.x_om(k), 6},
                        {lay.x_dag(j), 6},
                        {lay.u_dag(j), 3},
                        {lay.t_dag(), 1},
                        {lay.t_om(), 1}});
  }

  std::array<int, 16> adjoint_vars(int k) const {
    return span_of<16>({{lay.x_om(k), 6}, {lay.u_om(k), 3}, {lay.t_om(), 1}, {lay.lam(k + 1), 6}});
  }

  DeviationF deviation(int k, const Mat6& W) const {
    return {&model, W, node_seg[k], cfg.n_dag, k, cfg.n_om, cfg.steps};
  }

  void build();
};

void NlpProblem::Impl::build() {
  const int N = cfg.n_dag;
  const int No = cfg.n_om;
  const int nobs = static_cast<int>(cfg.obstacles.size());

  {
    auto b = std::make_unique<LinearBlock>(open(RowFamily::LeaderInitial, 0, 6), 6);
    for (int i = 0; i < 6; ++i) {
      b->add(i, lay.x_dag(0) + i, 1.0);
      b->rhs[i] = cfg.x0[i];
    }
    blocks.push_back(std::move(b));
  }
  for (int k = 0; k < N; ++k) {
    const int r0 = open(RowFamily::LeaderContinuity, k, 6);
    const auto vars = span_of<16>(
        {{lay.x_dag(k), 6}, {lay.u_dag(k), 3}, {lay.x_dag(k + 1), 6}, {lay.t_dag(), 1}});
    blocks.push_back(std::make_unique<DualBlock<16, 6, ContinuityF>>(
        r0, vars, ContinuityF{&model, k, N, cfg.steps}));
  }
  {
    auto b = std::make_unique<LinearBlock>(open(RowFamily::LeaderTerminal, 0, 6), 6);
    for (int i = 0; i < 6; ++i) {
      b->add(i, lay.x_dag(N) + i, 1.0);
      b->rhs[i] = cfg.x1[i];
    }
    blocks.push_back(std::move(b));
  }

  if (lay.follower) {
    if (!cfg.free_t_om) {
      auto b = std::make_unique<LinearBlock>(open(RowFamily::FlightTime, 0, 1), 1);
      b->add(0, lay.t_om(), 1.0);
      b->add(0, lay.t_dag(), -1.0);
      blocks.push_back(std::move(b));
    }
    for (int k = 0; k <= m0; ++k) {
      const int r0 = open(RowFamily::Branch, k, 6);
      blocks.push_back(std::make_unique<DualBlock<17, 6, DeviationF>>(
          r0, deviation_vars(k), deviation(k, Mat6::Identity())));
    }
    for (int k = 0; k < m0; ++k) {
      auto b = std::make_unique<LinearBlock>(open(RowFamily::PrePin, k, 3), 3);
      for (int i = 0; i < 3; ++i) {
        b->add(i, lay.u_om(k) + i, 1.0);
        b->add(i, lay.u_dag(pi[k]) + i, -1.0);
      }
      blocks.push_back(std::move(b));
    }
    for (int k = 0; k <= m0; ++k) {
      auto b = std::make_unique<LinearBlock>(open(RowFamily::CostatePin, k, 6), 6);
      for (int i = 0; i < 6; ++i) b->add(i, lay.lam(k) + i, 1.0);
      blocks.push_back(std::move(b));
    }
    for (int k = m0; k < No; ++k) {
      const int r0 = open(RowFamily::FollowerContinuity, k, 6);
      const auto vars = span_of<16>(
          {{lay.x_om(k), 6}, {lay.u_om(k), 3}, {lay.x_om(k + 1), 6}, {lay.t_om(), 1}});
      blocks.push_back(std::make_unique<DualBlock<16, 6, ContinuityF>>(
          r0, vars, ContinuityF{&model, k, No, cfg.steps}));
    }
    {
      auto b = std::make_unique<LinearBlock>(open(RowFamily::FollowerTerminal, 0, 6), 6);
      for (int i = 0; i < 6; ++i) {
        b->add(i, lay.x_om(No) + i, 1.0);
        b->rhs[i] = cfg.x1[i];
      }
      blocks.push_back(std::move(b));
    }
    for (int k : mte.segments) {
      auto b = std::make_unique<LinearBlock>(open(RowFamily::Mte, k, 3), 3);
      for (int i = 0; i < 3; ++i) b->add(i, lay.u_om(k) + i, 1.0);
      blocks.push_back(std::move(b));
    }
    // dL/dU_k = 2R(U_k - U_dag_pi) + G_k^T Lambda_{k+1} on active segments after the outage
    const Mat3 R2 = 2.0 * w.R;
    for (int k = m1 + 1; k < No; ++k) {
      const int r0 = open(RowFamily::Stationarity, k, 3);
      auto b = std::make_unique<LinearBlock>(r0, 3);
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          if (R2(i, j) == 0.0) continue;
          b->add(i, lay.u_om(k) + j, R2(i, j));
          b->add(i, lay.u_dag(pi[k]) + j, -R2(i, j));
        }
      }
      blocks.push_back(std::move(b));
      blocks.push_back(std::make_unique<DualBlock<16, 3, ControlAdjointF>>(
          r0, adjoint_vars(k), ControlAdjointF{&model, k, No, cfg.steps}));
    }
    // dL/dX_k = 2Q(X_k - xi_dag(t_k)) + Phi_k^T Lambda_{k+1} - Lambda_k
    for (int k = m0 + 1; k < No; ++k) {
      const int r0 = open(RowFamily::Costate, k, 6);
      blocks.push_back(std::make_unique<DualBlock<17, 6, DeviationF>>(
          r0, deviation_vars(k), deviation(k, 2.0 * w.Q)));
      blocks.push_back(std::make_unique<DualBlock<16, 6, AdjointF>>(
          r0, adjoint_vars(k), AdjointF{&model, k, No, cfg.steps}));
      auto b = std::make_unique<LinearBlock>(r0, 6);
      for (int i = 0; i < 6; ++i) b->add(i, lay.lam(k) + i, -1.0);
      blocks.push_back(std::move(b));
    }
    {
      const int r0 = open(RowFamily::Transversality, No, 6);
      blocks.push_back(std::make_unique<DualBlock<17, 6, DeviationF>>(
          r0, deviation_vars(No), deviation(No, 2.0 * w.Qf)));
      auto b = std::make_unique<LinearBlock>(r0, 6);
      for (int i = 0; i < 6; ++i) b->add(i, lay.lam(No) + i, -1.0);
      blocks.push_back(std::move(b));
    }
  }

  for (int k = 0; k <= N; ++k) {
    for (int j = 0; j < nobs; ++j) {
      const int r0 = open(RowFamily::Obstacle, k * nobs + j, 1, true);
      blocks.push_back(std::make_unique<DualBlock<3, 1, ObstacleF>>(
          r0, span_of<3>({{lay.x_dag(k), 3}}),
          ObstacleF{cfg.obstacles[j].center, cfg.obstacles[j].radius}));
    }
  }
  if (lay.follower) {
    for (int k = 0; k <= No; ++k) {
      for (int j = 0; j < nobs; ++j) {
        const int r0 = open(RowFamily::Obstacle, (N + 1 + k) * nobs + j, 1, true);
        blocks.push_back(std::make_unique<DualBlock<3, 1, ObstacleF>>(
            r0, span_of<3>({{lay.x_om(k), 3}}),
            ObstacleF{cfg.obstacles[j].center, cfg.obstacles[j].radius}));
      }
    }
  }

  // variable bounds and scaling
  const int n = lay.size();
  const double inf = std::numeric_limits<double>::infinity();
  lo = Eigen::VectorXd::Constant(n, -inf);
  hi = Eigen::VectorXd::Constant(n, inf);
  xs = Eigen::VectorXd::Ones(n);
  const double T_ref = cfg.t_max;
  const double L_ref = 1.0;
  const double V_ref = L_ref * reference_rate(model, T_ref);
  state_scale << L_ref, L_ref, L_ref, V_ref, V_ref, V_ref;
  ctrl_scale = cfg.u_max;
  const double r_max = w.R.diagonal().maxCoeff();
  stat_scale = 2.0 * r_max * cfg.u_max;
  const double h = T_ref / std::max(cfg.n_om, 1);
  lam_scale << Vec3::Constant(stat_scale / (h * h)), Vec3::Constant(stat_scale / h);

  auto set_time = [&](int i) {
    lo[i] = cfg.t_min;
    hi[i] = cfg.t_max;
    xs[i] = T_ref;
  };
  auto set_state = [&](int i0) {
    lo.segment<6>(i0) = cfg.x_lower;
    hi.segment<6>(i0) = cfg.x_upper;
    xs.segment<6>(i0) = state_scale;
  };
  auto set_ctrl = [&](int i0) {
    lo.segment<3>(i0).setConstant(-cfg.u_max);
    hi.segment<3>(i0).setConstant(cfg.u_max);
    xs.segment<3>(i0).setConstant(ctrl_scale);
  };
  set_time(lay.t_dag());
  for (int k = 0; k <= N; ++k) set_state(lay.x_dag(k));
  for (int k = 0; k < N; ++k) set_ctrl(lay.u_dag(k));
  if (lay.follower) {
    set_time(lay.t_om());
    for (int k = 0; k <= No; ++k) set_state(lay.x_om(k));
    for (int k = 0; k < No; ++k) set_ctrl(lay.u_om(k));
    for (int k = 0; k <= No; ++k) xs.segment<6>(lay.lam(k)) = lam_scale;
  }

  rs = Eigen::VectorXd::Ones(rows);
  for (const RowGroup& g : groups) {
    switch (g.family) {
      case RowFamily::LeaderInitial:
      case RowFamily::LeaderContinuity:
      case RowFamily::LeaderTerminal:
      case RowFamily::Branch:
      case RowFamily::FollowerContinuity:
      case RowFamily::FollowerTerminal:
        rs.segment<6>(g.row0) = state_scale;
        break;
      case RowFamily::FlightTime: rs[g.row0] = T_ref; break;
      case RowFamily::PrePin:
      case RowFamily::Mte:
        rs.segment<3>(g.row0).setConstant(ctrl_scale);
        break;
      case RowFamily::Stationarity: rs.segment<3>(g.row0).setConstant(stat_scale); break;
      case RowFamily::CostatePin:
      case RowFamily::Costate:
      case RowFamily::Transversality:
        rs.segment<6>(g.row0) = lam_scale;
        break;
      case RowFamily::Obstacle: rs[g.row0] = L_ref; break;
    }
  }
  fscale = std::max(cfg.w_t * T_ref + cfg.w_u * cfg.u_max * N, 1e-300);
}

NlpProblem::NlpProblem(const OrbitModel& model, const TranscriptionConfig& cfg_in,
                       const MteScenario& mte) {
  model.validate();
  TranscriptionConfig cfg = cfg_in;
  if (cfg.n_dag < 1) throw Error(ErrorKind::Config, "n_dag must be at least 1");
  if (cfg.steps < 1) throw Error(ErrorKind::Config, "steps per segment must be at least 1");
  if (!(cfg.u_max > 0.0)) throw Error(ErrorKind::Config, "u_max must be positive");
  if (!(cfg.t_min > 0.0) || !(cfg.t_max >= cfg.t_min)) {
    throw Error(ErrorKind::Config, "flight time bounds must satisfy 0 < t_min <= t_max");
  }
  if (cfg.w_t < 0.0 || cfg.w_u < 0.0) throw Error(ErrorKind::Config, "weights must be >= 0");
  if (!is_psd(cfg.Q) || !is_psd(cfg.Qf)) {
    throw Error(ErrorKind::Config, "Q and Qf must be positive semidefinite");
  }
  {
    Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (cfg.R + cfg.R.transpose()));
    if (!(es.eigenvalues().minCoeff() > 0.0)) {
      throw Error(ErrorKind::Config, "R must be positive definite");
    }
  }
  if ((cfg.x_lower.array() > cfg.x_upper.array()).any()) {
    throw Error(ErrorKind::Config, "state box has lower > upper");
  }
  for (const Obstacle& o : cfg.obstacles) {
    if (!(o.radius >= 0.0)) throw Error(ErrorKind::Config, "obstacle radius must be >= 0");
  }
  if (model.kind == OrbitKind::Eccentric) {
    const double t_dom = time_between_anomalies(model, model.nu0, model.nu_end);
    cfg.t_max = std::min(cfg.t_max, t_dom);
    if (cfg.t_min > cfg.t_max) {
      throw Error(ErrorKind::Config, "t_min exceeds the time available in the anomaly window");
    }
  }
  const bool follower = cfg.follower && !mte.empty();
  if (follower) {
    if (cfg.n_om < 1) throw Error(ErrorKind::Config, "n_om must be at least 1");
    mte.validate(cfg.n_om);
  }

  auto impl = std::make_shared<Impl>();
  {
    if (!(cfg.length_unit > 0.0)) throw Error(ErrorKind::Config, "length_unit must be positive");
    const double tu = cfg.time_unit > 0.0 ? cfg.time_unit : 1.0 / reference_rate(model, cfg.t_max);
    const double L = cfg.length_unit;
    Vec6 d;
    d << Vec3::Constant(1.0 / L), Vec3::Constant(tu / L);
    impl->w.Q = d.asDiagonal() * cfg.Q * d.asDiagonal();
    impl->w.Qf = d.asDiagonal() * cfg.Qf * d.asDiagonal();
    const double a = tu * tu / L;
    impl->w.R = a * a * cfg.R;
  }
  impl->model = model;
  impl->cfg = cfg;
  impl->mte = follower ? mte : MteScenario::none();
  impl->lay = {cfg.n_dag, follower ? cfg.n_om : 0, follower};
  if (follower) {
    impl->m0 = mte.first();
    impl->m1 = mte.last();
    for (int k = 0; k <= cfg.n_om; ++k) {
      const double frac = static_cast<double>(k) * cfg.n_dag / cfg.n_om;
      impl->node_seg.push_back(
          std::min(static_cast<int>(std::floor(frac + 1e-9)), cfg.n_dag - 1));
    }
    for (int k = 0; k < cfg.n_om; ++k) {
      impl->pi.push_back(segment_map(k, cfg.n_om, cfg.n_dag, 1.0, 1.0));
    }
  }
  impl->build();
  impl_ = std::move(impl);
}

const OrbitModel& NlpProblem::model() const { return impl_->model; }
const TranscriptionConfig& NlpProblem::config() const { return impl_->cfg; }
const MteScenario& NlpProblem::scenario() const { return impl_->mte; }
const VariableLayout& NlpProblem::layout() const { return impl_->lay; }
const FollowerWeights& NlpProblem::weights() const { return impl_->w; }
int NlpProblem::num_vars() const { return impl_->lay.size(); }
int NlpProblem::num_rows() const { return impl_->rows; }
const std::vector<RowGroup>& NlpProblem::groups() const { return impl_->groups; }
const std::vector<char>& NlpProblem::inequality() const { return impl_->ineq; }
const Eigen::VectorXd& NlpProblem::lower() const { return impl_->lo; }
const Eigen::VectorXd& NlpProblem::upper() const { return impl_->hi; }
const Eigen::VectorXd& NlpProblem::var_scale() const { return impl_->xs; }
const Eigen::VectorXd& NlpProblem::row_scale() const { return impl_->rs; }
double NlpProblem::objective_scale() const { return impl_->fscale; }
int NlpProblem::node_leader_segment(int k_om) const { return impl_->node_seg.at(k_om); }
int NlpProblem::mapped_segment(int k_om) const { return impl_->pi.at(k_om); }

std::string NlpProblem::row_label(int row) const {
  const auto& g = impl_->groups;
  auto it = std::upper_bound(g.begin(), g.end(), row,
                             [](int r, const RowGroup& grp) { return r < grp.row0; });
  if (it == g.begin() || row >= impl_->rows) return "row " + std::to_string(row);
  --it;
  return std::string(family_name(it->family)) + "[" + std::to_string(it->index) + "]." +
         std::to_string(row - it->row0);
}

std::vector<int> NlpProblem::rows_of(RowFamily f) const {
  std::vector<int> out;
  for (const RowGroup& g : impl_->groups) {
    if (g.family != f) continue;
    for (int r = 0; r < g.nrows; ++r) out.push_back(g.row0 + r);
  }
  return out;
}

namespace {

double smooth_norm(const Vec3& u, double s) {
  return s > 0.0 ? std::sqrt(u.squaredNorm() + s * s) - s : u.norm();
}

}  // namespace

double NlpProblem::objective(const Eigen::VectorXd& z, double smoothing) const {
  const auto& l = impl_->lay;
  const double s = smoothing * impl_->cfg.u_max;
  double J = impl_->cfg.w_t * z[l.t_dag()];
  for (int k = 0; k < l.n_dag; ++k) {
    J += impl_->cfg.w_u * smooth_norm(z.segment<3>(l.u_dag(k)), s);
  }
  return J;
}

Eigen::VectorXd NlpProblem::objective_gradient(const Eigen::VectorXd& z, double smoothing) const {
  const auto& l = impl_->lay;
  const double s = smoothing * impl_->cfg.u_max;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(z.size());
  g[l.t_dag()] = impl_->cfg.w_t;
  for (int k = 0; k < l.n_dag; ++k) {
    const Vec3 u = z.segment<3>(l.u_dag(k));
    const double q = std::sqrt(u.squaredNorm() + s * s);
    if (q > 0.0) g.segment<3>(l.u_dag(k)) = impl_->cfg.w_u * u / q;
  }
  return g;
}

Eigen::SparseMatrix<double> NlpProblem::objective_hessian(const Eigen::VectorXd& z,
                                                          double smoothing) const {
  const auto& l = impl_->lay;
  const double s = smoothing * impl_->cfg.u_max;
  Triplets t;
  for (int k = 0; k < l.n_dag; ++k) {
    const Vec3 u = z.segment<3>(l.u_dag(k));
    const double q = std::sqrt(u.squaredNorm() + s * s);
    if (!(q > 0.0)) continue;
    const Mat3 H = impl_->cfg.w_u * (Mat3::Identity() - u * u.transpose() / (q * q)) / q;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) t.emplace_back(l.u_dag(k) + i, l.u_dag(k) + j, H(i, j));
    }
  }
  Eigen::SparseMatrix<double> H(z.size(), z.size());
  H.setFromTriplets(t.begin(), t.end());
  return H;
}

Vec6 NlpProblem::reference_at_node(const DecisionVector& dv, int k) const {
  const Impl& p = *impl_;
  const int j = p.node_seg.at(k);
  const double T_om = p.cfg.free_t_om ? dv.T_om : dv.T_dag;
  return leader_at_node<double>(p.model, dv.X_dag[j].data(), dv.U_dag[j].data(), dv.T_dag,
                                T_om, j, p.cfg.n_dag, k, p.cfg.n_om, p.cfg.steps);
}

double NlpProblem::follower_objective(const Eigen::VectorXd& z) const {
  const Impl& p = *impl_;
  if (!p.lay.follower) return 0.0;
  const DecisionVector dv = DecisionVector::unpack(z, p.lay);
  const int No = p.cfg.n_om;
  double J = 0.0;
  for (int k = 0; k <= No; ++k) {
    const int j = p.node_seg[k];
    const Vec6 ref = leader_at_node<double>(p.model, dv.X_dag[j].data(), dv.U_dag[j].data(),
                                            dv.T_dag, dv.T_om, j, p.cfg.n_dag, k, No, p.cfg.steps);
    const Vec6 dx = dv.X_om[k] - ref;
    if (k == No) {
      J += dx.dot(p.w.Qf * dx);
    } else {
      const Vec3 du = dv.U_om[k] - dv.U_dag[p.pi[k]];
      J += dx.dot(p.w.Q * dx) + du.dot(p.w.R * du);
    }
  }
  return J;
}

namespace {

[[noreturn]] void rethrow_with_row(const NlpProblem& p, int row, const Error& e) {
  throw Error(ErrorKind::Divergence, "constraint " + p.row_label(row) + ": " + e.what());
}

}  // namespace

Eigen::VectorXd NlpProblem::constraints(const Eigen::VectorXd& z) const {
  if (z.size() != num_vars()) throw Error(ErrorKind::InvalidInput, "constraints: bad z size");
  Eigen::VectorXd c = Eigen::VectorXd::Zero(impl_->rows);
  for (const auto& b : impl_->blocks) {
    try {
      b->eval(z, c);
    } catch (const DivergenceError& e) {
      rethrow_with_row(*this, b->row0, e);
    }
  }
  return c;
}

Eigen::SparseMatrix<double> NlpProblem::jacobian(const Eigen::VectorXd& z,
                                                 Eigen::VectorXd* c_out) const {
  if (z.size() != num_vars()) throw Error(ErrorKind::InvalidInput, "jacobian: bad z size");
  Eigen::VectorXd c = Eigen::VectorXd::Zero(impl_->rows);
  Triplets t;
  t.reserve(impl_->blocks.size() * 100);
  for (const auto& b : impl_->blocks) {
    try {
      b->jac(z, c, t);
    } catch (const DivergenceError& e) {
      rethrow_with_row(*this, b->row0, e);
    }
  }
  Eigen::SparseMatrix<double> J(impl_->rows, num_vars());
  J.setFromTriplets(t.begin(), t.end());
  if (c_out) *c_out = std::move(c);
  return J;
}

Eigen::SparseMatrix<double> NlpProblem::lagrangian_hessian(const Eigen::VectorXd& z,
                                                           const Eigen::VectorXd& w) const {
  if (z.size() != num_vars() || w.size() != num_rows()) {
    throw Error(ErrorKind::InvalidInput, "lagrangian_hessian: bad sizes");
  }
  Triplets t;
  for (const auto& b : impl_->blocks) {
    try {
      b->hess(z, w, impl_->xs, t);
    } catch (const DivergenceError& e) {
      rethrow_with_row(*this, b->row0, e);
    }
  }
  Eigen::SparseMatrix<double> H(num_vars(), num_vars());
  H.setFromTriplets(t.begin(), t.end());
  return H;
}

std::vector<std::pair<int, int>> NlpProblem::sparsity() const {
  std::vector<std::pair<int, int>> out;
  for (const auto& b : impl_->blocks) b->pattern(out);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<int> NlpProblem::kkt_rows() const {
  std::vector<int> out;
  for (const RowGroup& g : impl_->groups) {
    if (g.family != RowFamily::Stationarity && g.family != RowFamily::Costate &&
        g.family != RowFamily::Transversality) {
      continue;
    }
    for (int r = 0; r < g.nrows; ++r) out.push_back(g.row0 + r);
  }
  return out;
}

Eigen::VectorXd NlpProblem::kkt_residuals(const Eigen::VectorXd& z) const {
  const Eigen::VectorXd c = constraints(z);
  const std::vector<int> rows = kkt_rows();
  Eigen::VectorXd out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = c[rows[i]];
  return out;
}

DecisionVector NlpProblem::simulate(double T, const std::vector<Vec3>& U_dag) const {
  const Impl& p = *impl_;
  const int N = p.cfg.n_dag;
  if (static_cast<int>(U_dag.size()) != N) {
    throw Error(ErrorKind::InvalidInput, "simulate: expected one control per leader segment");
  }
  DecisionVector dv;
  dv.T_dag = T;
  dv.U_dag = U_dag;
  dv.X_dag.push_back(p.cfg.x0);
  for (int k = 0; k < N; ++k) {
    dv.X_dag.push_back(flow_segment<double>(p.model, dv.X_dag[k], U_dag[k],
                                            node_time(T, k, N), node_time(T, k + 1, N),
                                            p.cfg.steps));
  }
  if (p.lay.follower) {
    dv.T_om = T;
    for (int k = 0; k < p.cfg.n_om; ++k) dv.U_om.push_back(U_dag[p.pi[k]]);
    complete_follower(dv);
  }
  return dv;
}

void NlpProblem::complete_follower(DecisionVector& dv) const {
  const Impl& p = *impl_;
  if (!p.lay.follower) return;
  const int No = p.cfg.n_om;
  if (!p.cfg.free_t_om) dv.T_om = dv.T_dag;
  dv.U_om.resize(No, Vec3::Zero());
  dv.X_om.assign(No + 1, Vec6::Zero());
  dv.L_om.assign(No + 1, Vec6::Zero());
  for (int k = 0; k < p.m0; ++k) dv.U_om[k] = dv.U_dag[p.pi[k]];
  for (int k : p.mte.segments) dv.U_om[k].setZero();
  std::vector<Vec6> ref(No + 1);
  for (int k = 0; k <= No; ++k) {
    const int j = p.node_seg[k];
    ref[k] = leader_at_node<double>(p.model, dv.X_dag[j].data(), dv.U_dag[j].data(), dv.T_dag,
                                    dv.T_om, j, p.cfg.n_dag, k, No, p.cfg.steps);
  }
  for (int k = 0; k <= p.m0; ++k) dv.X_om[k] = ref[k];
  for (int k = p.m0; k < No; ++k) {
    dv.X_om[k + 1] = flow_segment<double>(p.model, dv.X_om[k], dv.U_om[k],
                                          node_time(dv.T_om, k, No),
                                          node_time(dv.T_om, k + 1, No), p.cfg.steps);
  }
  dv.L_om[No] = 2.0 * p.w.Qf * (dv.X_om[No] - ref[No]);
  for (int k = No - 1; k > p.m0; --k) {
    std::array<double, 16> v;
    for (int i = 0; i < 6; ++i) v[i] = dv.X_om[k][i];
    for (int i = 0; i < 3; ++i) v[6 + i] = dv.U_om[k][i];
    v[9] = dv.T_om;
    for (int i = 0; i < 6; ++i) v[10 + i] = dv.L_om[k + 1][i];
    Vec6 adj;
    AdjointF{&p.model, k, No, p.cfg.steps}(v.data(), adj.data());
    dv.L_om[k] = 2.0 * p.w.Q * (dv.X_om[k] - ref[k]) + adj;
  }
}

void NlpProblem::write_sparsity_csv(std::ostream& os) const {
  const auto& l = impl_->lay;
  auto col_group = [&](int c) -> const char* {
    if (c == l.t_dag()) return "T_dag";
    if (c < l.u_dag(0)) return "X_dag";
    if (c < l.t_om()) return "U_dag";
    if (!l.follower) return "?";
    if (c == l.t_om()) return "T_om";
    if (c < l.u_om(0)) return "X_om";
    if (c < l.lam(0)) return "U_om";
    return "L_om";
  };
  os << "# mtrobust sparsity v1\n";
  os << "row,col,row_group,col_group\n";
  for (const auto& [r, c] : sparsity()) {
    std::string label = row_label(r);
    label = label.substr(0, label.find('['));
    os << r << ',' << c << ',' << label << ',' << col_group(c) << '\n';
  }
}

}  // namespace mtr
