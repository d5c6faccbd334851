#include "mtrobust/propagation.hpp"

#include <algorithm>
#include <cmath>

namespace mtr {

namespace {

void check_interval(double t0, double t1, const IntegratorConfig& cfg) {
  if (!(t1 >= t0)) throw Error(ErrorKind::InvalidInput, "flow requires t1 >= t0");
  if (cfg.steps_per_segment < 1) throw Error(ErrorKind::Config, "steps_per_segment must be >= 1");
}

}  // namespace

FlowResult flow(const OrbitModel& m, const Vec6& x0, const Vec3& u, double t0, double t1,
                const IntegratorConfig& cfg) {
  check_interval(t0, t1, cfg);
  FlowResult r;
  if (!cfg.record_samples) {
    r.x_end = rk4_flow<double>(m, x0, u, t0, t1, cfg.steps_per_segment);
    return r;
  }
  const int steps = cfg.steps_per_segment;
  const double h = (t1 - t0) / steps;
  Vec6 x = x0;
  double nu = anomaly_at(m, t0);
  r.samples.emplace_back(t0, x);
  for (int i = 0; i < steps; ++i) {
    const double ta = t0 + i * h;
    const double tb = (i + 1 == steps) ? t1 : t0 + (i + 1) * h;
    const double nu_next = m.kind == OrbitKind::Eccentric ? propagate_anomaly(m, ta, nu, tb) : nu;
    x = rk4_flow_from<double>(m, x, u, nu, ta, tb, 1);
    nu = nu_next;
    r.samples.emplace_back(tb, x);
  }
  r.x_end = x;
  return r;
}

FlowResult flow_with_stm(const OrbitModel& m, const Vec6& x0, const Vec3& u, double t0,
                         double t1, const IntegratorConfig& cfg) {
  check_interval(t0, t1, cfg);
  Eigen::Matrix<double, 6, 9> M = Eigen::Matrix<double, 6, 9>::Zero();
  M.leftCols<6>().setIdentity();
  FlowResult r;
  r.x_end = rk4_flow_sens<double, 9>(m, x0, u, anomaly_at(m, t0), t0, t1, cfg.steps_per_segment,
                                     M, 6);
  r.stm = M.leftCols<6>();
  r.control_sensitivity = M.rightCols<3>();
  return r;
}

SampledTrajectory propagate_trajectory(const OrbitModel& m, const Vec6& x0,
                                       const std::vector<std::pair<double, Vec3>>& schedule,
                                       const IntegratorConfig& cfg, double t0) {
  SampledTrajectory out;
  out.t.push_back(t0);
  out.x.push_back(x0);
  out.boundary_index.push_back(0);
  double t = t0;
  Vec6 x = x0;
  for (const auto& [dur, u] : schedule) {
    if (!(dur >= 0.0)) throw Error(ErrorKind::InvalidInput, "negative segment duration");
    FlowResult f = flow(m, x, u, t, t + dur, cfg);
    if (cfg.record_samples) {
      for (std::size_t i = 1; i < f.samples.size(); ++i) {
        out.t.push_back(f.samples[i].first);
        out.x.push_back(f.samples[i].second);
      }
    } else {
      out.t.push_back(t + dur);
      out.x.push_back(f.x_end);
    }
    t += dur;
    x = f.x_end;
    out.boundary_index.push_back(static_cast<int>(out.t.size()) - 1);
  }
  return out;
}

int PiecewiseTrajectory::segment_at(double t) const {
  const int n = segments();
  const double frac = (t - t0) / duration * n;
  int j = static_cast<int>(std::floor(frac + 1e-9));
  return std::clamp(j, 0, n - 1);
}

Vec6 PiecewiseTrajectory::state_at(double t) const {
  const int j = segment_at(t);
  const double tj = t0 + duration * j / segments();
  if (t == tj) return x[j];
  return rk4_flow<double>(model, x[j], u[j], tj, t, steps_per_segment);
}

Vec3 PiecewiseTrajectory::control_at(double t) const { return u[segment_at(t)]; }

StmSamples sample_with_stm(const PiecewiseTrajectory& ref, const Vec6& x_a, double t_a,
                           const std::vector<double>& times, bool coast) {
  StmSamples out;
  const double seg = ref.step();
  Vec6 x = x_a;
  Mat6 phi = Mat6::Identity();
  double t = t_a;
  double nu = anomaly_at(ref.model, t_a);
  for (double target : times) {
    if (target < t) throw Error(ErrorKind::InvalidInput, "sample times must be increasing");
    while (t < target) {
      const int j = ref.segment_at(t);
      const double seg_end = ref.t0 + seg * (j + 1);
      double t_next = std::min(target, seg_end);
      if (j == ref.segments() - 1) t_next = target;
      if (t_next <= t) t_next = target;
      const int steps =
          std::max(1, static_cast<int>(std::ceil(ref.steps_per_segment * (t_next - t) / seg - 1e-9)));
      const Vec3 u = coast ? Vec3::Zero() : ref.u[j];
      Mat6 M = phi;
      const double nu_next =
          ref.model.kind == OrbitKind::Eccentric ? propagate_anomaly(ref.model, t, nu, t_next) : nu;
      x = rk4_flow_sens<double, 6>(ref.model, x, u, nu, t, t_next, steps, M, -1);
      phi = M;
      nu = nu_next;
      t = t_next;
    }
    out.t.push_back(target);
    out.x.push_back(x);
    out.phi.push_back(phi);
  }
  return out;
}

}  // namespace mtr
