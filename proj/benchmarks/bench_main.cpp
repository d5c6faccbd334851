#include <benchmark/benchmark.h>

#include <random>

#include "mtrobust/app.hpp"
#include "mtrobust/propagation.hpp"
#include "mtrobust/recovery.hpp"

using namespace mtr;

namespace {

OrbitModel model_for(int eccentric) {
  if (!eccentric) return OrbitModel::circular(6871.0, 1.109e-3);
  const double d2r = M_PI / 180.0;
  return OrbitModel::eccentric(22903.33, 0.7, 398600.4418, 60 * d2r, 120 * d2r, 60 * d2r);
}

const Vec6 kX0 = (Vec6() << M_SQRT1_2, 0.0, M_SQRT1_2, 0.0, 0.0, 0.0).finished();
const Vec3 kU(1e-7, -2e-7, 5e-8);

ScenarioConfig small_config(bool follower) {
  ScenarioConfig c = load_scenario(std::string(MTR_CONFIG_DIR) + "/circular_small.json");
  c.follower = follower;
  return c;
}

}  // namespace

static void BM_Flow(benchmark::State& st) {
  const OrbitModel m = model_for(static_cast<int>(st.range(0)));
  IntegratorConfig cfg;
  cfg.steps_per_segment = 100;
  for (auto _ : st) benchmark::DoNotOptimize(flow(m, kX0, kU, 0.0, 540.0, cfg));
}
BENCHMARK(BM_Flow)->Arg(0)->Arg(1);

static void BM_FlowWithStm(benchmark::State& st) {
  const OrbitModel m = model_for(static_cast<int>(st.range(0)));
  IntegratorConfig cfg;
  cfg.steps_per_segment = 100;
  for (auto _ : st) benchmark::DoNotOptimize(flow_with_stm(m, kX0, kU, 0.0, 540.0, cfg));
}
BENCHMARK(BM_FlowWithStm)->Arg(0)->Arg(1);

static void BM_Constraints(benchmark::State& st) {
  const NlpProblem p = make_problem(small_config(st.range(0)));
  std::mt19937_64 rng(1);
  const Eigen::VectorXd z = initialize(p, rng).pack();
  for (auto _ : st) benchmark::DoNotOptimize(p.constraints(z));
}
BENCHMARK(BM_Constraints)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_Jacobian(benchmark::State& st) {
  const NlpProblem p = make_problem(small_config(st.range(0)));
  std::mt19937_64 rng(1);
  const Eigen::VectorXd z = initialize(p, rng).pack();
  for (auto _ : st) benchmark::DoNotOptimize(p.jacobian(z));
}
BENCHMARK(BM_Jacobian)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_LeaderSolve(benchmark::State& st) {
  ScenarioConfig c = load_scenario(std::string(MTR_CONFIG_DIR) + "/circular_leader.json");
  for (auto _ : st) benchmark::DoNotOptimize(solve_scenario(c, 1));
}
BENCHMARK(BM_LeaderSolve)->Unit(benchmark::kMillisecond)->Iterations(3);

static void BM_CertifyAndRecover(benchmark::State& st) {
  const Checkpoint cp =
      solve_scenario(load_scenario(std::string(MTR_CONFIG_DIR) + "/circular_leader.json"), 1);
  for (auto _ : st) {
    benchmark::DoNotOptimize(certify(cp, 0.05, 200));
    benchmark::DoNotOptimize(recover(cp));
  }
}
BENCHMARK(BM_CertifyAndRecover)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
