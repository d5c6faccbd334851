#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mtrobust/common.hpp"
#include "mtrobust/dynamics.hpp"
#include "mtrobust/solver.hpp"
#include "mtrobust/transcription.hpp"

namespace mtr {

// Load failure with one message per offending field ("orbit.e: must lie in [0, 1)").
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> issues);
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  std::vector<std::string> issues_;
};

struct OrbitSpec {
  std::string kind = "circular";  // circular | eccentric
  double R = 6871.0;              // km
  double n = 1.109e-3;            // 1/s
  double a = 22903.33;            // km
  double e = 0.7;
  double mu = 398600.4418;
  double nu_start_deg = 60.0;
  double nu_end_deg = 120.0;

  OrbitModel build() const;
};

struct ScenarioConfig {
  std::string name = "circular";
  OrbitSpec orbit;
  Vec6 x0 = (Vec6() << M_SQRT1_2, 0.0, M_SQRT1_2, 0.0, 0.0, 0.0).finished();
  Vec6 x1 = Vec6::Zero();
  Mat6 Q = Mat6::Identity();
  Mat3 R = 0.1 * Mat3::Identity();
  Mat6 Qf = 10.0 * Mat6::Identity();
  double length_unit = 1.0;  // km
  double time_unit = 0.0;    // s, <= 0 selects 1 / mean motion
  double epsilon = 0.05;
  double u_max = 1e-6;  // T_max^acc, km/s^2
  double t_min = 600.0;
  double t_max = 5400.0;
  double w_t = 0.0;
  double w_u = 1.0;

  int n_dag = 50;
  int steps = 100;
  std::optional<int> n_om;  // default N_dag - |M|
  bool follower = true;
  std::optional<std::pair<int, int>> mte = std::make_pair(5, 14);  // inclusive follower segments
  std::vector<Obstacle> obstacles;

  SolveOptions solver;

  int runs = 500;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency

  int certificate_samples = 200;
  std::optional<double> t_rec;  // default: follower horizon end - tau2
  std::optional<Vec3> u_bar;    // default: u_max per axis

  // Throws ConfigError listing every failed precondition.
  void validate() const;

  OrbitModel model() const { return orbit.build(); }
  TranscriptionConfig transcription() const;
  MteScenario scenario() const;
  Vec3 recovery_bound() const;
};

ScenarioConfig parse_scenario(const std::string& text, const std::string& source = "<string>");
ScenarioConfig load_scenario(const std::string& path);
std::string dump_scenario(const ScenarioConfig& cfg);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace mtr
