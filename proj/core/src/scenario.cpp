#include "mtrobust/scenario.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "json.hpp"

namespace mtr {

using json = nlohmann::ordered_json;

namespace {

std::string join_issues(const std::vector<std::string>& issues) {
  std::string s = "invalid configuration";
  for (const auto& i : issues) s += "\n  " + i;
  return s;
}

// Walks one JSON object, collecting field-level problems instead of throwing on the first.
class Reader {
 public:
  Reader(const json& j, std::string path, std::vector<std::string>& issues)
      : j_(j), path_(std::move(path)), issues_(issues) {
    if (!j_.is_object()) fail("", "expected an object");
  }

  ~Reader() {
    if (!j_.is_object()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(it.key(), "unknown field");
    }
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void fail(const std::string& key, const std::string& msg) {
    issues_.push_back((key.empty() ? (path_.empty() ? "<root>" : path_) : field(key)) + ": " +
                      msg);
  }

  const json* get(const std::string& key) {
    seen_.insert(key);
    if (!j_.is_object()) return nullptr;
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    return &*it;
  }

  void number(const std::string& key, double& out) {
    const json* v = get(key);
    if (!v) return;
    if (!v->is_number()) return fail(key, "expected a number");
    out = v->get<double>();
  }

  void integer(const std::string& key, int& out) {
    const json* v = get(key);
    if (!v) return;
    if (!v->is_number_integer()) return fail(key, "expected an integer");
    out = v->get<int>();
  }

  void uint64(const std::string& key, std::uint64_t& out) {
    const json* v = get(key);
    if (!v) return;
    if (!v->is_number_unsigned()) return fail(key, "expected a nonnegative integer");
    out = v->get<std::uint64_t>();
  }

  void boolean(const std::string& key, bool& out) {
    const json* v = get(key);
    if (!v) return;
    if (!v->is_boolean()) return fail(key, "expected true or false");
    out = v->get<bool>();
  }

  void string(const std::string& key, std::string& out) {
    const json* v = get(key);
    if (!v) return;
    if (!v->is_string()) return fail(key, "expected a string");
    out = v->get<std::string>();
  }

  void opt_number(const std::string& key, std::optional<double>& out) {
    const json* v = get(key);
    if (!v || v->is_null()) return;
    if (!v->is_number()) return fail(key, "expected a number or null");
    out = v->get<double>();
  }

  void opt_integer(const std::string& key, std::optional<int>& out) {
    const json* v = get(key);
    if (!v || v->is_null()) return;
    if (!v->is_number_integer()) return fail(key, "expected an integer or null");
    out = v->get<int>();
  }

  template <int N>
  bool vector(const json& v, const std::string& key, Eigen::Matrix<double, N, 1>& out) {
    if (!v.is_array() || v.size() != N) {
      fail(key, "expected an array of " + std::to_string(N) + " numbers");
      return false;
    }
    for (int i = 0; i < N; ++i) {
      if (!v[i].is_number()) {
        fail(key, "expected an array of " + std::to_string(N) + " numbers");
        return false;
      }
      out[i] = v[i].get<double>();
    }
    return true;
  }

  template <int N>
  void vector(const std::string& key, Eigen::Matrix<double, N, 1>& out) {
    if (const json* v = get(key)) vector<N>(*v, key, out);
  }

  // scalar (times identity), diagonal list, or nested rows
  template <int N>
  void matrix(const std::string& key, Eigen::Matrix<double, N, N>& out) {
    const json* v = get(key);
    if (!v) return;
    using M = Eigen::Matrix<double, N, N>;
    if (v->is_number()) {
      out = v->get<double>() * M::Identity();
      return;
    }
    const std::string what = "expected a number, " + std::to_string(N) + " diagonal entries or " +
                             std::to_string(N) + "x" + std::to_string(N) + " rows";
    if (!v->is_array() || v->size() != N) return fail(key, what);
    if ((*v)[0].is_number()) {
      Eigen::Matrix<double, N, 1> d;
      if (vector<N>(*v, key, d)) out = d.asDiagonal();
      return;
    }
    M m;
    for (int i = 0; i < N; ++i) {
      Eigen::Matrix<double, N, 1> row;
      if (!vector<N>((*v)[i], key + "[" + std::to_string(i) + "]", row)) return;
      m.row(i) = row.transpose();
    }
    out = m;
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string>& issues_;
  std::set<std::string> seen_;
};

template <int N>
json matrix_json(const Eigen::Matrix<double, N, N>& m) {
  const bool diagonal = (m - Eigen::Matrix<double, N, N>(m.diagonal().asDiagonal())).isZero(0.0);
  if (diagonal && (m.diagonal().array() == m(0, 0)).all()) return m(0, 0);
  json out = json::array();
  if (diagonal) {
    for (int i = 0; i < N; ++i) out.push_back(m(i, i));
    return out;
  }
  for (int i = 0; i < N; ++i) {
    json row = json::array();
    for (int k = 0; k < N; ++k) row.push_back(m(i, k));
    out.push_back(row);
  }
  return out;
}

template <int N>
json vector_json(const Eigen::Matrix<double, N, 1>& v) {
  json out = json::array();
  for (int i = 0; i < N; ++i) out.push_back(v[i]);
  return out;
}

// Line and column of a byte offset, both 1-based.
std::pair<int, int> line_col(const std::string& text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

template <int N>
bool symmetric(const Eigen::Matrix<double, N, N>& m) {
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff());
}

template <int N>
double min_eig(const Eigen::Matrix<double, N, N>& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, N, N>> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> issues)
    : Error(ErrorKind::Config, join_issues(issues)), issues_(std::move(issues)) {}

OrbitModel OrbitSpec::build() const {
  if (kind == "circular") return OrbitModel::circular(R, n);
  if (kind == "eccentric") {
    const double d2r = M_PI / 180.0;
    return OrbitModel::eccentric(a, e, mu, nu_start_deg * d2r, nu_end_deg * d2r,
                                 nu_start_deg * d2r);
  }
  throw Error(ErrorKind::Config, "orbit.kind: unknown model '" + kind + "'");
}

void ScenarioConfig::validate() const {
  std::vector<std::string> bad;
  auto need = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  auto finite = [](const auto& m) { return m.allFinite(); };

  need(orbit.kind == "circular" || orbit.kind == "eccentric",
       "orbit.kind: must be \"circular\" or \"eccentric\"");
  if (orbit.kind == "circular") {
    need(orbit.R > 0.0, "orbit.R: must be > 0");
    need(orbit.n > 0.0, "orbit.n: must be > 0");
  } else if (orbit.kind == "eccentric") {
    need(orbit.a > 0.0, "orbit.a: must be > 0");
    need(orbit.e >= 0.0 && orbit.e < 1.0, "orbit.e: must lie in [0, 1)");
    need(orbit.mu > 0.0, "orbit.mu: must be > 0");
    need(orbit.nu_end_deg > orbit.nu_start_deg, "orbit.nu_end_deg: must exceed nu_start_deg");
  }
  need(finite(x0), "x0: must be finite");
  need(finite(x1), "x1: must be finite");
  need(finite(Q) && symmetric(Q) && min_eig(Q) >= -1e-12, "Q: must be symmetric PSD");
  need(finite(Qf) && symmetric(Qf) && min_eig(Qf) >= -1e-12, "Qf: must be symmetric PSD");
  need(finite(R) && symmetric(R) && min_eig(R) > 0.0, "R: must be symmetric positive definite");
  need(length_unit > 0.0, "length_unit: must be > 0");
  need(std::isfinite(time_unit), "time_unit: must be finite");
  need(epsilon > 0.0 && epsilon < 1.0, "epsilon: must lie in (0, 1)");
  need(u_max > 0.0 && std::isfinite(u_max), "u_max: must be > 0");
  need(t_min > 0.0, "t_min: must be > 0");
  need(t_max >= t_min && std::isfinite(t_max), "t_max: must be finite and >= t_min");
  need(w_t >= 0.0, "w_t: must be >= 0");
  need(w_u >= 0.0, "w_u: must be >= 0");
  need(n_dag >= 1, "n_dag: must be >= 1");
  need(steps >= 1, "steps: must be >= 1");
  if (n_om) need(*n_om >= 1, "n_om: must be >= 1");
  if (mte) {
    need(mte->first >= 0 && mte->first <= mte->second, "mte: need 0 <= first <= last");
    const int nom = n_om ? *n_om : n_dag - (mte->second - mte->first + 1);
    need(nom >= 1, "mte: leaves no follower segments");
    need(mte->second < nom, "mte.last: must be < N_om (" + std::to_string(nom) + ")");
  }
  need(!follower || mte.has_value(), "follower: a bi-level solve needs an mte range");
  for (std::size_t i = 0; i < obstacles.size(); ++i) {
    const std::string f = "obstacles[" + std::to_string(i) + "]";
    need(obstacles[i].radius > 0.0, f + ".radius: must be > 0");
    need(obstacles[i].center.allFinite(), f + ".center: must be finite");
  }
  try {
    solver.validate();
  } catch (const Error& e) {
    bad.push_back(std::string("solver: ") + e.what());
  }
  need(runs >= 1, "runs: must be >= 1");
  need(threads >= 0, "threads: must be >= 0");
  need(certificate_samples >= 1, "certificate_samples: must be >= 1");
  if (t_rec) need(*t_rec > 0.0, "t_rec: must be > 0");
  if (u_bar) need(u_bar->allFinite() && (u_bar->array() >= 0.0).all(), "u_bar: must be >= 0");
  if (bad.empty()) {
    try {
      NlpProblem(model(), transcription(), scenario());
    } catch (const Error& e) {
      bad.push_back(e.what());
    }
  }
  if (!bad.empty()) throw ConfigError(std::move(bad));
}

TranscriptionConfig ScenarioConfig::transcription() const {
  TranscriptionConfig c;
  c.n_dag = n_dag;
  c.steps = steps;
  c.n_om = adaptive_segments(mte ? mte->second - mte->first + 1 : 0, n_dag, n_om);
  c.x0 = x0;
  c.x1 = x1;
  c.Q = Q;
  c.R = R;
  c.Qf = Qf;
  c.length_unit = length_unit;
  c.time_unit = time_unit;
  c.obstacles = obstacles;
  c.u_max = u_max;
  c.t_min = t_min;
  c.t_max = t_max;
  c.w_t = w_t;
  c.w_u = w_u;
  c.follower = follower;
  return c;
}

MteScenario ScenarioConfig::scenario() const {
  if (!mte) return MteScenario::none();
  return MteScenario::range(mte->first, mte->second);
}

Vec3 ScenarioConfig::recovery_bound() const { return u_bar ? *u_bar : Vec3::Constant(u_max); }

ScenarioConfig parse_scenario(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_col(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ConfigError({source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " +
                       e.what()});
  }
  ScenarioConfig c;
  std::vector<std::string> issues;
  {
    Reader r(j, "", issues);
    r.string("name", c.name);
    if (const json* o = r.get("orbit")) {
      Reader ro(*o, "orbit", issues);
      ro.string("kind", c.orbit.kind);
      ro.number("R", c.orbit.R);
      ro.number("n", c.orbit.n);
      ro.number("a", c.orbit.a);
      ro.number("e", c.orbit.e);
      ro.number("mu", c.orbit.mu);
      ro.number("nu_start_deg", c.orbit.nu_start_deg);
      ro.number("nu_end_deg", c.orbit.nu_end_deg);
    }
    r.vector<6>("x0", c.x0);
    r.vector<6>("x1", c.x1);
    r.matrix<6>("Q", c.Q);
    r.matrix<3>("R", c.R);
    r.matrix<6>("Qf", c.Qf);
    r.number("length_unit", c.length_unit);
    r.number("time_unit", c.time_unit);
    r.number("epsilon", c.epsilon);
    r.number("u_max", c.u_max);
    r.number("t_min", c.t_min);
    r.number("t_max", c.t_max);
    r.number("w_t", c.w_t);
    r.number("w_u", c.w_u);
    r.integer("n_dag", c.n_dag);
    r.integer("steps", c.steps);
    r.opt_integer("n_om", c.n_om);
    r.boolean("follower", c.follower);
    if (const json* m = r.get("mte"); m && m->is_null()) {
      c.mte.reset();
    } else if (m) {
      Reader rm(*m, "mte", issues);
      int first = 0, last = -1;
      rm.integer("first", first);
      rm.integer("last", last);
      c.mte = std::make_pair(first, last);
    }
    if (const json* obs = r.get("obstacles")) {
      if (!obs->is_array()) {
        r.fail("obstacles", "expected an array");
      } else {
        for (std::size_t i = 0; i < obs->size(); ++i) {
          Reader ro((*obs)[i], "obstacles[" + std::to_string(i) + "]", issues);
          Obstacle ob;
          ro.vector<3>("center", ob.center);
          ro.number("radius", ob.radius);
          c.obstacles.push_back(ob);
        }
      }
    }
    if (const json* s = r.get("solver")) {
      Reader rs(*s, "solver", issues);
      rs.integer("max_outer_iterations", c.solver.max_outer_iterations);
      rs.integer("max_inner_iterations", c.solver.max_inner_iterations);
      rs.number("constraint_tolerance", c.solver.constraint_tolerance);
      rs.number("stationarity_tolerance", c.solver.stationarity_tolerance);
      rs.number("initial_penalty", c.solver.initial_penalty);
      rs.number("penalty_growth", c.solver.penalty_growth);
      rs.number("max_penalty", c.solver.max_penalty);
      rs.number("curvature_switch", c.solver.curvature_switch);
      rs.number("smoothing", c.solver.smoothing);
    }
    r.integer("runs", c.runs);
    r.uint64("seed", c.seed);
    r.integer("threads", c.threads);
    r.integer("certificate_samples", c.certificate_samples);
    r.opt_number("t_rec", c.t_rec);
    if (const json* u = r.get("u_bar"); u && !u->is_null()) {
      Vec3 v;
      if (r.vector<3>(*u, "u_bar", v)) c.u_bar = v;
    }
  }
  if (!issues.empty()) {
    for (auto& i : issues) i = source + ": " + i;
    throw ConfigError(std::move(issues));
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    std::vector<std::string> v = e.issues();
    for (auto& i : v) i = source + ": " + i;
    throw ConfigError(std::move(v));
  }
  return c;
}

ScenarioConfig load_scenario(const std::string& path) {
  return parse_scenario(read_text_file(path), path);
}

std::string dump_scenario(const ScenarioConfig& c) {
  json j;
  j["name"] = c.name;
  j["orbit"] = {{"kind", c.orbit.kind}};
  if (c.orbit.kind == "eccentric") {
    j["orbit"]["a"] = c.orbit.a;
    j["orbit"]["e"] = c.orbit.e;
    j["orbit"]["mu"] = c.orbit.mu;
    j["orbit"]["nu_start_deg"] = c.orbit.nu_start_deg;
    j["orbit"]["nu_end_deg"] = c.orbit.nu_end_deg;
  } else {
    j["orbit"]["R"] = c.orbit.R;
    j["orbit"]["n"] = c.orbit.n;
  }
  j["x0"] = vector_json<6>(c.x0);
  j["x1"] = vector_json<6>(c.x1);
  j["Q"] = matrix_json<6>(c.Q);
  j["R"] = matrix_json<3>(c.R);
  j["Qf"] = matrix_json<6>(c.Qf);
  j["length_unit"] = c.length_unit;
  j["time_unit"] = c.time_unit;
  j["epsilon"] = c.epsilon;
  j["u_max"] = c.u_max;
  j["t_min"] = c.t_min;
  j["t_max"] = c.t_max;
  j["w_t"] = c.w_t;
  j["w_u"] = c.w_u;
  j["n_dag"] = c.n_dag;
  j["steps"] = c.steps;
  j["n_om"] = c.n_om ? json(*c.n_om) : json(nullptr);
  j["follower"] = c.follower;
  j["mte"] = c.mte ? json{{"first", c.mte->first}, {"last", c.mte->second}} : json(nullptr);
  j["obstacles"] = json::array();
  for (const Obstacle& o : c.obstacles) {
    j["obstacles"].push_back({{"center", vector_json<3>(o.center)}, {"radius", o.radius}});
  }
  const SolveOptions& s = c.solver;
  j["solver"] = {{"max_outer_iterations", s.max_outer_iterations},
                 {"max_inner_iterations", s.max_inner_iterations},
                 {"constraint_tolerance", s.constraint_tolerance},
                 {"stationarity_tolerance", s.stationarity_tolerance},
                 {"initial_penalty", s.initial_penalty},
                 {"penalty_growth", s.penalty_growth},
                 {"max_penalty", s.max_penalty},
                 {"curvature_switch", s.curvature_switch},
                 {"smoothing", s.smoothing}};
  j["runs"] = c.runs;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["certificate_samples"] = c.certificate_samples;
  j["t_rec"] = c.t_rec ? json(*c.t_rec) : json(nullptr);
  j["u_bar"] = c.u_bar ? vector_json<3>(*c.u_bar) : json(nullptr);
  return j.dump(2) + "\n";
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + path + "'");
}

}  // namespace mtr
