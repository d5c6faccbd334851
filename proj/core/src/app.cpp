#include "mtrobust/app.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace mtr {

using json = nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

// JSON has no inf/nan; they are written as strings and read back.
json num(double x) {
  if (std::isfinite(x)) return x;
  if (std::isnan(x)) return "nan";
  return x > 0 ? "inf" : "-inf";
}

double read_num(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    if (s == "nan") return kNaN;
  }
  throw Error(ErrorKind::Io, "expected a number, got " + j.dump());
}

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(num(v[i]));
  return a;
}

Eigen::VectorXd read_vec(const json& j) {
  if (!j.is_array()) throw Error(ErrorKind::Io, "expected an array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = read_num(j[i]);
  return v;
}

json mat_json(const Mat6& m) {
  json a = json::array();
  for (int i = 0; i < 6; ++i) a.push_back(vec_json(m.row(i).transpose()));
  return a;
}

std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c == '\n' ? ' ' : c;
  }
  return q + "\"";
}

std::filesystem::path out_path(const CommandOptions& o, const std::string& name) {
  std::filesystem::path dir(o.out.empty() ? "." : o.out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create '" + dir.string() + "': " + ec.message());
  return dir / name;
}

double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return kNaN;
  const double pos = q * (sorted.size() - 1);
  const std::size_t i = static_cast<std::size_t>(pos);
  if (i + 1 >= sorted.size()) return sorted.back();
  return sorted[i] + (pos - i) * (sorted[i + 1] - sorted[i]);
}

int config_failure(std::ostream& err, const std::exception& e) {
  err << "error: " << e.what() << "\n";
  return kExitConfig;
}

}  // namespace

std::string dump_checkpoint(const Checkpoint& cp) {
  json j;
  j["format"] = "mtrobust-checkpoint";
  j["version"] = kCheckpointVersion;
  j["seed"] = cp.seed;
  j["scenario"] = json::parse(dump_scenario(cp.scenario));
  const SolveReport& r = cp.report;
  json rep;
  rep["status"] = status_name(r.status);
  rep["objective"] = num(r.objective);
  rep["max_violation"] = num(r.max_violation);
  rep["stationarity"] = num(r.stationarity);
  rep["outer_iterations"] = r.outer_iterations;
  rep["inner_iterations"] = r.inner_iterations;
  rep["wall_time"] = num(r.wall_time);
  rep["penalty"] = num(r.penalty);
  rep["message"] = r.message;
  rep["worst_rows"] = json::array();
  for (const auto& [label, v] : r.worst_rows) rep["worst_rows"].push_back({label, num(v)});
  rep["accepted_violations"] = json::array();
  for (double v : r.accepted_violations) rep["accepted_violations"].push_back(num(v));
  j["report"] = rep;
  j["z"] = vec_json(cp.z);
  j["multipliers"] = vec_json(cp.multipliers);
  return j.dump(2) + "\n";
}

Checkpoint parse_checkpoint(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Io, source + ": " + e.what());
  }
  Checkpoint cp;
  try {
    if (j.value("format", "") != "mtrobust-checkpoint") {
      throw Error(ErrorKind::Io, "not a solution checkpoint");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorKind::Io, "unsupported checkpoint version " + j.at("version").dump());
    }
    cp.seed = j.at("seed").get<std::uint64_t>();
    cp.scenario = parse_scenario(j.at("scenario").dump(), source + ":scenario");
    const json& rep = j.at("report");
    SolveReport& r = cp.report;
    r.status = status_from_name(rep.at("status").get<std::string>());
    r.objective = read_num(rep.at("objective"));
    r.max_violation = read_num(rep.at("max_violation"));
    r.stationarity = read_num(rep.at("stationarity"));
    r.outer_iterations = rep.at("outer_iterations").get<int>();
    r.inner_iterations = rep.at("inner_iterations").get<int>();
    r.wall_time = read_num(rep.at("wall_time"));
    r.penalty = read_num(rep.at("penalty"));
    r.message = rep.at("message").get<std::string>();
    for (const json& w : rep.at("worst_rows")) {
      r.worst_rows.emplace_back(w.at(0).get<std::string>(), read_num(w.at(1)));
    }
    for (const json& v : rep.at("accepted_violations")) r.accepted_violations.push_back(read_num(v));
    cp.z = read_vec(j.at("z"));
    cp.multipliers = read_vec(j.at("multipliers"));
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Io, source + ": malformed checkpoint: " + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Io) throw Error(ErrorKind::Io, source + ": " + e.what());
    throw;
  }
  const VariableLayout l = make_problem(cp.scenario).layout();
  if (cp.z.size() != l.size()) {
    throw Error(ErrorKind::Io, source + ": decision vector has " + std::to_string(cp.z.size()) +
                                   " entries, the scenario needs " + std::to_string(l.size()));
  }
  return cp;
}

Checkpoint load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_text_file(path), path);
}

NlpProblem make_problem(const ScenarioConfig& cfg) {
  return NlpProblem(cfg.model(), cfg.transcription(), cfg.scenario());
}

Checkpoint solve_scenario(const ScenarioConfig& cfg, std::uint64_t seed,
                          const Eigen::VectorXd* warm_start) {
  const NlpProblem p = make_problem(cfg);
  Eigen::VectorXd z0;
  if (warm_start) {
    if (warm_start->size() != p.num_vars()) {
      throw Error(ErrorKind::InvalidInput, "warm start does not match the scenario layout");
    }
    z0 = *warm_start;
  } else {
    std::mt19937_64 rng(seed);
    z0 = initialize(p, rng).pack();
  }
  SolveOptions opts = cfg.solver;
  opts.seed = seed;
  SolveResult r = solve(p, z0, opts);
  Checkpoint cp;
  cp.scenario = cfg;
  cp.seed = seed;
  cp.z = std::move(r.z);
  cp.multipliers = std::move(r.multipliers);
  cp.report = std::move(r.report);
  return cp;
}

PiecewiseTrajectory reference_of(const Checkpoint& cp) {
  const NlpProblem p = make_problem(cp.scenario);
  const DecisionVector dv = DecisionVector::unpack(cp.z, p.layout());
  PiecewiseTrajectory ref;
  ref.model = p.model();
  ref.t0 = 0.0;
  ref.duration = dv.T_dag;
  ref.x = dv.X_dag;
  ref.u = dv.U_dag;
  ref.steps_per_segment = p.config().steps;
  return ref;
}

OutageWindow outage_of(const Checkpoint& cp) {
  const MteScenario m = cp.scenario.scenario();
  if (m.empty()) return {0.0, 0.0};
  const NlpProblem p = make_problem(cp.scenario);
  const DecisionVector dv = DecisionVector::unpack(cp.z, p.layout());
  // leader-only solutions carry the outage on the nominal follower grid over [0, T_dag]
  const double T_om = p.has_follower() ? dv.T_om : dv.T_dag;
  const int n_om = cp.scenario.transcription().n_om;
  OutageWindow w;
  w.tau1 = m.tau1(T_om, n_om);
  w.tau2 = std::min(w.tau1 + m.dtau(T_om, n_om), dv.T_dag);
  return w;
}

double envelope_consistency(const AssumptionBounds& b, double t, double delta, int steps) {
  if (!(delta > 0.0) || !std::isfinite(t)) return kNaN;
  const double h = t / steps;
  auto f = [&](double r) { return 0.5 * b.H * r * r + b.alpha * r + b.f_max; };
  double r = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double k1 = f(r);
    const double k2 = f(r + 0.5 * h * k1);
    const double k3 = f(r + 0.5 * h * k2);
    const double k4 = f(r + h * k3);
    r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return std::abs(r - delta) / delta;
}

CertifyReport certify(const Checkpoint& cp, double epsilon, int samples) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw Error(ErrorKind::InvalidInput, "epsilon must lie in (0, 1)");
  }
  CertifyReport r;
  const PiecewiseTrajectory ref = reference_of(cp);
  r.mission_time = ref.duration;
  r.window = outage_of(cp);
  if (r.window.duration() <= 0.0) {
    r.zero_outage = true;
    r.triad.degenerate = true;
    r.certificate.epsilon = epsilon;
    return r;
  }
  BoundsOptions bo;
  bo.samples = samples;
  bo.epsilon = epsilon;
  r.bounds = extract_bounds(ref, r.window, bo);
  r.certificate = make_certificate(r.bounds, epsilon);
  const Realization real = simulate_coasting(ref, r.window, samples);
  r.triad = certificate_triad(ref, real, r.window, r.bounds, epsilon);
  if (!r.certificate.unbounded && r.certificate.delta > 0.0) {
    r.envelope_gap = envelope_consistency(r.bounds, r.certificate.dtau_max, r.certificate.delta);
    if (!(r.envelope_gap <= 1e-6)) {
      throw Error(ErrorKind::Divergence,
                  "envelope re-check failed: relative gap " + fmt(r.envelope_gap));
    }
  }
  return r;
}

std::string certificate_json(const CertifyReport& r) {
  json j;
  j["format"] = "mtrobust-certificate";
  j["version"] = 1;
  j["zero_outage"] = r.zero_outage;
  j["mission_time"] = num(r.mission_time);
  j["tau1"] = num(r.window.tau1);
  j["tau2"] = num(r.window.tau2);
  j["epsilon"] = num(r.certificate.epsilon);
  if (!r.zero_outage) {
    const AssumptionBounds& b = r.bounds;
    j["bounds"] = {{"alpha", num(b.alpha)},        {"beta", num(b.beta)},
                   {"H", num(b.H)},                {"u_min", num(b.u_min_dag)},
                   {"u_max", num(b.u_max_dag)},    {"f_min", num(b.f_min)},
                   {"f_max", num(b.f_max)},        {"tube_radius", num(b.tube_radius)},
                   {"certifiable", b.certifiable}};
    const Certificate& c = r.certificate;
    j["certificate"] = {{"delta_hat", num(c.delta_hat)},
                        {"delta", num(c.delta)},
                        {"discriminant", num(c.discriminant)},
                        {"branch", branch_name(c.branch)},
                        {"dtau_max", num(c.dtau_max)},
                        {"r_sat", num(c.r_sat)},
                        {"unbounded", c.unbounded},
                        {"envelope_gap", num(r.envelope_gap)}};
  }
  const CertificateTriad& t = r.triad;
  const double T = r.mission_time > 0.0 ? r.mission_time : kNaN;
  j["triad"] = {{"delta_theoretical", num(t.delta_theoretical)},
                {"delta_computed", num(t.delta_computed)},
                {"dtau_theoretical", num(t.dtau_theoretical)},
                {"dtau_computed", num(t.dtau_computed)},
                {"dtau_actual", num(t.dtau_actual)},
                {"dtau_theoretical_normalized", num(t.dtau_theoretical / T)},
                {"dtau_computed_normalized", num(t.dtau_computed / T)},
                {"dtau_actual_normalized", num(t.dtau_actual / T)},
                {"degenerate", t.degenerate},
                {"certified_beyond_outage", t.certified_beyond_outage}};
  return j.dump(2) + "\n";
}

RecoverReport recover(const Checkpoint& cp, std::optional<double> t_rec, std::optional<Vec3> u_bar) {
  RecoverReport r;
  const PiecewiseTrajectory ref = reference_of(cp);
  r.mission_time = ref.duration;
  r.window = outage_of(cp);
  r.dtau_normalized = r.window.duration() / ref.duration;
  const double T_rec = t_rec ? *t_rec : cp.scenario.t_rec ? *cp.scenario.t_rec
                                                          : ref.t_end() - r.window.tau2;
  if (!(T_rec > 0.0)) throw Error(ErrorKind::InvalidInput, "no recovery horizon after the outage");
  Vec6 xi_plus = Vec6::Zero();
  if (r.window.duration() > 0.0) {
    const Realization real = simulate_coasting(ref, r.window, 1);
    xi_plus = real.x.back() - ref.state_at(r.window.tau2);
  }
  r.gramian = recovery_report(ref, r.window.tau2, T_rec, xi_plus,
                              u_bar ? *u_bar : cp.scenario.recovery_bound());
  return r;
}

std::string recovery_json(const RecoverReport& r) {
  const GramianReport& g = r.gramian;
  json j;
  j["format"] = "mtrobust-recovery";
  j["version"] = 1;
  j["tau1"] = num(r.window.tau1);
  j["tau2"] = num(r.window.tau2);
  j["mission_time"] = num(r.mission_time);
  j["dtau_normalized"] = num(r.dtau_normalized);
  j["T_rec"] = num(g.T_rec);
  j["xi_plus"] = vec_json(g.xi_plus);
  j["W"] = mat_json(g.W);
  j["eig_min"] = num(g.eig_min);
  j["eig_max"] = num(g.eig_max);
  j["E_min"] = num(g.E_min);
  j["E_avail"] = num(g.E_avail);
  j["r_e"] = num(g.r_e);
  j["feasible"] = g.feasible;
  j["infinite_margin"] = g.infinite_margin;
  j["singular"] = g.singular;
  return j.dump(2) + "\n";
}

EnsembleRow ensemble_row(const ScenarioConfig& cfg, std::uint64_t seed) {
  EnsembleRow row;
  row.seed = seed;
  row.status = SolveStatus::Diverged;
  Checkpoint cp;
  try {
    cp = solve_scenario(cfg, seed);
  } catch (const std::exception& e) {
    row.note = e.what();
    return row;
  }
  row.status = cp.report.status;
  row.J = cp.report.objective;
  row.T = cp.z.size() ? cp.z[0] : kNaN;
  row.max_violation = cp.report.max_violation;
  if (row.status != SolveStatus::Converged) {
    row.note = cp.report.message;
    return row;
  }
  try {
    const CertifyReport c = certify(cp, cfg.epsilon, cfg.certificate_samples);
    if (!c.zero_outage) {
      row.certified = true;
      row.delta_theoretical = c.triad.delta_theoretical;
      row.delta_computed = c.triad.delta_computed;
      row.dtau_theoretical = c.triad.dtau_theoretical;
      row.dtau_computed = c.triad.dtau_computed;
      row.dtau_actual = c.triad.dtau_actual;
      row.r_sat = c.certificate.r_sat;
      row.alpha = c.bounds.alpha;
      row.beta = c.bounds.beta;
      row.H = c.bounds.H;
      row.f_min = c.bounds.f_min;
      row.f_max = c.bounds.f_max;
      row.branch = branch_name(c.certificate.branch);
      row.r_e = recover(cp).gramian.r_e;
    }
  } catch (const std::exception& e) {
    row.note = e.what();
  }
  return row;
}

std::vector<EnsembleRow> run_ensemble(const ScenarioConfig& cfg, int runs, int threads) {
  if (runs < 1) throw Error(ErrorKind::InvalidInput, "runs must be >= 1");
  std::vector<EnsembleRow> rows(runs);
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, runs);
  std::atomic<int> next{0};
  auto work = [&] {
    for (int i = next++; i < runs; i = next++) rows[i] = ensemble_row(cfg, cfg.seed + i);
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return rows;
}

void write_ensemble_csv(std::ostream& os, const std::vector<EnsembleRow>& rows) {
  os << "# mtrobust-ensemble v" << kEnsembleSchemaVersion << "\n";
  os << "seed,status,J,T,max_violation,certified,delta_theoretical,delta_computed,"
        "dtau_theoretical,dtau_computed,dtau_actual,dtau_theoretical_norm,dtau_computed_norm,"
        "dtau_actual_norm,r_sat,r_e,alpha,beta,H,f_min,f_max,branch,note\n";
  for (const EnsembleRow& r : rows) {
    os << r.seed << ',' << status_name(r.status) << ',' << fmt(r.J) << ',' << fmt(r.T) << ','
       << fmt(r.max_violation) << ',' << (r.certified ? 1 : 0) << ',' << fmt(r.delta_theoretical)
       << ',' << fmt(r.delta_computed) << ',' << fmt(r.dtau_theoretical) << ','
       << fmt(r.dtau_computed) << ',' << fmt(r.dtau_actual) << ',' << fmt(r.dtau_theoretical / r.T)
       << ',' << fmt(r.dtau_computed / r.T) << ',' << fmt(r.dtau_actual / r.T) << ','
       << fmt(r.r_sat) << ',' << fmt(r.r_e) << ',' << fmt(r.alpha) << ',' << fmt(r.beta) << ','
       << fmt(r.H) << ',' << fmt(r.f_min) << ',' << fmt(r.f_max) << ',' << r.branch << ','
       << csv_field(r.note) << '\n';
  }
}

double reference_feasibility_ratio(const std::string& scenario) {
  if (scenario == "circular") return 48.0;
  if (scenario == "eccentric_case1") return 51.2;
  if (scenario == "eccentric_case2") return 54.4;
  return kNaN;
}

EnsembleSummary summarize(const std::string& scenario, const std::vector<EnsembleRow>& rows,
                          int bins) {
  EnsembleSummary s;
  s.scenario = scenario;
  s.runs = static_cast<int>(rows.size());
  std::vector<const EnsembleRow*> ok;
  for (const EnsembleRow& r : rows) {
    if (r.status != SolveStatus::Converged) continue;
    ++s.converged;
    ok.push_back(&r);
    if (r.certified && r.dtau_actual > 0.0 && r.delta_computed > 0.0) {
      ++s.ordering_checked;
      if (r.dtau_theoretical > r.dtau_computed) ++s.ordering_violations;
    }
  }
  s.feasibility_ratio = s.runs ? 100.0 * s.converged / s.runs : 0.0;

  using Get = double (*)(const EnsembleRow&);
  const std::vector<std::pair<const char*, Get>> metrics = {
      {"J", [](const EnsembleRow& r) { return r.J; }},
      {"delta_theoretical", [](const EnsembleRow& r) { return r.delta_theoretical; }},
      {"delta_computed", [](const EnsembleRow& r) { return r.delta_computed; }},
      {"dtau_theoretical", [](const EnsembleRow& r) { return r.dtau_theoretical; }},
      {"dtau_computed", [](const EnsembleRow& r) { return r.dtau_computed; }},
      {"dtau_actual", [](const EnsembleRow& r) { return r.dtau_actual; }},
      {"dtau_theoretical_norm", [](const EnsembleRow& r) { return r.dtau_theoretical / r.T; }},
      {"dtau_computed_norm", [](const EnsembleRow& r) { return r.dtau_computed / r.T; }},
      {"dtau_actual_norm", [](const EnsembleRow& r) { return r.dtau_actual / r.T; }},
      {"r_sat", [](const EnsembleRow& r) { return r.r_sat; }},
      {"r_e", [](const EnsembleRow& r) { return r.r_e; }},
      {"alpha", [](const EnsembleRow& r) { return r.alpha; }},
      {"beta", [](const EnsembleRow& r) { return r.beta; }},
      {"H", [](const EnsembleRow& r) { return r.H; }},
      {"f_min", [](const EnsembleRow& r) { return r.f_min; }},
      {"f_max", [](const EnsembleRow& r) { return r.f_max; }},
  };
  for (const auto& [name, get] : metrics) {
    MetricSummary m;
    m.name = name;
    std::vector<double> v;
    const bool all_rows = std::string(name) == "J";
    for (const EnsembleRow* r : ok) {
      if (!all_rows && !r->certified) continue;
      const double x = get(*r);
      if (std::isfinite(x)) v.push_back(x);
    }
    std::sort(v.begin(), v.end());
    m.count = static_cast<int>(v.size());
    m.min = v.empty() ? kNaN : v.front();
    m.max = v.empty() ? kNaN : v.back();
    m.q25 = quantile(v, 0.25);
    m.median = quantile(v, 0.5);
    m.q75 = quantile(v, 0.75);
    if (!v.empty() && bins > 0) {
      const double lo = m.min, hi = m.max > m.min ? m.max : m.min + 1.0;
      for (int b = 0; b <= bins; ++b) m.edges.push_back(lo + (hi - lo) * b / bins);
      m.counts.assign(bins, 0);
      for (double x : v) {
        const int b = std::min(bins - 1, static_cast<int>((x - lo) / (hi - lo) * bins));
        ++m.counts[b];
      }
    }
    s.metrics.push_back(std::move(m));
  }
  return s;
}

std::string summary_json(const EnsembleSummary& s) {
  json j;
  j["format"] = "mtrobust-ensemble-summary";
  j["version"] = kEnsembleSchemaVersion;
  j["scenario"] = s.scenario;
  j["runs"] = s.runs;
  j["converged"] = s.converged;
  j["feasibility_ratio_percent"] = num(s.feasibility_ratio);
  j["reference_feasibility_ratio_percent"] = num(reference_feasibility_ratio(s.scenario));
  j["reference_feasibility_ratios_percent"] = {
      {"circular", 48.0}, {"eccentric_case1", 51.2}, {"eccentric_case2", 54.4}};
  j["ordering_checked"] = s.ordering_checked;
  j["ordering_violations"] = s.ordering_violations;
  json m = json::object();
  for (const MetricSummary& x : s.metrics) {
    m[x.name] = {{"count", x.count},        {"min", num(x.min)},   {"q25", num(x.q25)},
                 {"median", num(x.median)}, {"q75", num(x.q75)},   {"max", num(x.max)}};
  }
  j["metrics"] = m;
  return j.dump(2) + "\n";
}

void write_histograms_csv(std::ostream& os, const EnsembleSummary& s) {
  os << "# mtrobust-histograms v" << kEnsembleSchemaVersion << "\n";
  os << "metric,bin,lo,hi,count\n";
  for (const MetricSummary& m : s.metrics) {
    for (std::size_t b = 0; b < m.counts.size(); ++b) {
      os << m.name << ',' << b << ',' << fmt(m.edges[b]) << ',' << fmt(m.edges[b + 1]) << ','
         << m.counts[b] << '\n';
    }
  }
}

std::string variable_label(const VariableLayout& l, int i) {
  auto block = [](const char* name, int k, int comp) {
    return std::string(name) + "[" + std::to_string(k) + "]." + std::to_string(comp);
  };
  if (i < 0 || i >= l.size()) return "?";
  if (i == l.t_dag()) return "T_dag";
  if (i < l.u_dag(0)) return block("X_dag", (i - l.x_dag(0)) / 6, (i - l.x_dag(0)) % 6);
  if (i < l.t_om()) return block("U_dag", (i - l.u_dag(0)) / 3, (i - l.u_dag(0)) % 3);
  if (i == l.t_om()) return "T_om";
  if (i < l.u_om(0)) return block("X_om", (i - l.x_om(0)) / 6, (i - l.x_om(0)) % 6);
  if (i < l.lam(0)) return block("U_om", (i - l.u_om(0)) / 3, (i - l.u_om(0)) % 3);
  return block("L_om", (i - l.lam(0)) / 6, (i - l.lam(0)) % 6);
}

Eigen::VectorXd jacobian_point(const NlpProblem& p, PointSource src, std::uint64_t seed,
                               const std::string& file) {
  std::mt19937_64 rng(seed);
  switch (src) {
    case PointSource::Simulated:
      return initialize(p, rng).pack();
    case PointSource::Random: {
      // uniform in finite boxes, scale-sized elsewhere
      std::uniform_real_distribution<double> U(-1.0, 1.0);
      Eigen::VectorXd z(p.num_vars());
      for (int i = 0; i < z.size(); ++i) {
        const double lo = p.lower()[i], hi = p.upper()[i];
        z[i] = std::isfinite(lo) && std::isfinite(hi) ? lo + 0.5 * (U(rng) + 1.0) * (hi - lo)
                                                      : p.var_scale()[i] * U(rng);
      }
      return z;
    }
    case PointSource::File: {
      const Checkpoint cp = load_checkpoint(file);
      if (cp.z.size() != p.num_vars()) {
        throw Error(ErrorKind::InvalidInput, "point file does not match the scenario layout");
      }
      return cp.z;
    }
  }
  return {};
}

JacobianCheck check_jacobian(const NlpProblem& p, const Eigen::VectorXd& z, double step) {
  const Eigen::VectorXd& xs = p.var_scale();
  const Eigen::VectorXd rs = p.row_scale().cwiseInverse();
  const Eigen::SparseMatrix<double> J = p.jacobian(z);
  const auto pattern = p.sparsity();
  // column-wise central differences in scaled variables
  std::vector<std::vector<std::pair<int, int>>> by_col(p.num_vars());
  for (std::size_t k = 0; k < pattern.size(); ++k) {
    by_col[pattern[k].second].emplace_back(pattern[k].first, static_cast<int>(k));
  }
  JacobianCheck out;
  out.entries.resize(pattern.size());
  std::vector<double> e;
  e.reserve(pattern.size());
  for (int c = 0; c < p.num_vars(); ++c) {
    if (by_col[c].empty()) continue;
    Eigen::VectorXd zp = z, zm = z;
    zp[c] += step * xs[c];
    zm[c] -= step * xs[c];
    const Eigen::VectorXd d = (p.constraints(zp) - p.constraints(zm)).cwiseProduct(rs) / (2.0 * step);
    for (const auto& [r, k] : by_col[c]) {
      JacobianEntry& en = out.entries[k];
      en.row = r;
      en.col = c;
      en.exact = J.coeff(r, c) * xs[c] * rs[r];
      en.fd = d[r];
      en.e_rel = std::abs(en.exact - en.fd) / (1.0 + std::abs(en.fd));
      out.max_e_rel = std::max(out.max_e_rel, en.e_rel);
      e.push_back(en.e_rel);
    }
  }
  if (!e.empty()) {
    std::nth_element(e.begin(), e.begin() + e.size() / 2, e.end());
    out.median_e_rel = e[e.size() / 2];
  }
  return out;
}

void write_erel_csv(std::ostream& os, const NlpProblem& p, const JacobianCheck& c) {
  os << "# mtrobust-jacobian v1\n";
  os << "row,col,row_label,col_label,exact,fd,e_rel\n";
  for (const JacobianEntry& e : c.entries) {
    os << e.row << ',' << e.col << ',' << p.row_label(e.row) << ','
       << variable_label(p.layout(), e.col) << ',' << fmt(e.exact) << ',' << fmt(e.fd) << ','
       << fmt(e.e_rel) << '\n';
  }
}

int cmd_solve(const CommandOptions& o, std::ostream& out, std::ostream& err) {
  ScenarioConfig cfg;
  Eigen::VectorXd warm;
  try {
    cfg = load_scenario(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (!o.warm_start.empty()) warm = load_checkpoint(o.warm_start).z;
  } catch (const Error& e) {
    return config_failure(err, e);
  }
  Checkpoint cp;
  try {
    cp = solve_scenario(cfg, cfg.seed, warm.size() ? &warm : nullptr);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::Config ? kExitConfig : kExitDiverged;
  }
  const auto path = out_path(o, "solution_" + std::to_string(cfg.seed) + ".json");
  write_text_file(path.string(), dump_checkpoint(cp));
  const SolveReport& r = cp.report;
  out << status_name(r.status) << " J=" << fmt(r.objective) << " violation=" << fmt(r.max_violation)
      << " stationarity=" << fmt(r.stationarity) << " outer=" << r.outer_iterations
      << " inner=" << r.inner_iterations << " -> " << path.string() << "\n";
  if (r.status == SolveStatus::Diverged) {
    err << "solve diverged: " << r.message << "\n";
    for (const auto& [label, v] : r.worst_rows) err << "  " << label << " " << fmt(v) << "\n";
    return kExitDiverged;
  }
  return kExitOk;
}

int cmd_certify(const CommandOptions& o, std::ostream& out, std::ostream& err) {
  Checkpoint cp;
  try {
    cp = load_checkpoint(o.solution);
  } catch (const Error& e) {
    return config_failure(err, e);
  }
  const double eps = o.epsilon ? *o.epsilon : cp.scenario.epsilon;
  CertifyReport r;
  try {
    r = certify(cp, eps, cp.scenario.certificate_samples);
  } catch (const AssumptionViolation& e) {
    err << "assumption violated: " << e.what() << "\n";
    return kExitGate;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::InvalidInput ? kExitConfig : kExitGate;
  }
  const auto path = out_path(o, "certificate.json");
  write_text_file(path.string(), certificate_json(r));
  if (r.zero_outage) {
    out << "zero outage: degenerate triad -> " << path.string() << "\n";
  } else {
    out << "delta=" << fmt(r.certificate.delta) << " dtau_max=" << fmt(r.certificate.dtau_max)
        << " branch=" << branch_name(r.certificate.branch) << " r_sat=" << fmt(r.certificate.r_sat)
        << " -> " << path.string() << "\n";
  }
  return kExitOk;
}

int cmd_ensemble(const CommandOptions& o, std::ostream& out, std::ostream& err) {
  ScenarioConfig cfg;
  try {
    cfg = load_scenario(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.runs) cfg.runs = *o.runs;
    if (o.threads) cfg.threads = *o.threads;
    if (o.epsilon) cfg.epsilon = *o.epsilon;
    cfg.validate();
  } catch (const Error& e) {
    return config_failure(err, e);
  }
  const std::vector<EnsembleRow> rows = run_ensemble(cfg, cfg.runs, cfg.threads);
  const EnsembleSummary s = summarize(cfg.name, rows);
  std::ostringstream csv, hist;
  write_ensemble_csv(csv, rows);
  write_histograms_csv(hist, s);
  write_text_file(out_path(o, "ensemble.csv").string(), csv.str());
  write_text_file(out_path(o, "histograms.csv").string(), hist.str());
  write_text_file(out_path(o, "summary.json").string(), summary_json(s));
  out << cfg.name << ": " << s.converged << "/" << s.runs << " converged ("
      << fmt(s.feasibility_ratio) << "%, reference " << fmt(reference_feasibility_ratio(cfg.name))
      << "%), ordering violations " << s.ordering_violations << "/" << s.ordering_checked << "\n";
  return kExitOk;
}

int cmd_check_jacobian(const CommandOptions& o, std::ostream& out, std::ostream& err) {
  ScenarioConfig cfg;
  Eigen::VectorXd z;
  try {
    cfg = load_scenario(o.config);
    if (o.seed) cfg.seed = *o.seed;
  } catch (const Error& e) {
    return config_failure(err, e);
  }
  const NlpProblem p = make_problem(cfg);
  try {
    z = jacobian_point(p, o.point, cfg.seed, o.point_file);
  } catch (const Error& e) {
    return config_failure(err, e);
  }
  const JacobianCheck c = check_jacobian(p, z);
  std::ostringstream erel, pat;
  write_erel_csv(erel, p, c);
  p.write_sparsity_csv(pat);
  write_text_file(out_path(o, "jacobian_erel.csv").string(), erel.str());
  write_text_file(out_path(o, "sparsity.csv").string(), pat.str());
  const bool pass = c.max_e_rel <= kJacobianGate;
  out << "max e_rel=" << fmt(c.max_e_rel) << " median=" << fmt(c.median_e_rel) << " entries="
      << c.entries.size() << (pass ? " PASS" : " FAIL") << "\n";
  return pass ? kExitOk : kExitGate;
}

int cmd_recover(const CommandOptions& o, std::ostream& out, std::ostream& err) {
  Checkpoint cp;
  try {
    cp = load_checkpoint(o.solution);
  } catch (const Error& e) {
    return config_failure(err, e);
  }
  RecoverReport r;
  try {
    r = recover(cp, o.t_rec, o.u_bar);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  const auto path = out_path(o, "recovery.json");
  write_text_file(path.string(), recovery_json(r));
  out << "E_min=" << fmt(r.gramian.E_min) << " E_avail=" << fmt(r.gramian.E_avail)
      << " r_e=" << fmt(r.gramian.r_e) << (r.gramian.singular ? " (singular Gramian)" : "")
      << " -> " << path.string() << "\n";
  return kExitOk;
}

}  // namespace mtr
