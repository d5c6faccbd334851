#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mtrobust/app.hpp"

namespace {

using mtr::CommandOptions;

// Optional scalars stay unset unless the flag was given, so config values survive.
template <class T>
void optional_flag(CLI::App* app, const std::string& name, std::optional<T>& dst,
                   const std::string& help) {
  app->add_option_function<T>(name, [&dst](const T& v) { dst = v; }, help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Missed-thrust robust trajectory design and certificates"};
  app.require_subcommand(1);
  CommandOptions o;
  std::vector<double> u_bar;
  std::string point = "simulated";

  auto* solve = app.add_subcommand("solve", "initialize and solve one scenario");
  solve->add_option("--config", o.config, "scenario JSON")->required();
  optional_flag(solve, "--seed", o.seed, "initialization seed");
  solve->add_option("--warm", o.warm_start, "checkpoint used as the starting point");
  solve->add_option("--out", o.out, "output directory");

  auto* certify = app.add_subcommand("certify", "safe radius and outage-duration certificate");
  certify->add_option("--solution", o.solution, "solution checkpoint")->required();
  optional_flag(certify, "--epsilon", o.epsilon, "relative-error budget");
  certify->add_option("--out", o.out, "output directory");

  auto* ensemble = app.add_subcommand("ensemble", "independent solves from consecutive seeds");
  ensemble->add_option("--config", o.config, "scenario JSON")->required();
  optional_flag(ensemble, "--runs", o.runs, "number of initializations");
  optional_flag(ensemble, "--seed", o.seed, "first seed");
  optional_flag(ensemble, "--threads", o.threads, "worker threads (0 = all cores)");
  optional_flag(ensemble, "--epsilon", o.epsilon, "relative-error budget");
  ensemble->add_option("--out", o.out, "output directory");

  auto* jac = app.add_subcommand("check-jacobian", "exact vs central-difference Jacobian");
  jac->add_option("--config", o.config, "scenario JSON")->required();
  jac->add_option("--point", point, "random | simulated | file")
      ->check(CLI::IsMember({"random", "simulated", "file"}));
  jac->add_option("--point-file", o.point_file, "checkpoint supplying the point");
  optional_flag(jac, "--seed", o.seed, "point seed");
  jac->add_option("--out", o.out, "output directory");

  auto* rec = app.add_subcommand("recover", "post-outage controllability energy diagnostic");
  rec->add_option("--solution", o.solution, "solution checkpoint")->required();
  optional_flag(rec, "--t-rec", o.t_rec, "recovery horizon, s");
  rec->add_option("--u-bar", u_bar, "per-axis deviation control bound, km/s^2")->expected(3);
  rec->add_option("--out", o.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : mtr::kExitConfig;
  }
  if (u_bar.size() == 3) o.u_bar = mtr::Vec3(u_bar[0], u_bar[1], u_bar[2]);
  o.point = point == "random" ? mtr::PointSource::Random
            : point == "file" ? mtr::PointSource::File
                              : mtr::PointSource::Simulated;
  if (o.point == mtr::PointSource::File && o.point_file.empty()) {
    std::cerr << "error: --point file needs --point-file\n";
    return mtr::kExitConfig;
  }

  try {
    if (*solve) return mtr::cmd_solve(o, std::cout, std::cerr);
    if (*certify) return mtr::cmd_certify(o, std::cout, std::cerr);
    if (*ensemble) return mtr::cmd_ensemble(o, std::cout, std::cerr);
    if (*jac) return mtr::cmd_check_jacobian(o, std::cout, std::cerr);
    if (*rec) return mtr::cmd_recover(o, std::cout, std::cerr);
  } catch (const mtr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == mtr::ErrorKind::Config || e.kind() == mtr::ErrorKind::Io ? mtr::kExitConfig
                                                                                 : 1;
  }
  return 1;
}
