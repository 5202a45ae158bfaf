#include <CLI11.hpp>

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "qlab/pipelines.hpp"

namespace {

constexpr int kExitCheck = 1;
constexpr int kExitConfig = 2;
constexpr int kExitConvergence = 3;

void print_report(const qlab::RunReport& r) {
  for (const auto& c : r.checks) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": observed " << qlab::fmt_double(c.observed)
              << ", predicted " << qlab::fmt_double(c.predicted);
    if (c.tolerance > 0.0) std::cout << ", tolerance " << qlab::fmt_double(c.tolerance);
    if (!c.note.empty()) std::cout << " (" << c.note << ")";
    std::cout << '\n';
  }
  for (const auto& w : r.warnings) std::cout << "warning: " << w << '\n';
  std::cout << r.subcommand << ": " << (r.passed() ? "pass" : "fail") << '\n';
}

void print_catalog() {
  for (const auto& e : qlab::catalog()) {
    std::cout << std::left << std::setw(12) << e.family << std::setw(14) << e.name;
    std::cout << std::setw(34) << (e.parameters.empty() ? "-" : e.parameters) << e.description << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quenched limit theorems for random piecewise expanding maps"};
  app.require_subcommand(1);
  app.set_version_flag("--version", qlab::kVersion);

  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;

  std::string chosen;
  for (const auto& [name, _] : qlab::pipelines()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " pipeline");
    sub->add_option("--config", config_path, "experiment config (INI)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory (default: $QLAB_OUT_DIR or [output] dir)");
    sub->add_option("--seed", seed, "override [base] seed");
    sub->add_option("--jobs", jobs, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    sub->callback([&chosen, name = name] { chosen = name; });
  }
  app.add_subcommand("list-catalog", "print bases, maps and observables")->callback([&chosen] {
    chosen = "list-catalog";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  if (chosen == "list-catalog") {
    print_catalog();
    return 0;
  }

  try {
    auto cfg = qlab::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (jobs) cfg.jobs = *jobs;
    qlab::validate(cfg);
    std::string dir = cfg.out_dir;
    if (const char* env = std::getenv("QLAB_OUT_DIR"); env && *env) dir = env;
    if (out_dir) dir = *out_dir;
    const auto report = qlab::run_pipeline(chosen, cfg, dir);
    print_report(report);
    return report.passed() ? 0 : kExitCheck;
  } catch (const qlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const qlab::ConvergenceError& e) {
    std::cerr << "convergence error: " << e.what() << '\n';
    return kExitConvergence;
  } catch (const qlab::Error& e) {
    std::cerr << chosen << " failed: " << e.what() << '\n';
    return kExitCheck;
  }
}
