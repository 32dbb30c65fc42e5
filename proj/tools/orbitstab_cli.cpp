#include "orbitstab/experiment.hpp"
#include "orbitstab/expr.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>

using namespace orbitstab;
using namespace orbitstab::cli;

namespace {

struct Options {
  std::string config;
  std::string out;
  unsigned workers = 0;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> thresholds;
};

void apply_overrides(const Options& o, ExperimentConfig& cfg) {
  if (o.workers > 0) cfg.sweep.workers = o.workers;
  if (o.seed) cfg.seed = *o.seed;
  for (const auto& t : o.thresholds) {
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("--threshold expects name=value, got '" + t + "'");
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(t.substr(eq + 1), &used);
      if (used != t.size() - eq - 1) throw std::invalid_argument("trailing text");
    } catch (const std::exception&) {
      throw ConfigError("--threshold value is not a number in '" + t + "'");
    }
    cfg.thresholds.set(t.substr(0, eq), v);
  }
}

int run(const std::string& command, const Options& o) {
  ExperimentConfig cfg = load_config(o.config);
  apply_overrides(o, cfg);

  std::unique_ptr<std::ofstream> file;
  if (!o.out.empty()) {
    file = std::make_unique<std::ofstream>(o.out);
    if (!*file) throw ConfigError("cannot write '" + o.out + "'");
  }
  std::ostream& out = file ? *file : std::cout;

  if (command == "simulate") {
    cmd_simulate(cfg, out);
    return kSuccess;
  }
  if (command == "sweep") {
    cmd_sweep(cfg, out);
    return kSuccess;
  }
  const CommandResult r = command == "floquet" ? cmd_floquet(cfg) : cmd_check(cfg);
  out << r.report.dump(2) << '\n';
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stabilise periodic orbits of three-dimensional Hamiltonian systems"};
  app.require_subcommand(1);
  Options o;
  const std::pair<const char*, const char*> commands[] = {
      {"simulate", "integrate the perturbed field and write a CSV trajectory"},
      {"floquet", "find the orbit and compare computed with predicted multipliers (JSON)"},
      {"sweep", "grid over fibers, gain scales and offsets (CSV)"},
      {"check", "pointwise identity checks on seeded random samples (JSON)"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "JSON experiment configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output file (default: stdout)");
    sub->add_option("--workers", o.workers, "parallel sweep workers")->check(CLI::PositiveNumber);
    sub->add_option("--seed", o.seed, "seed for randomised sampling");
    sub->add_option("--threshold", o.thresholds, "override a threshold, name=value (repeatable)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kSuccess : kUsageError;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const expr::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  }
}
