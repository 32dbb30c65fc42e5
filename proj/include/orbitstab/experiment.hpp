#pragma once

#include "orbitstab/integrate.hpp"
#include "orbitstab/orbits.hpp"
#include "orbitstab/perturbation.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

/// Batch experiments driven by a JSON configuration file.
namespace orbitstab::cli {

enum ExitCode : int { kSuccess = 0, kUsageError = 1, kNumericalFailure = 2, kThresholdFailure = 3 };

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Thresholds {
  double closure = 1e-6;
  double multiplier = 1e-3;
  double identity = 1e-10;
  double preservation = 1e-12;
  double convergence = 1e-6;

  /// Sets a threshold by name; throws ConfigError for unknown names.
  void set(const std::string& name, double value);
};

struct RunSettings {
  double t_end = 20.0;
  double sample_dt = 0.01;
  bool orbit = false;
  bool unperturbed = false;
  std::optional<Vec3> initial;
  double offset = 0.0;
  std::optional<OffsetKind> offset_kind;
  std::size_t periods = 6;
  double decay_floor = 1e-11;
};

struct CheckSettings {
  std::size_t samples = 1000;
  std::array<std::array<double, 2>, 3> box{{{-2.0, 2.0}, {-2.0, 2.0}, {-2.0, 2.0}}};
};

struct FiberPoint {
  double h = 0.0;
  double c = 0.0;
  std::optional<Vec3> guess;
};

struct SweepSettings {
  std::optional<std::vector<double>> alpha_scale;
  std::optional<std::vector<double>> offsets;
  std::optional<std::vector<FiberPoint>> fibers;
  unsigned workers = 1;
};

struct ExperimentConfig {
  std::string system_name;
  std::optional<double> rikitake_beta;  // set when the system is the builtin Rikitake model
  PerturbationSpec spec;                 // system, fiber, gains and mode
  std::optional<Vec3> orbit_guess;       // seed point, or guess accompanying an explicit fiber
  std::string alpha_text = "1";
  std::string beta_text = "1";
  IntegratorConfig integrator = IntegratorConfig::adaptive(1e-10, 1e-12);
  RunSettings run;
  CheckSettings check;
  SweepSettings sweep;
  Thresholds thresholds;
  std::uint64_t seed = 1;
};

/// Parses and validates a configuration; errors name the offending key and,
/// where possible, its line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// CSV columns: t,x,y,z,H,C,H_err,C_err,dist_to_orbit.
void cmd_simulate(const ExperimentConfig& cfg, std::ostream& out);

struct CommandResult {
  nlohmann::ordered_json report;
  int exit_code = kSuccess;
};

/// Orbit, computed vs predicted multipliers, decay fit and drifts.
CommandResult cmd_floquet(const ExperimentConfig& cfg);

/// One CSV row per grid point; failing rows are recorded, not fatal.
void cmd_sweep(const ExperimentConfig& cfg, std::ostream& out);

/// Pointwise identity suite on seeded random samples.
CommandResult cmd_check(const ExperimentConfig& cfg);

/// Shortest decimal text that round-trips the double.
std::string format_number(double v);

}  // namespace orbitstab::cli
