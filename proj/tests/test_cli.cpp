#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "orbitstab/experiment.hpp"
#include "orbitstab/systems.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace orbitstab;
using namespace orbitstab::cli;
namespace fs = std::filesystem;

namespace {

const std::string kConfigDir = ORBITSTAB_CONFIG_DIR;

const char* kRikitakeFiber = R"({
  "system": {"builtin": "rikitake", "params": {"beta": 1}},
  "fiber": {"h": -1, "c": 2},
  "orbit_guess": [1, 1, 1],
  "perturbation": {"mode": "MODE"}
})";

std::string with_mode(std::string text, const std::string& mode) {
  text.replace(text.find("MODE"), 4, mode);
  return text;
}

std::vector<std::vector<std::string>> read_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(cell);
    if (!line.empty() && line.back() == ',') row.emplace_back();
    rows.push_back(row);
  }
  return rows;
}

std::string header_of(const std::string& csv) { return csv.substr(0, csv.find('\n')); }

fs::path scratch_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("orbitstab_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = scratch_dir() / name;
  std::ofstream(p) << text;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ORBITSTAB_CLI_PATH) + " " + args + " >" + (scratch_dir() / "stdout").string() +
                          " 2>" + (scratch_dir() / "stderr").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing") {
  const ExperimentConfig cfg = parse_config(with_mode(kRikitakeFiber, "Full_Stabilize"));
  CHECK(cfg.system_name == "rikitake");
  CHECK(cfg.spec.h == -1.0);
  CHECK(cfg.spec.c == 2.0);
  CHECK(cfg.spec.mode == Mode::Full_Stabilize);
  REQUIRE(cfg.orbit_guess);
  CHECK(*cfg.orbit_guess == Vec3(1, 1, 1));

  const ExperimentConfig seeded = parse_config(R"({
    "system": {"builtin": "rikitake"}, "seed": [1, 1, 1],
    "perturbation": {"mode": "PreserveC_Stabilize", "alpha": "1 + x^2"}})");
  CHECK(seeded.spec.h == doctest::Approx(-1.0));
  CHECK(seeded.spec.c == doctest::Approx(2.0));
  CHECK(seeded.spec.alpha({2, 0, 0}) == doctest::Approx(5.0));

  const ExperimentConfig expr = load_config(kConfigDir + "/expression_rigid_body.json");
  CHECK_FALSE(expr.rikitake_beta);
}

TEST_CASE("config errors") {
  auto rejects = [](const std::string& text, const std::string& fragment) {
    try {
      parse_config(text);
      FAIL("expected a config error for " << text);
    } catch (const ConfigError& e) {
      INFO(e.what());
      CHECK(std::string(e.what()).find(fragment) != std::string::npos);
    }
  };
  rejects(with_mode(kRikitakeFiber, "Stabilize"), "mode");
  rejects(with_mode(kRikitakeFiber, "Full_Stabilize").replace(1, 0, "\n  \"extra\": 1,"), "extra");
  rejects(R"({"system": {"builtin": "rikitake"}, "perturbation": {"mode": "Full_Stabilize"}})", "fiber");
  rejects(R"({"system": {"builtin": "rikitake"}, "seed": [1,1,1], "fiber": {"h": -1, "c": 2},
             "perturbation": {"mode": "Full_Stabilize"}})", "fiber");
  rejects(R"({"system": {"builtin": "rikitake"}, "seed": [1,1,1],
             "perturbation": {"mode": "Full_Stabilize", "alpha": "-1"}})", "alpha");
  rejects(R"({"system": {"builtin": "lorenz"}, "seed": [1,1,1],
             "perturbation": {"mode": "Full_Stabilize"}})", "lorenz");
  rejects("{ \"system\": ", "line");
  // Errors point at the line of the offending key.
  rejects("{\n\"system\": {\"builtin\": \"rikitake\"},\n\"seed\": [1,1,1],\n\"perturbation\": {\"mode\": \"bad\"}}",
          "line 4");
}

TEST_CASE("thresholds by name") {
  Thresholds t;
  t.set("multiplier", 0.5);
  CHECK(t.multiplier == 0.5);
  CHECK_THROWS_AS(t.set("speed", 1.0), ConfigError);
}

TEST_CASE("number formatting round-trips") {
  for (double v : {0.1, -1.0, 1e-300, 5.648750283920213, 7.1e-12}) CHECK(std::stod(format_number(v)) == v);
  CHECK(format_number(2.0) == "2");
}

TEST_CASE("simulate: header and a zero-length run") {
  ExperimentConfig cfg = parse_config(with_mode(kRikitakeFiber, "Full_Stabilize"));
  cfg.run.t_end = 0.0;
  std::ostringstream out;
  cmd_simulate(cfg, out);
  const auto rows = read_csv(out.str());
  REQUIRE(rows.size() == 2);
  CHECK(header_of(out.str()) == "t,x,y,z,H,C,H_err,C_err,dist_to_orbit");
  CHECK(rows[1][0] == "0");
  CHECK(rows[1].size() == 9);
  CHECK(rows[1][8].empty());
}

TEST_CASE("simulate: unperturbed run conserves both integrals") {
  ExperimentConfig cfg = load_config(kConfigDir + "/rikitake_unperturbed.json");
  std::ostringstream out;
  cmd_simulate(cfg, out);
  const auto rows = read_csv(out.str());
  CHECK(rows.size() > 100);
  double worst = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const Vec3 u(std::stod(rows[i][1]), std::stod(rows[i][2]), std::stod(rows[i][3]));
    // Recompute the errors from the state with the hand-written integrals.
    worst = std::max({worst, std::abs(oracle::rikitake_H(1.0, u) - cfg.spec.h), std::abs(oracle::rikitake_C(u) - cfg.spec.c)});
    CHECK(std::abs(std::stod(rows[i][6])) <= 1e-6);
    CHECK(std::abs(std::stod(rows[i][7])) <= 1e-6);
  }
  CHECK(worst <= 1e-6);
  CHECK(std::stod(rows.back()[0]) == doctest::Approx(100.0));
}

TEST_CASE("simulate: stabilized run reaches the orbit") {
  const ExperimentConfig cfg = load_config(kConfigDir + "/rikitake_full_simulate.json");
  std::ostringstream out;
  cmd_simulate(cfg, out);
  const auto rows = read_csv(out.str());
  REQUIRE(rows.size() > 2);
  CHECK(std::stod(rows[1][8]) > 1e-3);
  CHECK(std::stod(rows.back()[8]) <= 1e-6);
  CHECK(std::abs(std::stod(rows.back()[6])) <= 1e-8);
  CHECK(std::abs(std::stod(rows.back()[7])) <= 1e-8);
}

TEST_CASE("floquet report: stabilizing mode") {
  const CommandResult r = cmd_floquet(load_config(kConfigDir + "/rikitake_floquet.json"));
  CHECK(r.exit_code == kSuccess);
  const auto& f = r.report["floquet"];
  CHECK(f["trivial_count"] == 2);
  CHECK(f["expected_trivial"] == 2);
  CHECK(f["max_relative_error"].get<double>() <= 1e-3);
  CHECK_FALSE(f["unstable"].get<bool>());
  CHECK(r.report["orbit"]["closure"].get<double>() <= 1e-6);
  const auto& d = r.report["decay_fit"];
  CHECK(d["quantity"] == "H");
  // At unit gain the deviation reaches the floor within one period: too few maxima to fit.
  CHECK(d["periods_used"].get<int>() < 2);
  CHECK(d["fitted_rate"].is_null());
  CHECK(d["final_distance"].get<double>() <= 1e-8);
  for (const auto& c : r.report["criteria"]) CHECK(c["pass"].get<bool>());
}

TEST_CASE("floquet report: destabilizing mode is flagged") {
  const CommandResult r = cmd_floquet(parse_config(with_mode(kRikitakeFiber, "Full_Destabilize_FlipAlpha")));
  CHECK(r.exit_code == kSuccess);
  CHECK(r.report["floquet"]["unstable"].get<bool>());
  CHECK(r.report["floquet"]["max_modulus"].get<double>() > 1.0);
  CHECK(r.report["floquet"]["expected_trivial"] == 1);
  CHECK(r.report["decay_fit"].is_null());
}

TEST_CASE("floquet report: circle") {
  const CommandResult r = cmd_floquet(load_config(kConfigDir + "/harmonic_floquet.json"));
  CHECK(r.exit_code == kSuccess);
  CHECK(r.report["orbit"]["period"].get<double>() == doctest::Approx(2 * std::numbers::pi).epsilon(1e-8));
  CHECK(std::abs(r.report["floquet"]["computed"][0]["modulus"].get<double>() - std::exp(-2 * std::numbers::pi)) <= 1e-4);
  CHECK(r.report["decay_fit"]["fitted_rate"].get<double>() == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("floquet report: strict threshold fails") {
  ExperimentConfig cfg = load_config(kConfigDir + "/rikitake_floquet.json");
  cfg.thresholds.multiplier = 1e-15;
  CHECK(cmd_floquet(cfg).exit_code == kThresholdFailure);
}

TEST_CASE("sweep: rates scale linearly with the gain") {
  ExperimentConfig cfg = load_config(kConfigDir + "/rikitake_sweep.json");
  cfg.sweep.offsets = std::vector<double>{1e-3};
  std::ostringstream out;
  cmd_sweep(cfg, out);
  const auto rows = read_csv(out.str());
  REQUIRE(rows.size() == 4);
  CHECK(header_of(out.str()) ==
        "run,h,c,alpha_scale,offset,period,multiplier_1,multiplier_2,multiplier_3,max_relative_error,"
        "fitted_rate,predicted_rate,final_distance,converged,pass,error");
  std::vector<double> rates;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i][14] == "true");
    CHECK(rows[i][15].empty());
    rates.push_back(std::stod(rows[i][10]));
    CHECK(rates.back() == doctest::Approx(std::stod(rows[i][11])).epsilon(0.05));
  }
  CHECK(rates[1] / rates[0] == doctest::Approx(2.0).epsilon(0.1));
  CHECK(rates[2] / rates[1] == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("sweep: output does not depend on the worker count") {
  ExperimentConfig cfg = load_config(kConfigDir + "/rikitake_sweep.json");
  cfg.sweep.alpha_scale = std::vector<double>{1.0, 2.0};
  cfg.run.periods = 10;
  std::ostringstream a, b;
  cfg.sweep.workers = 1;
  cmd_sweep(cfg, a);
  cfg.sweep.workers = 4;
  cmd_sweep(cfg, b);
  CHECK(a.str() == b.str());
  const auto rows = read_csv(a.str());
  CHECK(rows.size() == 5);
}

TEST_CASE("sweep: empty grid and failing rows") {
  ExperimentConfig cfg = load_config(kConfigDir + "/rikitake_sweep.json");
  cfg.sweep.alpha_scale = std::vector<double>{};
  std::ostringstream empty;
  cmd_sweep(cfg, empty);
  CHECK(read_csv(empty.str()).size() == 1);

  cfg.sweep.alpha_scale = std::vector<double>{1.0};
  cfg.sweep.offsets = std::vector<double>{1e-3};
  cfg.sweep.fibers = std::vector<FiberPoint>{{-1.0, 2.0, Vec3(1, 1, 1)}, {-1.0, 1.0, Vec3(0, 0, 1)}};
  std::ostringstream out;
  cmd_sweep(cfg, out);
  const auto rows = read_csv(out.str());
  REQUIRE(rows.size() == 3);
  CHECK(rows[1][14] == "true");
  CHECK(rows[2][14] == "false");
  CHECK_FALSE(rows[2].back().empty());
}

TEST_CASE("check: identities hold and output is reproducible") {
  const ExperimentConfig cfg = load_config(kConfigDir + "/rikitake_check.json");
  const CommandResult a = cmd_check(cfg);
  const CommandResult b = cmd_check(cfg);
  CHECK(a.exit_code == kSuccess);
  CHECK(a.report["seed"] == 7);
  CHECK(a.report.dump() == b.report.dump());
  for (const auto& c : a.report["criteria"]) {
    INFO(c.dump());
    CHECK(c["pass"].get<bool>());
  }
  CHECK(a.report["max_violation"].contains("rikitake_field_oracle"));
}

TEST_CASE("check: degenerate box is reported") {
  ExperimentConfig cfg = load_config(kConfigDir + "/rikitake_check.json");
  // The z axis is a line of equilibria.
  cfg.check.box = {{{0.0, 0.0}, {0.0, 0.0}, {-1.0, 1.0}}};
  const CommandResult r = cmd_check(cfg);
  CHECK(r.report["degenerate_samples"] == cfg.check.samples);
  CHECK(r.report["note"].is_string());
}

TEST_CASE("executable: exit codes") {
  const fs::path out = scratch_dir() / "out.json";
  CHECK(run_cli("floquet --config " + kConfigDir + "/rikitake_floquet.json --out " + out.string()) == 0);
  const auto report = nlohmann::json::parse(slurp(out));
  CHECK(report["command"] == "floquet");

  CHECK(run_cli("floquet --config " + kConfigDir + "/rikitake_floquet.json --threshold multiplier=1e-15") == 3);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("floquet") == 1);
  CHECK(run_cli("floquet --config /nonexistent/config.json") == 1);
  CHECK(run_cli("floquet --config " + write_file("bad.json", "{ nope").string()) == 1);
  CHECK(run_cli("floquet --config " + kConfigDir + "/rikitake_floquet.json --threshold speed=1") == 1);

  // Equilibrium guess: the orbit search fails numerically.
  const fs::path eq = write_file("eq.json", R"({
    "system": {"builtin": "rikitake"}, "fiber": {"h": -1, "c": 1}, "orbit_guess": [0, 0, 1],
    "perturbation": {"mode": "Full_Stabilize"}})");
  CHECK(run_cli("floquet --config " + eq.string()) == 2);

  const fs::path csv = scratch_dir() / "sim.csv";
  CHECK(run_cli("simulate --config " + kConfigDir + "/rikitake_full_simulate.json --out " + csv.string()) == 0);
  CHECK(header_of(slurp(csv)) == "t,x,y,z,H,C,H_err,C_err,dist_to_orbit");

  const fs::path c1 = scratch_dir() / "c1.json", c2 = scratch_dir() / "c2.json";
  CHECK(run_cli("check --config " + kConfigDir + "/rikitake_check.json --seed 3 --out " + c1.string()) == 0);
  CHECK(run_cli("check --config " + kConfigDir + "/rikitake_check.json --seed 3 --out " + c2.string()) == 0);
  CHECK(slurp(c1) == slurp(c2));
  CHECK(nlohmann::json::parse(slurp(c1))["seed"] == 3);
}
