#include "orbitstab/experiment.hpp"

#include "orbitstab/expr.hpp"
#include "orbitstab/systems.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

namespace orbitstab::cli {

using nlohmann::json;
using nlohmann::ordered_json;

void Thresholds::set(const std::string& name, double value) {
  if (!(std::isfinite(value) && value > 0.0)) {
    throw ConfigError("threshold '" + name + "' must be a positive number");
  }
  if (name == "closure") closure = value;
  else if (name == "multiplier") multiplier = value;
  else if (name == "identity") identity = value;
  else if (name == "preservation") preservation = value;
  else if (name == "convergence") convergence = value;
  else throw ConfigError("unknown threshold '" + name + "'");
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Configuration parsing

namespace {

class Reader {
 public:
  explicit Reader(const std::string& text) : text_(text) {}

  [[noreturn]] void fail(const std::string& path, const std::string& msg) const {
    std::string where = path.empty() ? "/" : path;
    if (const auto line = line_of(path)) where += " (line " + std::to_string(*line) + ")";
    throw ConfigError("config " + where + ": " + msg);
  }

  void expect_object(const json& j, const std::string& path,
                     std::initializer_list<std::string_view> allowed) const {
    if (!j.is_object()) fail(path, "expected an object");
    for (const auto& [key, _] : j.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        fail(path + "/" + key, "unknown key");
      }
    }
  }

  double number(const json& j, const std::string& path) const {
    if (!j.is_number()) fail(path, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) fail(path, "expected a finite number");
    return v;
  }

  double positive(const json& j, const std::string& path) const {
    const double v = number(j, path);
    if (!(v > 0.0)) fail(path, "expected a positive number");
    return v;
  }

  std::uint64_t count(const json& j, const std::string& path, std::uint64_t min) const {
    if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0)) {
      fail(path, "expected a non-negative integer");
    }
    const auto v = j.get<std::uint64_t>();
    if (v < min) fail(path, "expected an integer >= " + std::to_string(min));
    return v;
  }

  bool boolean(const json& j, const std::string& path) const {
    if (!j.is_boolean()) fail(path, "expected true or false");
    return j.get<bool>();
  }

  std::string string(const json& j, const std::string& path) const {
    if (!j.is_string()) fail(path, "expected a string");
    return j.get<std::string>();
  }

  // Expressions may also be written as plain numbers.
  std::string expression(const json& j, const std::string& path) const {
    if (j.is_number()) return format_number(number(j, path));
    return string(j, path);
  }

  Vec3 vec3(const json& j, const std::string& path) const {
    if (!j.is_array() || j.size() != 3) fail(path, "expected an array of three numbers");
    return {number(j[0], path + "/0"), number(j[1], path + "/1"), number(j[2], path + "/2")};
  }

  std::vector<double> numbers(const json& j, const std::string& path) const {
    if (!j.is_array()) fail(path, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], path + "/" + std::to_string(i)));
    return out;
  }

 private:
  // Line of the deepest key of `path` found in order in the raw text.
  std::optional<std::size_t> line_of(const std::string& path) const {
    std::size_t pos = std::string::npos;
    std::size_t from = 0;
    std::stringstream ss(path);
    std::string seg;
    while (std::getline(ss, seg, '/')) {
      if (seg.empty() || std::all_of(seg.begin(), seg.end(), ::isdigit)) continue;
      const auto hit = text_.find("\"" + seg + "\"", from);
      if (hit == std::string::npos) break;
      pos = hit;
      from = hit + 1;
    }
    if (pos == std::string::npos) return std::nullopt;
    return 1 + static_cast<std::size_t>(std::count(text_.begin(), text_.begin() + pos, '\n'));
  }

  const std::string& text_;
};

expr::ParamTable read_params(const Reader& r, const json& j, const std::string& path) {
  expr::ParamTable params;
  if (!j.is_object()) r.fail(path, "expected an object of numbers");
  for (const auto& [key, value] : j.items()) params[key] = r.number(value, path + "/" + key);
  return params;
}

void check_expression(const Reader& r, const std::string& text, const expr::ParamTable& params,
                      const std::string& path) {
  try {
    (void)expr::parse(text, params);
  } catch (const expr::ParseError& e) {
    r.fail(path, e.what());
  } catch (const std::exception& e) {
    r.fail(path, e.what());
  }
}

void read_system(const Reader& r, const json& j, ExperimentConfig& cfg, expr::ParamTable& params) {
  const std::string path = "/system";
  if (!j.is_object()) r.fail(path, "expected an object");
  if (j.contains("builtin")) {
    r.expect_object(j, path, {"builtin", "params"});
    const std::string name = r.string(j["builtin"], path + "/builtin");
    if (j.contains("params")) params = read_params(r, j["params"], path + "/params");
    try {
      cfg.spec.sys = systems::make_builtin(name, params);
    } catch (const std::exception& e) {
      r.fail(path, e.what());
    }
    for (const auto& b : systems::builtins()) {
      if (b.name != name) continue;
      for (const auto& [k, v] : b.defaults) params.try_emplace(k, v);
    }
    cfg.system_name = name;
    if (name == "rikitake") cfg.rikitake_beta = params.at("beta");
    return;
  }
  r.expect_object(j, path, {"nu", "H", "C", "params", "name"});
  if (!j.contains("H") || !j.contains("C")) r.fail(path, "needs 'builtin' or both 'H' and 'C'");
  if (j.contains("params")) params = read_params(r, j["params"], path + "/params");
  const std::string nu = j.contains("nu") ? r.expression(j["nu"], path + "/nu") : "1";
  const std::string h = r.expression(j["H"], path + "/H");
  const std::string c = r.expression(j["C"], path + "/C");
  check_expression(r, nu, params, path + "/nu");
  check_expression(r, h, params, path + "/H");
  check_expression(r, c, params, path + "/C");
  cfg.system_name = j.contains("name") ? r.string(j["name"], path + "/name") : "expression";
  cfg.spec.sys = systems::from_expressions(nu, h, c, params, cfg.system_name);
}

ScalarField read_gain(const Reader& r, const std::string& text, const expr::ParamTable& params,
                      const std::string& path, const std::optional<Vec3>& probe) {
  check_expression(r, text, params, path);
  const auto e = expr::parse(text, params);
  ScalarField f = expr::compile(e, params);
  const bool is_constant = !expr::depends_on(e, expr::Var::X) && !expr::depends_on(e, expr::Var::Y) &&
                           !expr::depends_on(e, expr::Var::Z);
  if (is_constant && !(f(Vec3::Zero()) > 0.0)) r.fail(path, "gain must be positive");
  if (probe && !(f(*probe) > 0.0)) r.fail(path, "gain must be positive at the seed point");
  return f;
}

void read_integrator(const Reader& r, const json& j, IntegratorConfig& ic) {
  const std::string path = "/integrator";
  r.expect_object(j, path, {"method", "rel_tol", "abs_tol", "step", "max_step", "max_steps"});
  if (j.contains("method")) {
    const auto m = r.string(j["method"], path + "/method");
    if (m == "dopri45") {
      ic.method = Method::DOPRI45;
      ic.step = 0.0;
    } else if (m == "rk4") {
      ic.method = Method::RK4;
      ic.step = 1e-3;
    } else {
      r.fail(path + "/method", "expected \"dopri45\" or \"rk4\"");
    }
  }
  if (j.contains("rel_tol")) ic.rel_tol = r.positive(j["rel_tol"], path + "/rel_tol");
  if (j.contains("abs_tol")) ic.abs_tol = r.positive(j["abs_tol"], path + "/abs_tol");
  if (j.contains("step")) ic.step = r.positive(j["step"], path + "/step");
  if (j.contains("max_step")) ic.max_step = r.positive(j["max_step"], path + "/max_step");
  if (j.contains("max_steps")) ic.max_steps = r.count(j["max_steps"], path + "/max_steps", 1);
  try {
    ic.validate();
  } catch (const std::exception& e) {
    r.fail(path, e.what());
  }
}

std::optional<OffsetKind> parse_offset_kind(std::string_view s) {
  if (s == "transverse") return OffsetKind::Transverse;
  if (s == "casimir_level") return OffsetKind::CasimirLevel;
  if (s == "hamiltonian_level") return OffsetKind::HamiltonianLevel;
  return std::nullopt;
}

void read_run(const Reader& r, const json& j, RunSettings& run) {
  const std::string path = "/run";
  r.expect_object(j, path,
                  {"t_end", "sample_dt", "orbit", "unperturbed", "initial", "offset", "offset_kind",
                   "periods", "decay_floor"});
  if (j.contains("t_end")) {
    run.t_end = r.number(j["t_end"], path + "/t_end");
    if (run.t_end < 0.0) r.fail(path + "/t_end", "must be >= 0");
  }
  if (j.contains("sample_dt")) run.sample_dt = r.positive(j["sample_dt"], path + "/sample_dt");
  if (j.contains("orbit")) run.orbit = r.boolean(j["orbit"], path + "/orbit");
  if (j.contains("unperturbed")) run.unperturbed = r.boolean(j["unperturbed"], path + "/unperturbed");
  if (j.contains("initial")) run.initial = r.vec3(j["initial"], path + "/initial");
  if (j.contains("offset")) run.offset = r.number(j["offset"], path + "/offset");
  if (j.contains("offset_kind")) {
    const auto kind = parse_offset_kind(r.string(j["offset_kind"], path + "/offset_kind"));
    if (!kind) r.fail(path + "/offset_kind", "expected transverse, casimir_level or hamiltonian_level");
    run.offset_kind = kind;
  }
  if (j.contains("periods")) run.periods = r.count(j["periods"], path + "/periods", 1);
  if (j.contains("decay_floor")) run.decay_floor = r.positive(j["decay_floor"], path + "/decay_floor");
}

void read_check(const Reader& r, const json& j, ExperimentConfig& cfg) {
  const std::string path = "/check";
  r.expect_object(j, path, {"samples", "box", "seed"});
  if (j.contains("samples")) cfg.check.samples = r.count(j["samples"], path + "/samples", 1);
  if (j.contains("seed")) cfg.seed = r.count(j["seed"], path + "/seed", 0);
  if (j.contains("box")) {
    const auto& b = j["box"];
    if (!b.is_array() || b.size() != 3) r.fail(path + "/box", "expected three [lo, hi] pairs");
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string p = path + "/box/" + std::to_string(i);
      const auto v = r.numbers(b[i], p);
      if (v.size() != 2 || v[0] > v[1]) r.fail(p, "expected [lo, hi] with lo <= hi");
      cfg.check.box[i] = {v[0], v[1]};
    }
  }
}

void read_sweep(const Reader& r, const json& j, SweepSettings& sweep) {
  const std::string path = "/sweep";
  r.expect_object(j, path, {"alpha_scale", "offsets", "fibers", "workers"});
  if (j.contains("alpha_scale")) {
    sweep.alpha_scale = r.numbers(j["alpha_scale"], path + "/alpha_scale");
    for (double s : *sweep.alpha_scale) {
      if (!(s > 0.0)) r.fail(path + "/alpha_scale", "scales must be positive");
    }
  }
  if (j.contains("offsets")) sweep.offsets = r.numbers(j["offsets"], path + "/offsets");
  if (j.contains("fibers")) {
    const auto& f = j["fibers"];
    if (!f.is_array()) r.fail(path + "/fibers", "expected an array");
    sweep.fibers.emplace();
    for (std::size_t i = 0; i < f.size(); ++i) {
      const std::string p = path + "/fibers/" + std::to_string(i);
      r.expect_object(f[i], p, {"h", "c", "guess"});
      if (!f[i].contains("h") || !f[i].contains("c")) r.fail(p, "needs 'h' and 'c'");
      FiberPoint fp{r.number(f[i]["h"], p + "/h"), r.number(f[i]["c"], p + "/c"), std::nullopt};
      if (f[i].contains("guess")) fp.guess = r.vec3(f[i]["guess"], p + "/guess");
      sweep.fibers->push_back(fp);
    }
  }
  if (j.contains("workers")) sweep.workers = static_cast<unsigned>(r.count(j["workers"], path + "/workers", 1));
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t byte = std::min<std::size_t>(e.byte, text.size());
    const std::size_t line = 1 + static_cast<std::size_t>(
                                     std::count(text.begin(), text.begin() + static_cast<long>(byte ? byte - 1 : 0), '\n'));
    throw ConfigError("config line " + std::to_string(line) + ": invalid JSON: " + e.what());
  }
  const Reader r(text);
  r.expect_object(root, "", {"system", "fiber", "seed", "orbit_guess", "perturbation", "integrator", "run",
                             "check", "sweep", "thresholds"});

  ExperimentConfig cfg;
  if (!root.contains("system")) r.fail("/system", "missing");
  expr::ParamTable params;
  read_system(r, root["system"], cfg, params);

  const bool has_fiber = root.contains("fiber");
  const bool has_seed = root.contains("seed");
  if (has_fiber == has_seed) r.fail("", "exactly one of 'fiber' or 'seed' is required");
  if (has_seed) {
    if (root.contains("orbit_guess")) r.fail("/orbit_guess", "not allowed together with 'seed'");
    const Vec3 seed = r.vec3(root["seed"], "/seed");
    try {
      cfg.spec.h = cfg.spec.sys.H(seed);
      cfg.spec.c = cfg.spec.sys.C(seed);
    } catch (const std::exception& e) {
      r.fail("/seed", e.what());
    }
    if (!std::isfinite(cfg.spec.h) || !std::isfinite(cfg.spec.c)) r.fail("/seed", "H or C is not finite here");
    cfg.orbit_guess = seed;
  } else {
    const auto& f = root["fiber"];
    r.expect_object(f, "/fiber", {"h", "c"});
    if (!f.contains("h") || !f.contains("c")) r.fail("/fiber", "needs 'h' and 'c'");
    cfg.spec.h = r.number(f["h"], "/fiber/h");
    cfg.spec.c = r.number(f["c"], "/fiber/c");
    if (root.contains("orbit_guess")) cfg.orbit_guess = r.vec3(root["orbit_guess"], "/orbit_guess");
  }

  if (root.contains("perturbation")) {
    const auto& p = root["perturbation"];
    r.expect_object(p, "/perturbation", {"mode", "alpha", "beta"});
    if (p.contains("mode")) {
      try {
        cfg.spec.mode = parse_mode(r.string(p["mode"], "/perturbation/mode"));
      } catch (const std::invalid_argument& e) {
        r.fail("/perturbation/mode", e.what());
      }
    }
    if (p.contains("alpha")) cfg.alpha_text = r.expression(p["alpha"], "/perturbation/alpha");
    if (p.contains("beta")) cfg.beta_text = r.expression(p["beta"], "/perturbation/beta");
  }
  cfg.spec.alpha = read_gain(r, cfg.alpha_text, params, "/perturbation/alpha", cfg.orbit_guess);
  cfg.spec.beta = read_gain(r, cfg.beta_text, params, "/perturbation/beta", cfg.orbit_guess);

  if (root.contains("integrator")) read_integrator(r, root["integrator"], cfg.integrator);
  if (root.contains("run")) read_run(r, root["run"], cfg.run);
  if (root.contains("check")) read_check(r, root["check"], cfg);
  if (root.contains("sweep")) read_sweep(r, root["sweep"], cfg.sweep);
  if (root.contains("thresholds")) {
    const auto& t = root["thresholds"];
    r.expect_object(t, "/thresholds", {"closure", "multiplier", "identity", "preservation", "convergence"});
    for (const auto& [key, value] : t.items()) {
      cfg.thresholds.set(key, r.positive(value, "/thresholds/" + key));
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Shared experiment steps

namespace {

IntegratorConfig analysis_integrator(const IntegratorConfig& base) {
  IntegratorConfig ic = base;
  if (ic.method == Method::DOPRI45) {
    ic.rel_tol = std::min(ic.rel_tol, 1e-12);
    ic.abs_tol = std::min(ic.abs_tol, 1e-14);
  }
  return ic;
}

PeriodicOrbit locate_orbit(const ExperimentConfig& cfg, double h, double c, const std::optional<Vec3>& guess) {
  if (!guess) throw ConfigError("config: finding the orbit needs 'seed' or 'orbit_guess'");
  OrbitOptions opts;
  opts.integrator = analysis_integrator(cfg.integrator);
  opts.closure_tol = cfg.thresholds.closure;
  return find_periodic_orbit(cfg.spec.sys, h, c, *guess, opts);
}

OffsetKind default_offset_kind(Mode m) {
  if (!uses_h_preserving_term(m)) return OffsetKind::CasimirLevel;
  if (!uses_c_preserving_term(m)) return OffsetKind::HamiltonianLevel;
  return OffsetKind::Transverse;
}

std::string_view offset_kind_name(OffsetKind k) {
  switch (k) {
    case OffsetKind::Transverse: return "transverse";
    case OffsetKind::CasimirLevel: return "casimir_level";
    case OffsetKind::HamiltonianLevel: return "hamiltonian_level";
  }
  return "transverse";
}

// The decaying quantity of a mode: |H - h| when the alpha term is present,
// otherwise |C - c|.
struct DecayRun {
  bool tracks_H = true;
  DecayFit fit;
  double predicted = 0.0;
  double final_distance = 0.0;
};

DecayRun run_decay(const PerturbationSpec& spec, const PeriodicOrbit& orbit, const Vec3& u0, std::size_t periods,
                   double floor, const IntegratorConfig& ic) {
  DecayRun out;
  out.tracks_H = uses_c_preserving_term(spec.mode);
  const auto rates = decay_rates(spec);
  const auto& lambda = out.tracks_H ? rates.lambda_H : rates.lambda_C;
  out.predicted = -orbit_mean(orbit, lambda);

  const double t_end = static_cast<double>(periods) * orbit.period;
  const Trajectory traj = integrate(build_perturbed_field(spec), u0, t_end, ic);
  // Node states only: the interpolant's error would floor the envelope.
  std::vector<double> vs;
  vs.reserve(traj.size());
  for (const auto& u : traj.states()) {
    vs.push_back(std::abs(out.tracks_H ? spec.sys.H(u) - spec.h : spec.sys.C(u) - spec.c));
  }
  const auto& ts = traj.times();
  out.fit = fit_decay_rate(ts, vs, orbit.period, floor);
  out.final_distance = orbit_distance(orbit, traj.final_state());
  return out;
}

ordered_json number_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

ordered_json vec_json(const Vec3& v) { return ordered_json::array({v.x(), v.y(), v.z()}); }

ordered_json criterion(std::string name, double value, double threshold, bool pass) {
  return {{"name", std::move(name)}, {"value", number_or_null(value)}, {"threshold", threshold}, {"pass", pass}};
}

std::string csv_escape(std::string s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch == '\n' ? ' ' : ch;
  }
  return out + "\"";
}

}  // namespace

// ---------------------------------------------------------------------------
// simulate

void cmd_simulate(const ExperimentConfig& cfg, std::ostream& out) {
  const auto& spec = cfg.spec;
  const auto& run = cfg.run;
  std::optional<PeriodicOrbit> orbit;
  if (run.orbit) orbit = locate_orbit(cfg, spec.h, spec.c, cfg.orbit_guess);

  Vec3 u0;
  if (run.initial) {
    u0 = *run.initial;
  } else {
    if (!orbit && !cfg.orbit_guess) throw ConfigError("config /run: needs 'initial', 'seed' or 'orbit_guess'");
    const Vec3 base = orbit ? orbit->anchor : project_to_fiber(spec.sys, spec.h, spec.c, *cfg.orbit_guess);
    u0 = run.offset == 0.0 ? base
                           : offset_point(spec.sys, base, run.offset,
                                          run.offset_kind.value_or(default_offset_kind(spec.mode)));
  }

  const VectorField3 field = run.unperturbed ? hamiltonian_field(spec.sys) : build_perturbed_field(spec);
  std::vector<double> times;
  const auto steps = static_cast<std::size_t>(std::floor(run.t_end / run.sample_dt * (1.0 + 1e-12)));
  for (std::size_t k = 0; k <= steps; ++k) times.push_back(std::min(run.t_end, static_cast<double>(k) * run.sample_dt));
  if (times.back() < run.t_end) times.push_back(run.t_end);

  // Integrated from sample to sample so every row is an integrator node.
  out << "t,x,y,z,H,C,H_err,C_err,dist_to_orbit\n";
  Vec3 u = u0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double t = times[k];
    if (k > 0) {
      try {
        u = integrate(field, u, t - times[k - 1], cfg.integrator).final_state();
      } catch (const IntegrationError& e) {
        throw IntegrationError(e.kind(), times[k - 1] + e.time(), e.what());
      }
    }
    const double hv = spec.sys.H(u);
    const double cv = spec.sys.C(u);
    out << format_number(t) << ',' << format_number(u.x()) << ',' << format_number(u.y()) << ','
        << format_number(u.z()) << ',' << format_number(hv) << ',' << format_number(cv) << ','
        << format_number(hv - spec.h) << ',' << format_number(cv - spec.c) << ',';
    if (orbit) out << format_number(orbit_distance(*orbit, u));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// floquet

CommandResult cmd_floquet(const ExperimentConfig& cfg) {
  const auto& spec = cfg.spec;
  const auto& th = cfg.thresholds;
  const IntegratorConfig ic = analysis_integrator(cfg.integrator);
  const PeriodicOrbit orbit = locate_orbit(cfg, spec.h, spec.c, cfg.orbit_guess);
  const FloquetReport fr = floquet_analysis(spec, orbit, ic);

  ordered_json rep;
  rep["command"] = "floquet";
  rep["system"] = cfg.system_name;
  rep["mode"] = std::string(to_string(spec.mode));
  rep["fiber"] = {{"h", spec.h}, {"c", spec.c}};
  rep["orbit"] = {{"anchor", vec_json(orbit.anchor)},
                  {"period", orbit.period},
                  {"samples", orbit.size()},
                  {"closure", orbit.closure},
                  {"fiber_residual", orbit.fiber_residual},
                  {"min_speed", orbit.min_speed}};

  ordered_json computed = ordered_json::array();
  for (const auto& z : fr.computed) {
    computed.push_back({{"re", z.real()}, {"im", z.imag()}, {"modulus", std::abs(z)}});
  }
  const auto rel = fr.relative_errors();
  const double max_rel = fr.max_relative_error();
  const std::size_t trivial = fr.trivial_count(th.multiplier);
  const double max_mod = fr.max_modulus();
  // Largest modulus among the multipliers that are not the trivial ones.
  double max_nontrivial = 0.0;
  for (std::size_t i = 0; i < fr.computed.size(); ++i) {
    if (std::abs(fr.predicted[i] - 1.0) > th.multiplier) max_nontrivial = std::max(max_nontrivial, std::abs(fr.computed[i]));
  }
  const bool unstable = max_mod > 1.0 + th.multiplier;

  rep["floquet"] = {{"computed", computed},
                    {"predicted", fr.predicted},
                    {"relative_errors", rel},
                    {"max_relative_error", max_rel},
                    {"exponent_H", fr.exponent_H},
                    {"exponent_C", fr.exponent_C},
                    {"trivial_count", trivial},
                    {"expected_trivial", fr.expected_trivial},
                    {"liouville_mismatch", fr.liouville_mismatch},
                    {"max_modulus", max_mod},
                    {"unstable", unstable}};

  if (is_stabilizing(spec.mode)) {
    const double offset = cfg.run.offset != 0.0 ? cfg.run.offset : 1e-3;
    const OffsetKind kind = cfg.run.offset_kind.value_or(default_offset_kind(spec.mode));
    const Vec3 u0 = offset_point(spec.sys, orbit.anchor, offset, kind);
    const DecayRun d = run_decay(spec, orbit, u0, cfg.run.periods, cfg.run.decay_floor, ic);
    rep["decay_fit"] = {{"quantity", d.tracks_H ? "H" : "C"},
                        {"offset", offset},
                        {"offset_kind", std::string(offset_kind_name(kind))},
                        {"periods", cfg.run.periods},
                        {"periods_used", d.fit.periods_used},
                        {"fitted_rate", number_or_null(d.fit.rate)},
                        {"predicted_rate", d.predicted},
                        {"final_distance", d.final_distance}};
  } else {
    rep["decay_fit"] = nullptr;
  }

  // Drift of both integrals along the unperturbed flow from the anchor.
  {
    const double t_end = static_cast<double>(cfg.run.periods) * orbit.period;
    const Trajectory traj = integrate(hamiltonian_field(spec.sys), orbit.anchor, t_end, cfg.integrator);
    double dh = 0.0, dc = 0.0;
    for (const auto& u : traj.states()) {
      dh = std::max(dh, std::abs(spec.sys.H(u) - spec.h));
      dc = std::max(dc, std::abs(spec.sys.C(u) - spec.c));
    }
    rep["conservation"] = {{"t_end", t_end}, {"max_H_drift", dh}, {"max_C_drift", dc}};
  }

  const bool match = max_rel <= th.multiplier;
  const bool closure_ok = orbit.closure <= th.closure;
  const bool trivial_ok = trivial == fr.expected_trivial;
  const bool direction_ok = is_stabilizing(spec.mode) ? max_nontrivial < 1.0 : unstable;
  ordered_json criteria = ordered_json::array();
  criteria.push_back(criterion("multiplier_match", max_rel, th.multiplier, match));
  criteria.push_back(criterion("closure", orbit.closure, th.closure, closure_ok));
  criteria.push_back(criterion("trivial_multiplicity", static_cast<double>(trivial),
                               static_cast<double>(fr.expected_trivial), trivial_ok));
  criteria.push_back(criterion(is_stabilizing(spec.mode) ? "nontrivial_inside_unit_circle" : "modulus_above_one",
                               is_stabilizing(spec.mode) ? max_nontrivial : max_mod, 1.0, direction_ok));
  criteria.push_back(criterion("liouville", fr.liouville_mismatch, 1e-3, fr.liouville_mismatch <= 1e-3));
  rep["criteria"] = criteria;
  rep["pass"] = match;
  return {rep, match ? kSuccess : kThresholdFailure};
}

// ---------------------------------------------------------------------------
// sweep

namespace {

struct SweepJob {
  FiberPoint fiber;
  double scale = 1.0;
  double offset = 0.0;
};

std::string sweep_row(const ExperimentConfig& cfg, std::size_t index, const SweepJob& job) {
  std::vector<std::string> cols(16);
  cols[0] = std::to_string(index);
  cols[1] = format_number(job.fiber.h);
  cols[2] = format_number(job.fiber.c);
  cols[3] = format_number(job.scale);
  cols[4] = format_number(job.offset);
  try {
    PerturbationSpec spec = cfg.spec;
    spec.h = job.fiber.h;
    spec.c = job.fiber.c;
    spec.alpha = spec.alpha.scaled(job.scale);
    spec.beta = spec.beta.scaled(job.scale);
    const IntegratorConfig ic = analysis_integrator(cfg.integrator);
    const PeriodicOrbit orbit = locate_orbit(cfg, spec.h, spec.c, job.fiber.guess ? job.fiber.guess : cfg.orbit_guess);
    const FloquetReport fr = floquet_analysis(spec, orbit, ic);
    cols[5] = format_number(orbit.period);
    for (std::size_t i = 0; i < 3; ++i) cols[6 + i] = format_number(std::abs(fr.computed[i]));
    const double max_rel = fr.max_relative_error();
    cols[9] = format_number(max_rel);
    bool pass = max_rel <= cfg.thresholds.multiplier;
    if (is_stabilizing(spec.mode)) {
      const OffsetKind kind = cfg.run.offset_kind.value_or(default_offset_kind(spec.mode));
      const Vec3 u0 = offset_point(spec.sys, orbit.anchor, job.offset, kind);
      const DecayRun d = run_decay(spec, orbit, u0, cfg.run.periods, cfg.run.decay_floor, ic);
      if (d.fit.ok()) cols[10] = format_number(d.fit.rate);
      cols[11] = format_number(d.predicted);
      cols[12] = format_number(d.final_distance);
      const bool converged = d.final_distance <= cfg.thresholds.convergence;
      cols[13] = converged ? "true" : "false";
      pass = pass && converged;
    } else {
      cols[11] = format_number(-orbit_mean(orbit, uses_c_preserving_term(spec.mode) ? decay_rates(spec).lambda_H
                                                                                   : decay_rates(spec).lambda_C));
    }
    cols[14] = pass ? "true" : "false";
  } catch (const std::exception& e) {
    cols[14] = "false";
    cols[15] = csv_escape(e.what());
  }
  std::string line;
  for (std::size_t i = 0; i < cols.size(); ++i) line += (i ? "," : "") + cols[i];
  return line;
}

}  // namespace

void cmd_sweep(const ExperimentConfig& cfg, std::ostream& out) {
  const auto& sw = cfg.sweep;
  const std::vector<FiberPoint> fibers =
      sw.fibers.value_or(std::vector<FiberPoint>{{cfg.spec.h, cfg.spec.c, cfg.orbit_guess}});
  const std::vector<double> scales = sw.alpha_scale.value_or(std::vector<double>{1.0});
  const std::vector<double> offsets =
      sw.offsets.value_or(std::vector<double>{cfg.run.offset != 0.0 ? cfg.run.offset : 1e-3});

  std::vector<SweepJob> jobs;
  for (const auto& f : fibers) {
    for (double s : scales) {
      for (double o : offsets) jobs.push_back({f, s, o});
    }
  }

  std::vector<std::string> rows(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) rows[i] = sweep_row(cfg, i, jobs[i]);
  };
  const unsigned n = std::max(1u, std::min<unsigned>(sw.workers, static_cast<unsigned>(jobs.size())));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  out << "run,h,c,alpha_scale,offset,period,multiplier_1,multiplier_2,multiplier_3,max_relative_error,"
         "fitted_rate,predicted_rate,final_distance,converged,pass,error\n";
  for (const auto& row : rows) out << row << '\n';
}

// ---------------------------------------------------------------------------
// check

namespace {

double ratio(double num, double den) {
  if (num == 0.0) return 0.0;
  return den > 0.0 ? num / den : std::numeric_limits<double>::infinity();
}

Vec3 rikitake_c_bracket(double b, const Vec3& u) {
  const double x = u.x(), y = u.y(), z = u.z();
  return {x * (-y * y - 2 * z * z + 2 * b * z), y * (x * x + 2 * z * z + 2 * b * z), z * (x * x - y * y) - b * (x * x + y * y)};
}

Vec3 rikitake_h_bracket(double b, const Vec3& u) {
  const double x = u.x(), y = u.y(), z = u.z();
  return {x * (-y * y / 2 + b * z - b * b), y * (-x * x / 2 - b * z - b * b),
          0.5 * (-z * (x * x + y * y) + b * (x * x - y * y))};
}

}  // namespace

CommandResult cmd_check(const ExperimentConfig& cfg) {
  const auto& spec = cfg.spec;
  const auto& sys = spec.sys;
  const auto& th = cfg.thresholds;
  const Mode mode = spec.mode;
  const bool c_term = uses_c_preserving_term(mode);
  const bool h_term = uses_h_preserving_term(mode);

  const VectorField3 field = build_perturbed_field(spec);
  const VectorField3 x0 = hamiltonian_field(sys);
  std::optional<VectorField3> tc, th_term;
  if (c_term) tc = c_preserving_term(spec);
  if (h_term) th_term = h_preserving_term(spec);
  const DecayRates rates = decay_rates(spec);

  // Oracle terms with the stabilising signs of both items.
  std::optional<VectorField3> oracle_c, oracle_h;
  if (cfg.rikitake_beta) {
    PerturbationSpec full = spec;
    full.mode = Mode::Full_Stabilize;
    oracle_c = c_preserving_term(full);
    oracle_h = h_preserving_term(full);
  }

  std::mt19937_64 rng(cfg.seed);
  std::array<std::uniform_real_distribution<double>, 3> dist;
  for (std::size_t i = 0; i < 3; ++i) {
    dist[i] = std::uniform_real_distribution<double>(cfg.check.box[i][0], cfg.check.box[i][1]);
  }

  double c_pres = 0.0, h_pres = 0.0, decay_h = 0.0, decay_c = 0.0;
  double oracle_field = 0.0, oracle_c_err = 0.0, oracle_h_err = 0.0;
  std::size_t degenerate = 0;
  for (std::size_t k = 0; k < cfg.check.samples; ++k) {
    Vec3 u;
    for (int i = 0; i < 3; ++i) u[i] = dist[i](rng);
    const Vec3 gh = sys.H.grad(u);
    const Vec3 gc = sys.C.grad(u);
    const double g = cross(gh, gc).norm();
    if (!(g > 1e-12 * std::max(1.0, gh.norm() * gc.norm()))) {
      ++degenerate;
      continue;
    }
    const Vec3 y = field(u);
    const double dh = sys.H(u) - spec.h;
    const double dc = sys.C(u) - spec.c;
    if (tc) {
      const Vec3 t = (*tc)(u);
      c_pres = std::max(c_pres, ratio(std::abs(t.dot(gc)), t.norm() * gc.norm()));
      const double lhs = y.dot(gh);
      const double rhs = rates.lambda_H(u) * dh;
      decay_h = std::max(decay_h, ratio(std::abs(lhs - rhs), y.norm() * gh.norm() + std::abs(rhs)));
    }
    if (th_term) {
      const Vec3 t = (*th_term)(u);
      h_pres = std::max(h_pres, ratio(std::abs(t.dot(gh)), t.norm() * gh.norm()));
      const double lhs = y.dot(gc);
      const double rhs = rates.lambda_C(u) * dc;
      decay_c = std::max(decay_c, ratio(std::abs(lhs - rhs), y.norm() * gc.norm() + std::abs(rhs)));
    }
    if (cfg.rikitake_beta) {
      const double b = *cfg.rikitake_beta;
      const Vec3 direct = systems::rikitake_direct(b, u);
      oracle_field = std::max(oracle_field, ratio((x0(u) - direct).norm(), direct.norm()));
      const Vec3 ec = -spec.alpha(u) * dh * rikitake_c_bracket(b, u);
      const Vec3 eh = spec.beta(u) * dc * rikitake_h_bracket(b, u);
      oracle_c_err = std::max(oracle_c_err, ratio(((*oracle_c)(u) - ec).norm(), ec.norm()));
      oracle_h_err = std::max(oracle_h_err, ratio(((*oracle_h)(u) - eh).norm(), eh.norm()));
    }
  }

  ordered_json rep;
  rep["command"] = "check";
  rep["system"] = cfg.system_name;
  rep["mode"] = std::string(to_string(mode));
  rep["fiber"] = {{"h", spec.h}, {"c", spec.c}};
  rep["seed"] = cfg.seed;
  rep["samples"] = cfg.check.samples;
  rep["box"] = cfg.check.box;
  rep["degenerate_samples"] = degenerate;
  if (degenerate == cfg.check.samples) {
    rep["note"] = "every sample is degenerate (grad H x grad C vanishes); identities are trivially zero";
  } else if (degenerate > 0) {
    rep["note"] = "degenerate samples (grad H x grad C vanishes) were skipped";
  } else {
    rep["note"] = nullptr;
  }

  ordered_json viol;
  ordered_json criteria = ordered_json::array();
  auto add = [&](const std::string& name, double value, double threshold) {
    viol[name] = number_or_null(value);
    criteria.push_back(criterion(name, value, threshold, value <= threshold));
  };
  if (c_term) {
    add("c_preservation", c_pres, th.preservation);
    add("decay_identity_H", decay_h, th.identity);
  }
  if (h_term) {
    add("h_preservation", h_pres, th.preservation);
    add("decay_identity_C", decay_c, th.identity);
  }
  if (cfg.rikitake_beta) {
    add("rikitake_field_oracle", oracle_field, th.identity);
    add("rikitake_c_term_oracle", oracle_c_err, th.identity);
    add("rikitake_h_term_oracle", oracle_h_err, th.identity);
  }
  rep["max_violation"] = viol;
  rep["criteria"] = criteria;
  bool pass = true;
  for (const auto& c : criteria) pass = pass && c["pass"].get<bool>();
  rep["pass"] = pass;
  return {rep, pass ? kSuccess : kThresholdFailure};
}

}  // namespace orbitstab::cli
