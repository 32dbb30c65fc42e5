#include "orbitstab/orbits.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace orbitstab {

namespace {

constexpr double kFiberResidual = 1e-12;

double fiber_residual(const SystemDef& sys, double h, double c, const Vec3& u) {
  return std::max(std::abs(sys.H(u) - h), std::abs(sys.C(u) - c));
}

// n points gamma(i T / n), each integrated from the previous one so that
// no interpolation error enters the samples.
std::vector<Vec3> sample_flow(const VectorField3& x, const Vec3& anchor, double period, std::size_t n,
                              const IntegratorConfig& cfg) {
  std::vector<Vec3> out(n);
  Vec3 u = anchor;
  const double dt = period / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = u;
    if (i + 1 < n) u = integrate(x, u, dt, cfg).final_state();
  }
  return out;
}

// Midpoint error of the quadratic through every other sample, measured
// against the odd samples of `fine`.
double interpolation_error(const std::vector<Vec3>& fine) {
  const std::size_t n = fine.size();
  double worst = 0.0;
  for (std::size_t j = 1; j < n; j += 2) {
    const Vec3 q = 0.375 * fine[j - 1] + 0.75 * fine[(j + 1) % n] - 0.125 * fine[(j + 3) % n];
    worst = std::max(worst, (q - fine[j]).norm());
  }
  return worst;
}

double wrap(double t, double period) {
  double r = std::fmod(t, period);
  if (r < 0.0) r += period;
  return r;
}

}  // namespace

Vec3 project_to_fiber(const SystemDef& sys, double h, double c, const Vec3& guess,
                      int max_iterations) {
  Vec3 u = guess;
  for (int it = 0; it <= max_iterations; ++it) {
    const Eigen::Vector2d r(sys.H(u) - h, sys.C(u) - c);
    if (!r.allFinite()) {
      throw OrbitError(OrbitError::Kind::NoConvergence, "fiber projection left the domain");
    }
    if (r.cwiseAbs().maxCoeff() <= kFiberResidual) return u;
    if (it == max_iterations) break;
    Eigen::Matrix<double, 2, 3> j;
    j.row(0) = sys.H.grad(u).transpose();
    j.row(1) = sys.C.grad(u).transpose();
    const Eigen::Matrix2d gram = j * j.transpose();
    // det(gram) = |grad H x grad C|^2
    const double det = gram.determinant();
    if (!(det > 1e-12 * gram(0, 0) * gram(1, 1))) {
      throw OrbitError(OrbitError::Kind::Singular,
                       "fiber projection: grad H and grad C are dependent (rank < 2)");
    }
    u -= j.transpose() * gram.inverse() * r;
  }
  throw OrbitError(OrbitError::Kind::NoConvergence,
                   "fiber projection did not converge in " + std::to_string(max_iterations) +
                       " iterations");
}

Vec3 PeriodicOrbit::at(double t) const {
  const double dt = spacing();
  const double s = wrap(t, period) / dt;
  std::size_t i = static_cast<std::size_t>(std::floor(s));
  if (i >= samples.size()) i = samples.size() - 1;
  const std::size_t k = (i + 1) % samples.size();
  const double t0 = static_cast<double>(i) * dt;
  return hermite(t0, samples[i], velocities[i], t0 + dt, samples[k], velocities[k], s * dt);
}

PeriodicOrbit find_periodic_orbit(const SystemDef& sys, double h, double c, const Vec3& seed,
                                  const OrbitOptions& opts) {
  const Vec3 anchor = project_to_fiber(sys, h, c, seed);
  const VectorField3 x = hamiltonian_field(sys);
  const Vec3 x0 = x(anchor);
  if (!(x0.norm() > opts.equilibrium_tol)) {
    throw OrbitError(OrbitError::Kind::Equilibrium, "projected seed is an equilibrium point");
  }
  const Section section{anchor, x0.normalized()};

  double period = 0.0;
  try {
    period = locate_section_crossings(x, anchor, section, 1, opts.t_max, opts.integrator).front().t;
  } catch (const SectionError& e) {
    throw OrbitError(OrbitError::Kind::NoReturn, std::string("no return to the section: ") + e.what());
  } catch (const IntegrationError& e) {
    throw OrbitError(OrbitError::Kind::NoReturn, std::string("integration failed: ") + e.what());
  }

  // Newton correction of the return time on the flow itself.
  Trajectory traj;
  for (int it = 0; it < 3; ++it) {
    traj = integrate(x, anchor, period, opts.integrator);
    const Vec3 end = traj.final_state();
    const double rate = x(end).dot(section.normal);
    if (!(rate > 0.0)) break;
    const double dt = section(end) / rate;
    period -= dt;
    if (std::abs(dt) < 1e-15 * period) break;
  }
  traj = integrate(x, anchor, period, opts.integrator);

  PeriodicOrbit orbit;
  orbit.anchor = anchor;
  orbit.period = period;
  orbit.h = h;
  orbit.c = c;
  orbit.closure = (traj.final_state() - anchor).norm();
  if (orbit.closure > opts.closure_tol) {
    throw OrbitError(OrbitError::Kind::Closure,
                     "closure residual " + std::to_string(orbit.closure) + " exceeds tolerance");
  }

  std::size_t n = opts.min_samples;
  std::vector<Vec3> coarse = sample_flow(x, anchor, period, n, opts.integrator);
  for (;;) {
    const std::vector<Vec3> fine = sample_flow(x, anchor, period, 2 * n, opts.integrator);
    orbit.sample_error = interpolation_error(fine);
    if (orbit.sample_error < opts.sample_tol || 2 * n > opts.max_samples) break;
    coarse = fine;
    n *= 2;
  }
  orbit.samples = std::move(coarse);
  orbit.velocities.reserve(n);
  orbit.min_speed = std::numeric_limits<double>::infinity();
  for (const Vec3& s : orbit.samples) {
    orbit.velocities.push_back(x(s));
    orbit.min_speed = std::min(orbit.min_speed, orbit.velocities.back().norm());
    orbit.fiber_residual = std::max(orbit.fiber_residual, fiber_residual(sys, h, c, s));
  }
  if (orbit.fiber_residual > opts.fiber_tol) {
    throw OrbitError(OrbitError::Kind::Fiber,
                     "orbit leaves the fiber by " + std::to_string(orbit.fiber_residual));
  }
  if (!(orbit.min_speed > opts.equilibrium_tol)) {
    throw OrbitError(OrbitError::Kind::Equilibrium, "orbit passes through an equilibrium");
  }
  return orbit;
}

double orbit_distance(const PeriodicOrbit& orbit, const Vec3& u) {
  const std::size_t n = orbit.size();
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double d2 = (orbit.samples[i] - u).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  const Vec3& pm = orbit.samples[(best + n - 1) % n];
  const Vec3& p0 = orbit.samples[best];
  const Vec3& pp = orbit.samples[(best + 1) % n];
  // p(s) = p0 + s b + s^2 a on s in [-1, 1]
  const Vec3 b = 0.5 * (pp - pm);
  const Vec3 a = 0.5 * (pp - 2.0 * p0 + pm);
  double s = 0.0;
  for (int it = 0; it < 20; ++it) {
    const Vec3 r = p0 + s * b + s * s * a - u;
    const Vec3 dp = b + 2.0 * s * a;
    const double g = r.dot(dp);
    const double dg = dp.squaredNorm() + 2.0 * r.dot(a);
    if (!(dg > 0.0)) break;
    const double next = std::clamp(s - g / dg, -1.0, 1.0);
    if (std::abs(next - s) < 1e-15) {
      s = next;
      break;
    }
    s = next;
  }
  // Polish on the cubic Hermite interpolant around the quadratic estimate.
  const double dt = orbit.spacing();
  const double tc = (static_cast<double>(best) + s) * dt;
  auto d2 = [&](double t) { return (orbit.at(t) - u).squaredNorm(); };
  constexpr double kGolden = 0.6180339887498949;
  double lo = tc - 0.5 * dt, hi = tc + 0.5 * dt;
  double m1 = hi - kGolden * (hi - lo), m2 = lo + kGolden * (hi - lo);
  double f1 = d2(m1), f2 = d2(m2);
  for (int it = 0; it < 60; ++it) {
    if (f1 < f2) {
      hi = m2; m2 = m1; f2 = f1;
      m1 = hi - kGolden * (hi - lo); f1 = d2(m1);
    } else {
      lo = m1; m1 = m2; f1 = f2;
      m2 = lo + kGolden * (hi - lo); f2 = d2(m2);
    }
  }
  const double refined = std::sqrt(std::min({f1, f2, d2(tc)}));
  return std::min(refined, std::sqrt(best_d2));
}

PhaseFit phase_align(const PeriodicOrbit& orbit, const Trajectory& traj, double t_a, double t_b,
                     std::size_t window_samples) {
  if (!(t_b > t_a)) throw std::invalid_argument("phase_align: empty window");
  if (window_samples < 2) throw std::invalid_argument("phase_align: need two window samples");
  std::vector<double> ts(window_samples);
  std::vector<Vec3> xs(window_samples);
  for (std::size_t j = 0; j < window_samples; ++j) {
    ts[j] = t_a + (t_b - t_a) * static_cast<double>(j) / static_cast<double>(window_samples - 1);
    xs[j] = traj.at(ts[j]);
  }
  const double period = orbit.period;
  auto objective = [&](double theta) {
    double sum = 0.0;
    for (std::size_t j = 0; j < ts.size(); ++j) sum += (xs[j] - orbit.at(ts[j] + theta)).norm();
    return sum / static_cast<double>(ts.size());
  };

  constexpr int kScan = 128;
  int best = 0;
  double best_val = std::numeric_limits<double>::infinity();
  for (int k = 0; k < kScan; ++k) {
    const double v = objective(period * k / kScan);
    if (v < best_val) {
      best_val = v;
      best = k;
    }
  }
  // golden-section search on the bracket around the best scan point
  const double inv_phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double lo = period * (best - 1) / kScan;
  double hi = period * (best + 1) / kScan;
  double x1 = hi - inv_phi * (hi - lo);
  double x2 = lo + inv_phi * (hi - lo);
  double f1 = objective(x1), f2 = objective(x2);
  while (hi - lo > 1e-12 * period) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = objective(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = objective(x2);
    }
  }
  const double theta = 0.5 * (lo + hi);
  PhaseFit fit{wrap(theta, period), objective(theta)};
  if (best_val < fit.residual) fit = {wrap(period * best / kScan, period), best_val};
  return fit;
}

std::array<double, 3> FloquetReport::relative_errors() const {
  std::array<double, 3> out{};
  for (std::size_t i = 0; i < 3 && i < computed.size(); ++i) {
    out[i] = std::abs(std::abs(computed[i]) - predicted[i]) / predicted[i];
  }
  return out;
}

double FloquetReport::max_relative_error() const {
  const auto e = relative_errors();
  return *std::max_element(e.begin(), e.end());
}

std::size_t FloquetReport::trivial_count(double tol) const {
  return static_cast<std::size_t>(std::count_if(
      computed.begin(), computed.end(), [tol](const auto& z) { return std::abs(z - 1.0) <= tol; }));
}

double FloquetReport::max_modulus() const {
  double m = 0.0;
  for (const auto& z : computed) m = std::max(m, std::abs(z));
  return m;
}

double orbit_mean(const PeriodicOrbit& orbit, const std::function<double(const Vec3&)>& f) {
  // trapezoid rule on a periodic integrand
  double sum = 0.0;
  for (const Vec3& s : orbit.samples) sum += f(s);
  return sum / static_cast<double>(orbit.size());
}

FloquetReport floquet_analysis(const PerturbationSpec& spec, const PeriodicOrbit& orbit,
                               const IntegratorConfig& cfg, std::size_t segments) {
  if (std::abs(spec.h - orbit.h) > 1e-9 || std::abs(spec.c - orbit.c) > 1e-9) {
    throw std::invalid_argument("floquet_analysis: orbit does not lie on the spec's fiber");
  }
  const std::size_t n = orbit.size();
  segments = std::clamp<std::size_t>(segments, 1, n);
  while (n % segments != 0) --segments;
  std::vector<Vec3> starts;
  for (std::size_t k = 0; k < segments; ++k) starts.push_back(orbit.samples[k * (n / segments)]);

  const VectorField3 y = build_perturbed_field(spec);
  const Monodromy m = monodromy_from_segments(y, starts, orbit.period, cfg);

  FloquetReport rep;
  rep.computed = floquet_multipliers(m);
  const DecayRates rates = decay_rates(spec);
  rep.exponent_H = orbit.period * orbit_mean(orbit, rates.lambda_H);
  rep.exponent_C = orbit.period * orbit_mean(orbit, rates.lambda_C);
  rep.predicted = {1.0, std::exp(rep.exponent_H), std::exp(rep.exponent_C)};
  std::sort(rep.predicted.begin(), rep.predicted.end());
  rep.expected_trivial =
      1 + (uses_c_preserving_term(spec.mode) ? 0 : 1) + (uses_h_preserving_term(spec.mode) ? 0 : 1);
  rep.closure = m.closure;
  rep.liouville_mismatch = m.liouville_mismatch();
  return rep;
}

std::vector<WindowMax> period_maxima(std::span<const double> times, std::span<const double> values,
                                     double period) {
  if (times.size() != values.size()) throw std::invalid_argument("period_maxima: size mismatch");
  if (!(period > 0.0)) throw std::invalid_argument("period_maxima: period must be positive");
  std::vector<WindowMax> out;
  if (times.empty()) return out;
  const double t0 = times.front();
  const std::size_t windows =
      static_cast<std::size_t>(std::floor((times.back() - t0) / period * (1.0 + 1e-12)));
  out.assign(windows, {0.0, -1.0});
  for (std::size_t i = 0; i < times.size(); ++i) {
    const auto k = static_cast<std::size_t>(std::floor((times[i] - t0) / period));
    if (k >= windows) continue;
    const double v = std::abs(values[i]);
    if (v > out[k].value) out[k] = {times[i], v};
  }
  return out;
}

DecayFit fit_decay_rate(std::span<const double> times, std::span<const double> values, double period,
                        double floor) {
  std::vector<double> ts, ls;
  for (const auto& w : period_maxima(times, values, period)) {
    if (w.value <= floor) break;
    ts.push_back(w.t);
    ls.push_back(std::log(w.value));
  }
  DecayFit fit;
  fit.periods_used = ts.size();
  if (ts.size() < 2) {
    fit.rate = std::numeric_limits<double>::quiet_NaN();
    return fit;
  }
  const double n = static_cast<double>(ts.size());
  const double mt = std::accumulate(ts.begin(), ts.end(), 0.0) / n;
  const double ml = std::accumulate(ls.begin(), ls.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    sxy += (ts[i] - mt) * (ls[i] - ml);
    sxx += (ts[i] - mt) * (ts[i] - mt);
  }
  fit.rate = -sxy / sxx;
  return fit;
}

Vec3 offset_point(const SystemDef& sys, const Vec3& anchor, double delta, OffsetKind kind) {
  const Vec3 gh = sys.H.grad(anchor);
  const Vec3 gc = sys.C.grad(anchor);
  const Vec3 x = sys.nu(anchor) * cross(gh, gc);
  if (!(x.norm() > 0.0)) throw std::invalid_argument("offset_point: anchor is an equilibrium");
  const Vec3 t = x.normalized();

  if (kind == OffsetKind::Transverse) {
    Vec3 d = gh.normalized() + gc.normalized();
    d -= t * t.dot(d);
    return anchor + delta * d.normalized();
  }
  const ScalarField& level = kind == OffsetKind::CasimirLevel ? sys.C : sys.H;
  const double target = level(anchor);
  Vec3 u = anchor + delta * cross(t, level.grad(anchor)).normalized();
  for (int it = 0; it < 8; ++it) {
    const Vec3 g = level.grad(u);
    const double r = level(u) - target;
    if (r == 0.0) break;
    u -= r / g.squaredNorm() * g;
  }
  return u;
}

}  // namespace orbitstab
