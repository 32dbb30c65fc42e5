#pragma once

#include "orbitstab/core_fields.hpp"
#include "orbitstab/integrate.hpp"
#include "orbitstab/perturbation.hpp"

#include <array>
#include <complex>
#include <span>
#include <stdexcept>
#include <vector>

namespace orbitstab {

class OrbitError : public std::runtime_error {
 public:
  enum class Kind { Singular, NoConvergence, Equilibrium, NoReturn, Closure, Fiber };
  OrbitError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Gauss-Newton (minimum-norm steps) on the residual (H - h, C - c). Stops
/// once both residuals are <= 1e-12.
Vec3 project_to_fiber(const SystemDef& sys, double h, double c, const Vec3& guess,
                      int max_iterations = 50);

/// A certified periodic orbit of the conservative field: uniform samples
/// over one period together with the field velocities at the samples.
struct PeriodicOrbit {
  Vec3 anchor = Vec3::Zero();
  double period = 0.0;
  double h = 0.0;
  double c = 0.0;
  std::vector<Vec3> samples;     // gamma(i T / n), i = 0..n-1
  std::vector<Vec3> velocities;  // X(gamma(i T / n))
  double closure = 0.0;
  double fiber_residual = 0.0;   // max over samples of max(|H - h|, |C - c|)
  double min_speed = 0.0;        // min over samples of |X|
  double sample_error = 0.0;     // midpoint error estimate of the quadratic interpolant

  std::size_t size() const { return samples.size(); }
  double spacing() const { return period / static_cast<double>(samples.size()); }
  /// gamma(t), periodic in t, cubic Hermite between samples.
  Vec3 at(double t) const;
};

struct OrbitOptions {
  IntegratorConfig integrator = IntegratorConfig::adaptive(1e-12, 1e-14);
  double t_max = 1000.0;
  double closure_tol = kDefaultClosureTol;
  double fiber_tol = 1e-6;
  double equilibrium_tol = 1e-9;
  std::size_t min_samples = 256;
  std::size_t max_samples = std::size_t{1} << 16;
  double sample_tol = 1e-8;
};

/// Projects `seed` onto the fiber (h, c), takes the section through the
/// projected point with normal X there, and returns the first positive
/// return as a certified periodic orbit.
PeriodicOrbit find_periodic_orbit(const SystemDef& sys, double h, double c, const Vec3& seed,
                                  const OrbitOptions& opts = {});

/// Distance from u to the orbit: nearest sample refined on the local
/// quadratic through its neighbours.
double orbit_distance(const PeriodicOrbit& orbit, const Vec3& u);

struct PhaseFit {
  double theta0 = 0.0;    // in [0, T)
  double residual = 0.0;  // mean |x(t) - gamma(t + theta0)| over the window
};

/// Best time shift theta with x(t) ~ gamma(t + theta) on [t_a, t_b].
PhaseFit phase_align(const PeriodicOrbit& orbit, const Trajectory& traj, double t_a, double t_b,
                     std::size_t window_samples = 256);

struct FloquetReport {
  std::vector<std::complex<double>> computed;  // by modulus, ascending
  std::array<double, 3> predicted{};           // ascending
  double exponent_H = 0.0;                     // integral of lambda_H over one period
  double exponent_C = 0.0;
  std::size_t expected_trivial = 1;
  double closure = 0.0;
  double liouville_mismatch = 0.0;

  std::array<double, 3> relative_errors() const;
  double max_relative_error() const;
  /// Number of computed multipliers within `tol` of 1.
  std::size_t trivial_count(double tol = 1e-3) const;
  double max_modulus() const;
};

/// Computed multipliers of the perturbed field along `orbit` against
/// {1, exp(int lambda_H), exp(int lambda_C)}. The orbit must lie on the
/// spec's fiber.
FloquetReport floquet_analysis(const PerturbationSpec& spec, const PeriodicOrbit& orbit,
                               const IntegratorConfig& cfg = IntegratorConfig::adaptive(1e-12, 1e-14),
                               std::size_t segments = 64);

/// Mean of lambda over the orbit, (1/T) int_0^T lambda(gamma(t)) dt.
double orbit_mean(const PeriodicOrbit& orbit, const std::function<double(const Vec3&)>& f);

struct WindowMax {
  double t;
  double value;
};

/// Maximum of `values` in each complete window [k period, (k + 1) period).
std::vector<WindowMax> period_maxima(std::span<const double> times, std::span<const double> values,
                                     double period);

struct DecayFit {
  double rate = 0.0;  // -slope of log|D| against time
  std::size_t periods_used = 0;
  bool ok() const { return periods_used >= 2; }
};

/// Log-linear least squares on the per-period maxima of |values| that lie
/// above `floor`.
DecayFit fit_decay_rate(std::span<const double> times, std::span<const double> values, double period,
                        double floor = 1e-11);

enum class OffsetKind { Transverse, CasimirLevel, HamiltonianLevel };

/// Point at distance ~delta from `anchor`, orthogonal to X(anchor). The
/// level variants move inside C = C(anchor) (resp. H = H(anchor)) and are
/// re-projected onto that level.
Vec3 offset_point(const SystemDef& sys, const Vec3& anchor, double delta, OffsetKind kind);

}  // namespace orbitstab
