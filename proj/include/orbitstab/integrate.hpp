#pragma once

#include "orbitstab/core_fields.hpp"

#include <complex>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace orbitstab {

enum class Method { RK4, DOPRI45 };

struct IntegratorConfig {
  Method method = Method::DOPRI45;
  double step = 1e-3;  // RK4 step, DOPRI45 initial step hint (<= 0: automatic)
  double rel_tol = 1e-10;
  double abs_tol = 1e-12;
  double max_step = std::numeric_limits<double>::infinity();
  std::size_t max_steps = 5'000'000;

  static IntegratorConfig adaptive(double rel_tol, double abs_tol);
  static IntegratorConfig fixed(double step);

  /// Throws std::invalid_argument on non-positive tolerances or step.
  void validate() const;
};

class IntegrationError : public std::runtime_error {
 public:
  enum class Kind { StepUnderflow, MaxSteps, NonFinite };
  IntegrationError(Kind kind, double t, const std::string& what);
  Kind kind() const { return kind_; }
  double time() const { return t_; }

 private:
  Kind kind_;
  double t_;
};

/// Accepted steps of an integration with a piecewise cubic Hermite interpolant
/// built from the stored states and derivatives.
class Trajectory {
 public:
  Trajectory() = default;
  void push(double t, const Vec3& u, const Vec3& du);

  std::size_t size() const { return times_.size(); }
  bool empty() const { return times_.empty(); }
  const std::vector<double>& times() const { return times_; }
  const std::vector<Vec3>& states() const { return states_; }
  const std::vector<Vec3>& derivatives() const { return derivs_; }
  double t_begin() const { return times_.front(); }
  double t_end() const { return times_.back(); }
  const Vec3& final_state() const { return states_.back(); }

  /// Interpolated state; t is clamped to [t_begin, t_end].
  Vec3 at(double t) const;
  /// Evenly spaced resampling including both end points (n >= 2).
  std::vector<double> uniform_times(std::size_t n) const;

 private:
  std::vector<double> times_;
  std::vector<Vec3> states_;
  std::vector<Vec3> derivs_;
};

/// Cubic Hermite interpolation on [t0, t1].
Vec3 hermite(double t0, const Vec3& u0, const Vec3& du0, double t1, const Vec3& u1,
             const Vec3& du1, double t);

/// Integrates u' = field(u) from u0 over [0, t_end]. t_end == 0 yields a
/// single node.
Trajectory integrate(const VectorField3& field, const Vec3& u0, double t_end,
                     const IntegratorConfig& cfg);

/// Oriented plane {u : <u - point, normal> = 0}.
struct Section {
  Vec3 point;
  Vec3 normal;
  double operator()(const Vec3& u) const { return (u - point).dot(normal); }
};

struct Crossing {
  double t;
  Vec3 u;
};

class SectionError : public std::runtime_error {
 public:
  SectionError(const std::string& what, std::size_t found);
  std::size_t found() const { return found_; }

 private:
  std::size_t found_;
};

/// First `count` crossings of the section from negative to positive side
/// within [0, t_max], localised by bisection on the interpolant to 1e-12 in
/// time. A start on the section is not a crossing.
std::vector<Crossing> locate_section_crossings(const VectorField3& field, const Vec3& u0,
                                               const Section& section, std::size_t count,
                                               double t_max, const IntegratorConfig& cfg);

/// Solution of the variational equation M' = DY(u) M, M(0) = I along a
/// T-periodic solution, kept as the ordered product of segment matrices so
/// that widely separated multipliers stay resolvable.
struct Monodromy {
  Mat3 matrix = Mat3::Identity();
  double period = 0.0;
  std::vector<Mat3> segments;    // matrix = segments.back() * ... * segments.front()
  double trace_integral = 0.0;   // integral of trace DY over one period
  double closure = 0.0;          // |u(T) - u(0)| (segment mismatch for restarted runs)
  bool periodic = true;          // closure <= closure_tol

  double log_abs_det() const;
  /// |det(matrix) / exp(trace_integral) - 1|.
  double liouville_mismatch() const;
};

constexpr double kDefaultClosureTol = 1e-6;

/// Integrates state and variational system from `anchor` over [0, T].
Monodromy monodromy_matrix(const VectorField3& field, const Vec3& anchor, double T,
                           const IntegratorConfig& cfg, std::size_t segments = 32,
                           double closure_tol = kDefaultClosureTol);

/// Same, but segment k restarts from starts[k] and lasts T / starts.size();
/// the starts are consecutive points of the periodic orbit.
Monodromy monodromy_from_segments(const VectorField3& field, std::span<const Vec3> starts, double T,
                                  const IntegratorConfig& cfg,
                                  double closure_tol = kDefaultClosureTol);

/// Eigenvalues of the monodromy product, by modulus ascending. Uses a
/// periodic QR (product subspace) iteration over the segments.
std::vector<std::complex<double>> floquet_multipliers(const Monodromy& m);

}  // namespace orbitstab
