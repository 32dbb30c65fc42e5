#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

namespace orbitstab {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Raised when a field is evaluated at a non-finite state or produces a
/// non-finite value.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

bool is_finite(const Vec3& v);
bool is_finite(const Mat3& m);

/// Right-handed cross product.
Vec3 cross(const Vec3& a, const Vec3& b);

/// a x (b x c) evaluated through the expansion b<a,c> - c<a,b>.
Vec3 triple_expand(const Vec3& a, const Vec3& b, const Vec3& c);

/// Skew matrix [a]x with [a]x * v == a x v.
Mat3 skew(const Vec3& a);

/// Real-valued function on (an open subset of) R^3 with an exact gradient
/// and, optionally, an exact Hessian.
class ScalarField {
 public:
  using EvalFn = std::function<double(const Vec3&)>;
  using GradFn = std::function<Vec3(const Vec3&)>;
  using HessFn = std::function<Mat3(const Vec3&)>;

  ScalarField(EvalFn eval, GradFn grad, std::optional<HessFn> hessian = std::nullopt,
              std::string domain_hint = "R^3");

  static ScalarField constant(double value);

  double operator()(const Vec3& u) const { return eval_(u); }
  double eval(const Vec3& u) const { return eval_(u); }
  Vec3 grad(const Vec3& u) const { return grad_(u); }
  bool has_hessian() const { return hessian_.has_value(); }
  /// Throws std::logic_error when no exact Hessian is attached.
  Mat3 hessian(const Vec3& u) const;
  const std::string& domain_hint() const { return domain_hint_; }

  /// Same field with every value multiplied by `factor`.
  ScalarField scaled(double factor) const;

 private:
  EvalFn eval_;
  GradFn grad_;
  std::optional<HessFn> hessian_;
  std::string domain_hint_;
};

/// Vector field on R^3 with an optional exact Jacobian.
class VectorField3 {
 public:
  using EvalFn = std::function<Vec3(const Vec3&)>;
  using JacFn = std::function<Mat3(const Vec3&)>;

  explicit VectorField3(EvalFn eval, std::optional<JacFn> jacobian = std::nullopt);

  Vec3 operator()(const Vec3& u) const { return eval_(u); }
  Vec3 eval(const Vec3& u) const { return eval_(u); }
  bool has_exact_jacobian() const { return jacobian_.has_value(); }
  /// Exact Jacobian when attached, central differences otherwise.
  Mat3 jacobian(const Vec3& u) const;
  Mat3 fd_jacobian(const Vec3& u) const;

  static VectorField3 zero();
  /// u' = A u
  static VectorField3 linear(const Mat3& a);

 private:
  EvalFn eval_;
  std::optional<JacFn> jacobian_;
};

/// The triple (nu, H, C) of a three-dimensional Hamiltonian system
/// u' = nu(u) (grad H(u) x grad C(u)).
struct SystemDef {
  ScalarField nu = ScalarField::constant(1.0);
  ScalarField H = ScalarField::constant(0.0);
  ScalarField C = ScalarField::constant(0.0);
  std::string name;
};

/// grad H x grad C, the unscaled Hamiltonian direction.
Vec3 poisson_direction(const SystemDef& sys, const Vec3& u);

VectorField3 hamiltonian_field(const SystemDef& sys);

/// det(grad H | grad C | X) by cofactor expansion. Equals nu |grad H x grad C|^2.
double independence_det(const SystemDef& sys, const Vec3& u);

/// Largest discrepancy between f.grad(u) and central differences of f.eval,
/// scaled by max(1, |grad|_inf).
double grad_fd_check(const ScalarField& f, const Vec3& u, double step);

/// Same check applied to the exact Jacobian of a vector field.
double jacobian_fd_check(const VectorField3& f, const Vec3& u, double step);

}  // namespace orbitstab
