#pragma once

#include "orbitstab/core_fields.hpp"

#include <functional>
#include <string>

namespace orbitstab {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Smooth function on an open subset of the plane, with exact derivatives.
struct ScalarField2 {
  std::function<double(const Vec2&)> eval;
  std::function<Vec2(const Vec2&)> grad;
  std::function<Mat2(const Vec2&)> hessian;

  double operator()(const Vec2& v) const { return eval(v); }
  static ScalarField2 constant(double value);
};

using PlanarField = std::function<Vec2(const Vec2&)>;

/// v' = mu(v) J grad Hcal(v), J = [[0, 1], [-1, 0]].
struct PlanarSystem {
  ScalarField2 mu;
  ScalarField2 hamiltonian;
  std::string name;
};

/// Quarter turn J v.
inline Vec2 quarter_turn(const Vec2& v) { return {v.y(), -v.x()}; }

PlanarField planar_hamiltonian_field(const PlanarSystem& sys);

/// Three-dimensional realisation H(v,z) = Hcal(v), C(v,z) = z, nu(v,z) = mu(v).
SystemDef embed(const PlanarSystem& sys);
ScalarField embed(const ScalarField2& f);

/// Planar field viewed as a field on R^3 with zero third component.
VectorField3 lift(PlanarField f);

}  // namespace orbitstab
