#pragma once

#include "orbitstab/core_fields.hpp"
#include "orbitstab/expr.hpp"
#include "orbitstab/planar.hpp"

#include <functional>
#include <string>
#include <vector>

namespace orbitstab::systems {

/// Conservative part of the Rikitake two-disk dynamo,
/// X = (yz + beta y, xz - beta x, -xy), realised with
/// nu = 1, H = (-x^2 + y^2)/4 - beta z, C = (x^2 + y^2)/2 + z^2.
SystemDef rikitake(double beta);

/// The field X of rikitake(beta) written out directly.
Vec3 rikitake_direct(double beta, const Vec3& u);

/// Free rigid body in body-frame angular momentum m = (x, y, z):
/// H = (x^2/i1 + y^2/i2 + z^2/i3)/2, C = |m|^2/2 and nu = -1, so that
/// X = m x (I^-1 m) is Euler's equation. Moments must be positive and distinct.
SystemDef rigid_body(double i1, double i2, double i3);

/// Euler's equations ((1/i3 - 1/i2) yz, (1/i1 - 1/i3) xz, (1/i2 - 1/i1) xy).
Vec3 euler_direct(double i1, double i2, double i3, const Vec3& u);

/// mu = 1, Hcal = (x^2 + y^2)/2 on the punctured plane.
PlanarSystem harmonic2d();

/// A system definition given as expression text.
SystemDef from_expressions(std::string_view nu, std::string_view h, std::string_view c,
                           const expr::ParamTable& params, std::string name = "expression");

struct BuiltinSystem {
  std::string name;
  expr::ParamTable defaults;
  std::function<SystemDef(const expr::ParamTable&)> factory;
};

const std::vector<BuiltinSystem>& builtins();

/// Looks up a builtin by name ("rikitake", "rigid_body", "harmonic2d"; the
/// planar system is returned in its three-dimensional realisation). Missing
/// parameters take their defaults; unknown names throw std::invalid_argument.
SystemDef make_builtin(const std::string& name, const expr::ParamTable& params = {});

}  // namespace orbitstab::systems
