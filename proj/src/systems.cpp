#include "orbitstab/systems.hpp"

#include <cmath>
#include <stdexcept>

namespace orbitstab::systems {

namespace {

ScalarField constant_field(double v) { return ScalarField::constant(v); }

double param_or(const expr::ParamTable& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

}  // namespace

SystemDef rikitake(double beta) {
  if (!std::isfinite(beta)) throw std::invalid_argument("rikitake: beta must be finite");
  ScalarField h(
      [beta](const Vec3& u) { return 0.25 * (-u.x() * u.x() + u.y() * u.y()) - beta * u.z(); },
      [beta](const Vec3& u) -> Vec3 { return {-0.5 * u.x(), 0.5 * u.y(), -beta}; },
      ScalarField::HessFn([](const Vec3&) -> Mat3 { return Eigen::Vector3d(-0.5, 0.5, 0.0).asDiagonal(); }),
      "R^3");
  ScalarField c([](const Vec3& u) { return 0.5 * (u.x() * u.x() + u.y() * u.y()) + u.z() * u.z(); },
                [](const Vec3& u) -> Vec3 { return {u.x(), u.y(), 2.0 * u.z()}; },
                ScalarField::HessFn([](const Vec3&) -> Mat3 { return Eigen::Vector3d(1.0, 1.0, 2.0).asDiagonal(); }),
                "R^3");
  return {constant_field(1.0), h, c, "rikitake"};
}

Vec3 rikitake_direct(double beta, const Vec3& u) {
  return {u.y() * u.z() + beta * u.y(), u.x() * u.z() - beta * u.x(), -u.x() * u.y()};
}

SystemDef rigid_body(double i1, double i2, double i3) {
  if (!(i1 > 0.0 && i2 > 0.0 && i3 > 0.0)) {
    throw std::invalid_argument("rigid_body: moments of inertia must be positive");
  }
  if (i1 == i2 || i2 == i3 || i1 == i3) {
    throw std::invalid_argument("rigid_body: moments of inertia must be pairwise distinct");
  }
  const Vec3 inv(1.0 / i1, 1.0 / i2, 1.0 / i3);
  ScalarField h([inv](const Vec3& u) { return 0.5 * u.cwiseProduct(u).dot(inv); },
                [inv](const Vec3& u) -> Vec3 { return u.cwiseProduct(inv); },
                ScalarField::HessFn([inv](const Vec3&) -> Mat3 { return inv.asDiagonal(); }),
                "R^3");
  ScalarField c([](const Vec3& u) { return 0.5 * u.squaredNorm(); },
                [](const Vec3& u) -> Vec3 { return u; },
                ScalarField::HessFn([](const Vec3&) -> Mat3 { return Mat3::Identity(); }), "R^3");
  return {constant_field(-1.0), h, c, "rigid_body"};
}

Vec3 euler_direct(double i1, double i2, double i3, const Vec3& u) {
  return {(1.0 / i3 - 1.0 / i2) * u.y() * u.z(), (1.0 / i1 - 1.0 / i3) * u.x() * u.z(),
          (1.0 / i2 - 1.0 / i1) * u.x() * u.y()};
}

PlanarSystem harmonic2d() {
  ScalarField2 hcal{[](const Vec2& v) { return 0.5 * v.squaredNorm(); },
                    [](const Vec2& v) -> Vec2 { return v; },
                    [](const Vec2&) -> Mat2 { return Mat2::Identity(); }};
  return {ScalarField2::constant(1.0), hcal, "harmonic2d"};
}

SystemDef from_expressions(std::string_view nu, std::string_view h, std::string_view c,
                           const expr::ParamTable& params, std::string name) {
  return {expr::compile(nu, params), expr::compile(h, params), expr::compile(c, params),
          std::move(name)};
}

const std::vector<BuiltinSystem>& builtins() {
  static const std::vector<BuiltinSystem> table = {
      {"rikitake", {{"beta", 1.0}},
       [](const expr::ParamTable& p) { return rikitake(param_or(p, "beta", 1.0)); }},
      {"rigid_body", {{"i1", 1.0}, {"i2", 2.0}, {"i3", 3.0}},
       [](const expr::ParamTable& p) {
         return rigid_body(param_or(p, "i1", 1.0), param_or(p, "i2", 2.0), param_or(p, "i3", 3.0));
       }},
      {"harmonic2d", {}, [](const expr::ParamTable&) { return embed(harmonic2d()); }},
  };
  return table;
}

SystemDef make_builtin(const std::string& name, const expr::ParamTable& params) {
  for (const auto& b : builtins()) {
    if (b.name != name) continue;
    for (const auto& [key, value] : params) {
      if (b.defaults.find(key) == b.defaults.end()) {
        throw std::invalid_argument("builtin '" + name + "' has no parameter '" + key + "'");
      }
    }
    return b.factory(params);
  }
  throw std::invalid_argument("unknown builtin system '" + name + "'");
}

}  // namespace orbitstab::systems
