#include "orbitstab/planar.hpp"

namespace orbitstab {

ScalarField2 ScalarField2::constant(double value) {
  return {[value](const Vec2&) { return value; }, [](const Vec2&) -> Vec2 { return Vec2::Zero(); },
          [](const Vec2&) -> Mat2 { return Mat2::Zero(); }};
}

PlanarField planar_hamiltonian_field(const PlanarSystem& sys) {
  return [sys](const Vec2& v) -> Vec2 { return sys.mu(v) * quarter_turn(sys.hamiltonian.grad(v)); };
}

ScalarField embed(const ScalarField2& f) {
  auto eval = [f](const Vec3& u) { return f(u.head<2>()); };
  auto grad = [f](const Vec3& u) -> Vec3 {
    const Vec2 g = f.grad(u.head<2>());
    return {g.x(), g.y(), 0.0};
  };
  auto hess = [f](const Vec3& u) -> Mat3 {
    Mat3 h = Mat3::Zero();
    h.topLeftCorner<2, 2>() = f.hessian(u.head<2>());
    return h;
  };
  return ScalarField(eval, grad, ScalarField::HessFn(hess), "planar x (-eps, eps)");
}

SystemDef embed(const PlanarSystem& sys) {
  ScalarField c([](const Vec3& u) { return u.z(); }, [](const Vec3&) -> Vec3 { return Vec3::UnitZ(); },
                ScalarField::HessFn([](const Vec3&) -> Mat3 { return Mat3::Zero(); }));
  return {embed(sys.mu), embed(sys.hamiltonian), c, sys.name};
}

VectorField3 lift(PlanarField f) {
  return VectorField3([f = std::move(f)](const Vec3& u) -> Vec3 {
    const Vec2 w = f(u.head<2>());
    return {w.x(), w.y(), 0.0};
  });
}

}  // namespace orbitstab
