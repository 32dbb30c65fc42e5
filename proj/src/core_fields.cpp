#include "orbitstab/core_fields.hpp"

#include <algorithm>
#include <cmath>

namespace orbitstab {

bool is_finite(const Vec3& v) { return v.allFinite(); }
bool is_finite(const Mat3& m) { return m.allFinite(); }

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y() * b.z() - a.z() * b.y(), a.z() * b.x() - a.x() * b.z(),
          a.x() * b.y() - a.y() * b.x()};
}

Vec3 triple_expand(const Vec3& a, const Vec3& b, const Vec3& c) {
  return b * a.dot(c) - c * a.dot(b);
}

Mat3 skew(const Vec3& a) {
  Mat3 s;
  s << 0.0, -a.z(), a.y(),  //
      a.z(), 0.0, -a.x(),   //
      -a.y(), a.x(), 0.0;
  return s;
}

ScalarField::ScalarField(EvalFn eval, GradFn grad, std::optional<HessFn> hessian,
                         std::string domain_hint)
    : eval_(std::move(eval)),
      grad_(std::move(grad)),
      hessian_(std::move(hessian)),
      domain_hint_(std::move(domain_hint)) {}

ScalarField ScalarField::constant(double value) {
  return ScalarField([value](const Vec3&) { return value; },
                     [](const Vec3&) -> Vec3 { return Vec3::Zero(); },
                     [](const Vec3&) -> Mat3 { return Mat3::Zero(); });
}

Mat3 ScalarField::hessian(const Vec3& u) const {
  if (!hessian_) throw std::logic_error("scalar field has no exact Hessian");
  return (*hessian_)(u);
}

ScalarField ScalarField::scaled(double factor) const {
  auto e = eval_;
  auto g = grad_;
  std::optional<HessFn> h;
  if (hessian_) {
    h = [hf = *hessian_, factor](const Vec3& u) -> Mat3 { return factor * hf(u); };
  }
  return ScalarField([e, factor](const Vec3& u) { return factor * e(u); },
                     [g, factor](const Vec3& u) -> Vec3 { return factor * g(u); }, h,
                     domain_hint_);
}

VectorField3::VectorField3(EvalFn eval, std::optional<JacFn> jacobian)
    : eval_(std::move(eval)), jacobian_(std::move(jacobian)) {}

Mat3 VectorField3::jacobian(const Vec3& u) const {
  if (jacobian_) return (*jacobian_)(u);
  return fd_jacobian(u);
}

Mat3 VectorField3::fd_jacobian(const Vec3& u) const {
  const double step = std::max(1e-6, 1e-8 * u.norm());
  Mat3 j;
  for (int k = 0; k < 3; ++k) {
    Vec3 up = u, um = u;
    up[k] += step;
    um[k] -= step;
    j.col(k) = (eval_(up) - eval_(um)) / (2.0 * step);
  }
  return j;
}

VectorField3 VectorField3::zero() {
  return VectorField3([](const Vec3&) -> Vec3 { return Vec3::Zero(); },
                      [](const Vec3&) -> Mat3 { return Mat3::Zero(); });
}

VectorField3 VectorField3::linear(const Mat3& a) {
  return VectorField3([a](const Vec3& u) -> Vec3 { return a * u; },
                      [a](const Vec3&) -> Mat3 { return a; });
}

Vec3 poisson_direction(const SystemDef& sys, const Vec3& u) {
  return cross(sys.H.grad(u), sys.C.grad(u));
}

VectorField3 hamiltonian_field(const SystemDef& sys) {
  auto eval = [sys](const Vec3& u) -> Vec3 {
    if (!is_finite(u)) throw DomainError("hamiltonian field: non-finite state");
    Vec3 x = sys.nu(u) * cross(sys.H.grad(u), sys.C.grad(u));
    if (!is_finite(x)) throw DomainError("hamiltonian field: non-finite value in " + sys.name);
    return x;
  };
  std::optional<VectorField3::JacFn> jac;
  if (sys.nu.has_hessian() && sys.H.has_hessian() && sys.C.has_hessian()) {
    // D(nu gH x gC) = (gH x gC) grad(nu)^T + nu (-[gC]x Hess H + [gH]x Hess C)
    jac = [sys](const Vec3& u) -> Mat3 {
      const Vec3 gh = sys.H.grad(u);
      const Vec3 gc = sys.C.grad(u);
      const Vec3 dir = cross(gh, gc);
      return dir * sys.nu.grad(u).transpose() +
             sys.nu(u) * (skew(gh) * sys.C.hessian(u) - skew(gc) * sys.H.hessian(u));
    };
  }
  return VectorField3(std::move(eval), std::move(jac));
}

double independence_det(const SystemDef& sys, const Vec3& u) {
  const Vec3 a = sys.H.grad(u);
  const Vec3 b = sys.C.grad(u);
  const Vec3 c = sys.nu(u) * cross(a, b);
  // columns a | b | c, expanded along the first column
  return a.x() * (b.y() * c.z() - c.y() * b.z()) - a.y() * (b.x() * c.z() - c.x() * b.z()) +
         a.z() * (b.x() * c.y() - c.x() * b.y());
}

double grad_fd_check(const ScalarField& f, const Vec3& u, double step) {
  const Vec3 g = f.grad(u);
  double worst = 0.0;
  for (int k = 0; k < 3; ++k) {
    Vec3 up = u, um = u;
    up[k] += step;
    um[k] -= step;
    const double fd = (f(up) - f(um)) / (2.0 * step);
    worst = std::max(worst, std::abs(fd - g[k]));
  }
  return worst / std::max(1.0, g.cwiseAbs().maxCoeff());
}

double jacobian_fd_check(const VectorField3& f, const Vec3& u, double step) {
  const Mat3 j = f.jacobian(u);
  double worst = 0.0;
  for (int k = 0; k < 3; ++k) {
    Vec3 up = u, um = u;
    up[k] += step;
    um[k] -= step;
    const Vec3 fd = (f(up) - f(um)) / (2.0 * step);
    worst = std::max(worst, (fd - j.col(k)).cwiseAbs().maxCoeff());
  }
  return worst / std::max(1.0, j.cwiseAbs().maxCoeff());
}

}  // namespace orbitstab
