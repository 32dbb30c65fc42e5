#include "orbitstab/perturbation.hpp"

#include <array>
#include <stdexcept>

namespace orbitstab {

namespace {

constexpr std::array<std::pair<Mode, std::string_view>, 7> kModeNames{{
    {Mode::PreserveC_Stabilize, "PreserveC_Stabilize"},
    {Mode::PreserveC_Destabilize, "PreserveC_Destabilize"},
    {Mode::PreserveH_Stabilize, "PreserveH_Stabilize"},
    {Mode::PreserveH_Destabilize, "PreserveH_Destabilize"},
    {Mode::Full_Stabilize, "Full_Stabilize"},
    {Mode::Full_Destabilize_FlipAlpha, "Full_Destabilize_FlipAlpha"},
    {Mode::Full_Destabilize_FlipBeta, "Full_Destabilize_FlipBeta"},
}};

bool has_hessians(const SystemDef& sys) { return sys.H.has_hessian() && sys.C.has_hessian(); }

// w = grad C x (grad H x grad C) and its Jacobian.
struct TermGeometry {
  Vec3 gh, gc, w, v;
};

TermGeometry geometry(const SystemDef& sys, const Vec3& u) {
  TermGeometry g;
  g.gh = sys.H.grad(u);
  g.gc = sys.C.grad(u);
  g.w = triple_expand(g.gc, g.gh, g.gc);
  g.v = triple_expand(g.gh, g.gh, g.gc);
  return g;
}

Mat3 d_w(const TermGeometry& g, const Mat3& hh, const Mat3& hc) {
  const double cc = g.gc.squaredNorm();
  const double ch = g.gc.dot(g.gh);
  const Eigen::RowVector3d d_cc = 2.0 * g.gc.transpose() * hc;
  const Eigen::RowVector3d d_ch = g.gc.transpose() * hh + g.gh.transpose() * hc;
  return hh * cc + g.gh * d_cc - hc * ch - g.gc * d_ch;
}

Mat3 d_v(const TermGeometry& g, const Mat3& hh, const Mat3& hc) {
  const double hh2 = g.gh.squaredNorm();
  const double ch = g.gc.dot(g.gh);
  const Eigen::RowVector3d d_hh = 2.0 * g.gh.transpose() * hh;
  const Eigen::RowVector3d d_ch = g.gc.transpose() * hh + g.gh.transpose() * hc;
  return hh * ch + g.gh * d_ch - hc * hh2 - g.gc * d_hh;
}

}  // namespace

std::string_view to_string(Mode m) {
  for (const auto& [mode, name] : kModeNames) {
    if (mode == m) return name;
  }
  return "?";
}

Mode parse_mode(std::string_view name) {
  for (const auto& [mode, n] : kModeNames) {
    if (n == name) return mode;
  }
  throw std::invalid_argument("unknown perturbation mode '" + std::string(name) + "'");
}

double alpha_sign(Mode m) {
  switch (m) {
    case Mode::PreserveC_Stabilize:
    case Mode::Full_Stabilize:
    case Mode::Full_Destabilize_FlipBeta: return -1.0;
    case Mode::PreserveC_Destabilize:
    case Mode::Full_Destabilize_FlipAlpha: return 1.0;
    default: return 0.0;
  }
}

double beta_sign(Mode m) {
  switch (m) {
    case Mode::PreserveH_Stabilize:
    case Mode::Full_Stabilize:
    case Mode::Full_Destabilize_FlipAlpha: return 1.0;
    case Mode::PreserveH_Destabilize:
    case Mode::Full_Destabilize_FlipBeta: return -1.0;
    default: return 0.0;
  }
}

bool uses_c_preserving_term(Mode m) { return alpha_sign(m) != 0.0; }
bool uses_h_preserving_term(Mode m) { return beta_sign(m) != 0.0; }

bool is_stabilizing(Mode m) {
  return m == Mode::PreserveC_Stabilize || m == Mode::PreserveH_Stabilize ||
         m == Mode::Full_Stabilize;
}

PerturbationSpec spec_through(SystemDef sys, const Vec3& seed, Mode mode) {
  PerturbationSpec spec{std::move(sys)};
  spec.h = spec.sys.H(seed);
  spec.c = spec.sys.C(seed);
  spec.mode = mode;
  return spec;
}

VectorField3 c_preserving_term(const PerturbationSpec& spec) {
  const double s = alpha_sign(spec.mode);
  if (s == 0.0) {
    throw std::invalid_argument("mode " + std::string(to_string(spec.mode)) +
                                " has no C-preserving term");
  }
  const SystemDef sys = spec.sys;
  const ScalarField alpha = spec.alpha;
  const double h = spec.h;
  auto eval = [=](const Vec3& u) -> Vec3 {
    const TermGeometry g = geometry(sys, u);
    return s * alpha(u) * (sys.H(u) - h) * g.w;
  };
  std::optional<VectorField3::JacFn> jac;
  if (has_hessians(sys)) {
    jac = [=](const Vec3& u) -> Mat3 {
      const TermGeometry g = geometry(sys, u);
      const double a = alpha(u);
      const double dh = sys.H(u) - h;
      const Mat3 dw = d_w(g, sys.H.hessian(u), sys.C.hessian(u));
      return s * (dh * g.w * alpha.grad(u).transpose() + a * g.w * g.gh.transpose() + a * dh * dw);
    };
  }
  return VectorField3(eval, jac);
}

VectorField3 h_preserving_term(const PerturbationSpec& spec) {
  const double s = beta_sign(spec.mode);
  if (s == 0.0) {
    throw std::invalid_argument("mode " + std::string(to_string(spec.mode)) +
                                " has no H-preserving term");
  }
  const SystemDef sys = spec.sys;
  const ScalarField beta = spec.beta;
  const double c = spec.c;
  auto eval = [=](const Vec3& u) -> Vec3 {
    const TermGeometry g = geometry(sys, u);
    return s * beta(u) * (sys.C(u) - c) * g.v;
  };
  std::optional<VectorField3::JacFn> jac;
  if (has_hessians(sys)) {
    jac = [=](const Vec3& u) -> Mat3 {
      const TermGeometry g = geometry(sys, u);
      const double b = beta(u);
      const double dc = sys.C(u) - c;
      const Mat3 dv = d_v(g, sys.H.hessian(u), sys.C.hessian(u));
      return s * (dc * g.v * beta.grad(u).transpose() + b * g.v * g.gc.transpose() + b * dc * dv);
    };
  }
  return VectorField3(eval, jac);
}

VectorField3 build_perturbed_field(const PerturbationSpec& spec) {
  const VectorField3 x = hamiltonian_field(spec.sys);
  std::optional<VectorField3> tc, th;
  if (uses_c_preserving_term(spec.mode)) tc = c_preserving_term(spec);
  if (uses_h_preserving_term(spec.mode)) th = h_preserving_term(spec);

  auto eval = [=](const Vec3& u) -> Vec3 {
    Vec3 y = x(u);
    if (tc) y += (*tc)(u);
    if (th) y += (*th)(u);
    return y;
  };
  const bool exact = x.has_exact_jacobian() && (!tc || tc->has_exact_jacobian()) &&
                     (!th || th->has_exact_jacobian());
  std::optional<VectorField3::JacFn> jac;
  if (exact) {
    jac = [=](const Vec3& u) -> Mat3 {
      Mat3 j = x.jacobian(u);
      if (tc) j += tc->jacobian(u);
      if (th) j += th->jacobian(u);
      return j;
    };
  }
  return VectorField3(eval, jac);
}

DecayRates decay_rates(const PerturbationSpec& spec) {
  const double sa = alpha_sign(spec.mode);
  const double sb = beta_sign(spec.mode);
  const SystemDef sys = spec.sys;
  const ScalarField alpha = spec.alpha;
  const ScalarField beta = spec.beta;
  DecayRates r;
  r.lambda_H = [=](const Vec3& u) {
    if (sa == 0.0) return 0.0;
    return sa * alpha(u) * poisson_direction(sys, u).squaredNorm();
  };
  r.lambda_C = [=](const Vec3& u) {
    if (sb == 0.0) return 0.0;
    return -sb * beta(u) * poisson_direction(sys, u).squaredNorm();
  };
  return r;
}

PlanarField planar_perturbed_field(const ScalarField2& mu, const ScalarField2& hamiltonian,
                                   const ScalarField2& alpha, double h, bool stabilize) {
  const double s = stabilize ? -1.0 : 1.0;
  return [=](const Vec2& v) -> Vec2 {
    const Vec2 g = hamiltonian.grad(v);
    return mu(v) * quarter_turn(g) + s * alpha(v) * (hamiltonian(v) - h) * g;
  };
}

}  // namespace orbitstab
