#pragma once

#include "orbitstab/core_fields.hpp"
#include "orbitstab/planar.hpp"

#include <optional>
#include <string>
#include <string_view>

namespace orbitstab {

enum class Mode {
  PreserveC_Stabilize,
  PreserveC_Destabilize,
  PreserveH_Stabilize,
  PreserveH_Destabilize,
  Full_Stabilize,
  Full_Destabilize_FlipAlpha,
  Full_Destabilize_FlipBeta,
};

std::string_view to_string(Mode m);
/// Throws std::invalid_argument for unknown names.
Mode parse_mode(std::string_view name);

bool uses_c_preserving_term(Mode m);
bool uses_h_preserving_term(Mode m);
bool is_stabilizing(Mode m);

/// Target fiber (h, c), positive gains and the perturbation to build.
/// `alpha` drives H towards h through the C-preserving term, `beta` drives
/// C towards c through the H-preserving term.
struct PerturbationSpec {
  SystemDef sys;
  double h = 0.0;
  double c = 0.0;
  ScalarField alpha = ScalarField::constant(1.0);
  ScalarField beta = ScalarField::constant(1.0);
  Mode mode = Mode::PreserveC_Stabilize;
};

/// Fills h = H(seed) and c = C(seed).
PerturbationSpec spec_through(SystemDef sys, const Vec3& seed, Mode mode);

/// Signed sign of the alpha and beta terms for a mode (0 when absent).
double alpha_sign(Mode m);
double beta_sign(Mode m);

/// -alpha (H - h) [grad C x (grad H x grad C)], sign flipped for
/// destabilising variants of the alpha term. Preserves C.
VectorField3 c_preserving_term(const PerturbationSpec& spec);

/// +beta (C - c) [grad H x (grad H x grad C)], sign flipped for
/// destabilising variants of the beta term. Preserves H.
VectorField3 h_preserving_term(const PerturbationSpec& spec);

/// X plus the terms selected by spec.mode. Carries an exact Jacobian when
/// every ingredient has a Hessian (gains need gradients only).
VectorField3 build_perturbed_field(const PerturbationSpec& spec);

/// Pointwise rates with L_Y (H - h) = lambda_H (H - h) and
/// L_Y (C - c) = lambda_C (C - c). A rate is zero for an integral the mode
/// preserves.
struct DecayRates {
  std::function<double(const Vec3&)> lambda_H;
  std::function<double(const Vec3&)> lambda_C;
};

DecayRates decay_rates(const PerturbationSpec& spec);

/// mu J grad Hcal -+ alpha (Hcal - h) grad Hcal.
PlanarField planar_perturbed_field(const ScalarField2& mu, const ScalarField2& hamiltonian,
                                   const ScalarField2& alpha, double h, bool stabilize);

}  // namespace orbitstab
