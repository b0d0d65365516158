#pragma once

// Gradient penalties over multi-environment data and the finite-difference
// checker that validates their exact gradients.

#include <Eigen/Dense>
#include <vector>

#include "dirmlab/model.hpp"

namespace dirmlab {

enum class PenaltyKind { dirm, irm, rex };
enum class DirmNormMode { point, scaled_grid };
enum class DirmPenaltyForm { grad_variance, sqnorm_variance };

struct PenaltyDesc {
  PenaltyKind kind = PenaltyKind::dirm;
  DirmNormMode mode = DirmNormMode::point;
  DirmPenaltyForm form = DirmPenaltyForm::grad_variance;
  bool head_bias_in_penalty = true;
};

// Scales used by the scaled-grid approximation: the whole β vector is scaled
// by each value and the point penalty averaged over the five evaluations.
inline constexpr double kGridScales[5] = {0.25, 0.5, 1.0, 2.0, 4.0};

double penalty_value(const Model& model, const std::vector<EnvironmentData>& envs,
                     const PenaltyDesc& desc);

// Exact gradient of the penalty with respect to the φ-block (requires mixed
// second derivatives d²L/dφdβ). φ-identity models return an empty gradient.
// Variance penalties require >= 2 environments.
Eigen::VectorXd penalty_grad_phi(const Model& model, const std::vector<EnvironmentData>& envs,
                                 const PenaltyDesc& desc);

// Exact gradient of the penalty with respect to the β-block (requires the
// per-environment β-Hessians). Used when the model has no φ parameters.
Eigen::VectorXd penalty_grad_beta(const Model& model, const std::vector<EnvironmentData>& envs,
                                  const PenaltyDesc& desc);

enum class FdWhich { beta, phi_penalty };

// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-12).
// which == beta checks grad_beta_env against the loss; which == phi_penalty
// checks penalty_grad_phi against penalty_value.
double fd_check(const Model& model, const std::vector<EnvironmentData>& envs, FdWhich which,
                double step, const PenaltyDesc& desc = {});

// Same metric for the β-block penalty gradient (test support).
double fd_check_penalty_beta(const Model& model, const std::vector<EnvironmentData>& envs,
                             double step, const PenaltyDesc& desc = {});

}  // namespace dirmlab
