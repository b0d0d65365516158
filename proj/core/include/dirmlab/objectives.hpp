#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "dirmlab/penalty.hpp"

namespace dirmlab {

enum class ObjectiveKind { erm, group_dro, irm, rex, dirm };

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::erm;
  double lambda_final = 0.0;
  int warmup_epochs = 0;
  DirmNormMode dirm_norm_mode = DirmNormMode::point;
  DirmPenaltyForm dirm_penalty_form = DirmPenaltyForm::grad_variance;
  double dro_step = 0.01;
  bool head_bias_in_penalty = true;
  // false: hard step 0 -> lambda_final at warmup_epochs; true: linear ramp
  // reaching lambda_final at warmup_epochs.
  bool linear_ramp = false;

  bool operator==(const ObjectiveSpec&) const = default;

  bool has_penalty() const {
    return kind == ObjectiveKind::irm || kind == ObjectiveKind::rex || kind == ObjectiveKind::dirm;
  }
  double lambda_at(int epoch) const;
  PenaltyDesc penalty_desc() const;
  void validate() const;
};

// Population variance over environments of the squared 2-norm of the
// per-environment β-gradients, evaluated at the current head only.
double dirm_penalty(const Model& model, const std::vector<EnvironmentData>& envs);

// Mean over the five whole-vector scalings of β of the point-mode penalty.
double dirm_penalty_grid(const Model& model, const std::vector<EnvironmentData>& envs);

// IRMv1 surrogate: sum over environments of the squared derivative, at scale
// w = 1, of the environment loss of the score-rescaled predictor.
double irm_penalty(const Model& model, const std::vector<EnvironmentData>& envs);

// Population variance of the per-environment losses.
double rex_penalty(const Model& model, const std::vector<EnvironmentData>& envs);

// Exponentiated-gradient update of the group weights: w_e ∝ w_e exp(step L_e).
Eigen::VectorXd dro_reweight(const Eigen::VectorXd& weights, const Eigen::VectorXd& losses,
                             double step);

struct GradReport {
  double value = 0.0;  // mean env loss + lambda * penalty (weighted loss for GroupDRO)
  double mean_loss = 0.0;
  double penalty = 0.0;  // unweighted penalty value (0 when inactive)
  double lambda = 0.0;
  Eigen::VectorXd grad_beta;
  Eigen::VectorXd grad_phi;
  std::vector<double> env_losses;
};

// Assembles the training objective per the split update rule: β sees the mean
// loss only and φ sees loss + λ·penalty. Models without φ parameters route
// the penalty gradient to β instead (otherwise penalized objectives would
// degenerate to ERM for linear models). GroupDRO weights, when provided, must
// lie on the simplex; nullptr means uniform.
GradReport total_objective(const Model& model, const std::vector<EnvironmentData>& envs,
                           const ObjectiveSpec& spec, int epoch,
                           const Eigen::VectorXd* dro_weights = nullptr);

// Exact supremum of Σ α_e L_e over Δ_η = {α_e >= -η, Σ α_e = 1}:
// (1 + nη) max_e L_e − η Σ_e L_e.
double affine_sup(const Eigen::VectorXd& losses, double eta);

// Same supremum by explicit enumeration of the vertices of Δ_η (oracle).
double affine_sup_vertex_oracle(const Eigen::VectorXd& losses, double eta);

// Empirical mean over the environment of ∇_β f(z;β)(y − f(z;β)); identity
// link only (equals −½ of the MSE β-gradient).
Eigen::VectorXd moment_residual(const Model& model, const EnvironmentData& env);

}  // namespace dirmlab
