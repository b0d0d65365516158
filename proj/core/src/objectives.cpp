#include "dirmlab/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace dirmlab {

double ObjectiveSpec::lambda_at(int epoch) const {
  if (!has_penalty() || lambda_final == 0.0) return 0.0;
  if (linear_ramp) {
    if (warmup_epochs <= 0) return lambda_final;
    const double frac = std::min(1.0, static_cast<double>(epoch) / warmup_epochs);
    return lambda_final * frac;
  }
  return epoch < warmup_epochs ? 0.0 : lambda_final;
}

PenaltyDesc ObjectiveSpec::penalty_desc() const {
  PenaltyDesc d;
  switch (kind) {
    case ObjectiveKind::irm: d.kind = PenaltyKind::irm; break;
    case ObjectiveKind::rex: d.kind = PenaltyKind::rex; break;
    default: d.kind = PenaltyKind::dirm; break;
  }
  d.mode = dirm_norm_mode;
  d.form = dirm_penalty_form;
  d.head_bias_in_penalty = head_bias_in_penalty;
  return d;
}

void ObjectiveSpec::validate() const {
  if (!(lambda_final >= 0.0)) throw ValidationError("objective.lambda", "must be >= 0");
  if (warmup_epochs < 0) throw ValidationError("objective.warmup_epochs", "must be >= 0");
  if (kind == ObjectiveKind::group_dro && !(dro_step > 0.0))
    throw ValidationError("objective.dro_step", "must be > 0");
}

double dirm_penalty(const Model& model, const std::vector<EnvironmentData>& envs) {
  PenaltyDesc d;
  d.kind = PenaltyKind::dirm;
  d.mode = DirmNormMode::point;
  d.form = DirmPenaltyForm::sqnorm_variance;
  return penalty_value(model, envs, d);
}

double dirm_penalty_grid(const Model& model, const std::vector<EnvironmentData>& envs) {
  PenaltyDesc d;
  d.kind = PenaltyKind::dirm;
  d.mode = DirmNormMode::scaled_grid;
  d.form = DirmPenaltyForm::sqnorm_variance;
  return penalty_value(model, envs, d);
}

double irm_penalty(const Model& model, const std::vector<EnvironmentData>& envs) {
  PenaltyDesc d;
  d.kind = PenaltyKind::irm;
  return penalty_value(model, envs, d);
}

double rex_penalty(const Model& model, const std::vector<EnvironmentData>& envs) {
  PenaltyDesc d;
  d.kind = PenaltyKind::rex;
  return penalty_value(model, envs, d);
}

Eigen::VectorXd dro_reweight(const Eigen::VectorXd& weights, const Eigen::VectorXd& losses,
                             double step) {
  if (weights.size() != losses.size()) throw DimensionMismatch("weights/losses size mismatch");
  if (weights.size() == 0) throw Precondition("empty weight vector");
  if (!(step > 0.0)) throw Precondition("dro step must be > 0");
  if (weights.minCoeff() < 0.0 || std::abs(weights.sum() - 1.0) > 1e-9)
    throw Precondition("weights must lie on the simplex");
  const double m = losses.maxCoeff();
  Eigen::VectorXd out = weights.array() * ((losses.array() - m) * step).exp();
  const double z = out.sum();
  if (!(z > 0.0)) throw Precondition("degenerate weight update");
  return out / z;
}

GradReport total_objective(const Model& model, const std::vector<EnvironmentData>& envs,
                           const ObjectiveSpec& spec, int epoch,
                           const Eigen::VectorXd* dro_weights) {
  if (envs.empty()) throw Precondition("objective needs at least one environment");
  spec.validate();

  const double e = static_cast<double>(envs.size());
  GradReport report;
  report.lambda = spec.lambda_at(epoch);
  report.env_losses.reserve(envs.size());

  Eigen::VectorXd weights;
  if (spec.kind == ObjectiveKind::group_dro) {
    if (dro_weights) {
      if (dro_weights->size() != static_cast<Eigen::Index>(envs.size()))
        throw DimensionMismatch("GroupDRO weight vector size mismatch");
      weights = *dro_weights;
    } else {
      weights = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(envs.size()), 1.0 / e);
    }
  }

  const ParamLayout layout = layout_of(model);
  report.grad_beta = Eigen::VectorXd::Zero(layout.beta_size);
  report.grad_phi = Eigen::VectorXd::Zero(layout.phi_size);

  for (std::size_t i = 0; i < envs.size(); ++i) {
    const LossGrads lg = loss_with_grads(model, envs[i]);
    report.env_losses.push_back(lg.value);
    report.mean_loss += lg.value / e;
    const double w = spec.kind == ObjectiveKind::group_dro
                         ? weights[static_cast<Eigen::Index>(i)]
                         : 1.0 / e;
    report.grad_beta += w * lg.grad_beta;
    report.grad_phi += w * lg.grad_phi;
  }

  if (spec.kind == ObjectiveKind::group_dro) {
    double weighted = 0.0;
    for (std::size_t i = 0; i < envs.size(); ++i)
      weighted += weights[static_cast<Eigen::Index>(i)] * report.env_losses[i];
    report.value = weighted;
    return report;
  }

  report.value = report.mean_loss;
  if (spec.has_penalty() && report.lambda > 0.0) {
    const PenaltyDesc desc = spec.penalty_desc();
    report.penalty = penalty_value(model, envs, desc);
    report.value += report.lambda * report.penalty;
    if (model.phi_empty()) {
      report.grad_beta += report.lambda * penalty_grad_beta(model, envs, desc);
    } else {
      report.grad_phi += report.lambda * penalty_grad_phi(model, envs, desc);
    }
  }
  return report;
}

double affine_sup(const Eigen::VectorXd& losses, double eta) {
  if (losses.size() < 1) throw Precondition("affine_sup needs at least one loss");
  if (!(eta >= 0.0)) throw Precondition("eta must be >= 0");
  const double n = static_cast<double>(losses.size());
  return (1.0 + n * eta) * losses.maxCoeff() - eta * losses.sum();
}

double affine_sup_vertex_oracle(const Eigen::VectorXd& losses, double eta) {
  if (losses.size() < 1) throw Precondition("affine_sup needs at least one loss");
  if (!(eta >= 0.0)) throw Precondition("eta must be >= 0");
  const Eigen::Index n = losses.size();
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::VectorXd alpha = Eigen::VectorXd::Constant(n, -eta);
    alpha[j] = 1.0 + (static_cast<double>(n) - 1.0) * eta;
    best = std::max(best, alpha.dot(losses));
  }
  return best;
}

Eigen::VectorXd moment_residual(const Model& model, const EnvironmentData& env) {
  if (model.link != Link::identity)
    throw Unsupported("moment_residual requires the identity link");
  // equals -1/2 of the MSE β-gradient
  return -0.5 * grad_beta_env(model, env);
}

}  // namespace dirmlab
