#include "dirmlab/penalty.hpp"

#include <cmath>

namespace dirmlab {

namespace {

Model with_scaled_head(const Model& model, double c) {
  Model scaled = model;
  scaled.head_w *= c;
  scaled.head_b *= c;
  return scaled;
}

Eigen::VectorXd masked(const Eigen::VectorXd& g, bool keep_bias) {
  if (keep_bias) return g;
  Eigen::VectorXd m = g;
  m[m.size() - 1] = 0.0;
  return m;
}

std::vector<Eigen::VectorXd> env_beta_grads(const Model& model,
                                            const std::vector<EnvironmentData>& envs) {
  std::vector<Eigen::VectorXd> gs;
  gs.reserve(envs.size());
  for (const auto& env : envs) gs.push_back(grad_beta_env(model, env));
  return gs;
}

double dirm_point_value(const Model& model, const std::vector<EnvironmentData>& envs,
                        const PenaltyDesc& desc) {
  const auto gs = env_beta_grads(model, envs);
  const double e = static_cast<double>(gs.size());
  if (desc.form == DirmPenaltyForm::sqnorm_variance) {
    double mean = 0.0;
    std::vector<double> s(gs.size());
    for (std::size_t i = 0; i < gs.size(); ++i) {
      s[i] = masked(gs[i], desc.head_bias_in_penalty).squaredNorm();
      mean += s[i];
    }
    mean /= e;
    double var = 0.0;
    for (double v : s) var += (v - mean) * (v - mean);
    return var / e;
  }
  Eigen::VectorXd gbar = Eigen::VectorXd::Zero(gs[0].size());
  for (const auto& g : gs) gbar += masked(g, desc.head_bias_in_penalty);
  gbar /= e;
  double total = 0.0;
  for (const auto& g : gs)
    total += (masked(g, desc.head_bias_in_penalty) - gbar).squaredNorm();
  return total / e;
}

// dP/dg_e for the point penalty, as a function of all environment gradients.
std::vector<Eigen::VectorXd> dirm_point_cotangents(const std::vector<Eigen::VectorXd>& gs,
                                                   const PenaltyDesc& desc) {
  const double e = static_cast<double>(gs.size());
  std::vector<Eigen::VectorXd> us(gs.size());
  if (desc.form == DirmPenaltyForm::sqnorm_variance) {
    std::vector<double> s(gs.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < gs.size(); ++i) {
      s[i] = masked(gs[i], desc.head_bias_in_penalty).squaredNorm();
      mean += s[i];
    }
    mean /= e;
    for (std::size_t i = 0; i < gs.size(); ++i)
      us[i] = (4.0 / e) * (s[i] - mean) * masked(gs[i], desc.head_bias_in_penalty);
  } else {
    Eigen::VectorXd gbar = Eigen::VectorXd::Zero(gs[0].size());
    for (const auto& g : gs) gbar += masked(g, desc.head_bias_in_penalty);
    gbar /= e;
    for (std::size_t i = 0; i < gs.size(); ++i)
      us[i] = (2.0 / e) * (masked(gs[i], desc.head_bias_in_penalty) - gbar);
  }
  return us;
}

void require_envs(const std::vector<EnvironmentData>& envs, const PenaltyDesc& desc,
                  bool for_gradient) {
  if (envs.empty()) throw Precondition("penalty needs at least one environment");
  if (for_gradient && desc.kind != PenaltyKind::irm && envs.size() < 2)
    throw Precondition("variance penalties need at least 2 environments");
}

double rex_value(const Model& model, const std::vector<EnvironmentData>& envs) {
  const double e = static_cast<double>(envs.size());
  std::vector<double> losses;
  losses.reserve(envs.size());
  double mean = 0.0;
  for (const auto& env : envs) {
    losses.push_back(loss(model, env));
    mean += losses.back();
  }
  mean /= e;
  double var = 0.0;
  for (double l : losses) var += (l - mean) * (l - mean);
  return var / e;
}

double irm_value(const Model& model, const std::vector<EnvironmentData>& envs) {
  double total = 0.0;
  for (const auto& env : envs) {
    const double d = scale_derivative(model, env);
    total += d * d;
  }
  return total;
}

}  // namespace

double penalty_value(const Model& model, const std::vector<EnvironmentData>& envs,
                     const PenaltyDesc& desc) {
  require_envs(envs, desc, false);
  switch (desc.kind) {
    case PenaltyKind::rex:
      return rex_value(model, envs);
    case PenaltyKind::irm:
      return irm_value(model, envs);
    case PenaltyKind::dirm:
      break;
  }
  if (desc.mode == DirmNormMode::point) return dirm_point_value(model, envs, desc);
  double total = 0.0;
  for (double c : kGridScales)
    total += dirm_point_value(with_scaled_head(model, c), envs, desc);
  return total / 5.0;
}

Eigen::VectorXd penalty_grad_phi(const Model& model, const std::vector<EnvironmentData>& envs,
                                 const PenaltyDesc& desc) {
  require_envs(envs, desc, true);
  const ParamLayout layout = layout_of(model);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(layout.phi_size);
  if (model.phi_empty()) return grad;

  if (desc.kind == PenaltyKind::rex) {
    const double e = static_cast<double>(envs.size());
    std::vector<LossGrads> lg;
    lg.reserve(envs.size());
    double mean = 0.0;
    for (const auto& env : envs) {
      lg.push_back(loss_with_grads(model, env));
      mean += lg.back().value;
    }
    mean /= e;
    for (const auto& g : lg) grad += (2.0 / e) * (g.value - mean) * g.grad_phi;
    return grad;
  }
  if (desc.kind == PenaltyKind::irm) {
    for (const auto& env : envs) {
      const double d = scale_derivative(model, env);
      grad += 2.0 * d * grad_phi_of_scale_derivative(model, env);
    }
    return grad;
  }

  const auto accumulate_point = [&](const Model& m, double weight) {
    const auto gs = env_beta_grads(m, envs);
    const auto us = dirm_point_cotangents(gs, desc);
    for (std::size_t i = 0; i < envs.size(); ++i)
      grad += weight * phi_grad_of_beta_gradient(m, envs[i], us[i]);
  };
  if (desc.mode == DirmNormMode::point) {
    accumulate_point(model, 1.0);
  } else {
    for (double c : kGridScales) accumulate_point(with_scaled_head(model, c), 1.0 / 5.0);
  }
  return grad;
}

Eigen::VectorXd penalty_grad_beta(const Model& model, const std::vector<EnvironmentData>& envs,
                                  const PenaltyDesc& desc) {
  require_envs(envs, desc, true);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.head_input_dim() + 1);

  if (desc.kind == PenaltyKind::rex) {
    const double e = static_cast<double>(envs.size());
    std::vector<double> losses;
    std::vector<Eigen::VectorXd> gs;
    double mean = 0.0;
    for (const auto& env : envs) {
      losses.push_back(loss(model, env));
      gs.push_back(grad_beta_env(model, env));
      mean += losses.back();
    }
    mean /= e;
    for (std::size_t i = 0; i < envs.size(); ++i)
      grad += (2.0 / e) * (losses[i] - mean) * gs[i];
    return grad;
  }
  if (desc.kind == PenaltyKind::irm) {
    for (const auto& env : envs) {
      const double d = scale_derivative(model, env);
      grad += 2.0 * d * grad_beta_of_scale_derivative(model, env);
    }
    return grad;
  }

  const auto accumulate_point = [&](const Model& m, double weight) {
    const auto gs = env_beta_grads(m, envs);
    const auto us = dirm_point_cotangents(gs, desc);
    for (std::size_t i = 0; i < envs.size(); ++i)
      grad += weight * beta_hessian_vec(m, envs[i], us[i]);
  };
  if (desc.mode == DirmNormMode::point) {
    accumulate_point(model, 1.0);
  } else {
    // chain rule through the head scaling: d/dβ P(cβ) = c (dP)(cβ)
    for (double c : kGridScales) accumulate_point(with_scaled_head(model, c), c / 5.0);
  }
  return grad;
}

namespace {

double max_rel_err(const Eigen::VectorXd& analytic, const Eigen::VectorXd& fd) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double err = std::abs(analytic[i] - fd[i]) / (std::abs(analytic[i]) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

double fd_check(const Model& model, const std::vector<EnvironmentData>& envs, FdWhich which,
                double step, const PenaltyDesc& desc) {
  if (!(step > 0.0)) throw Precondition("finite-difference step must be > 0");
  if (envs.empty()) throw Precondition("fd_check needs at least one environment");

  if (which == FdWhich::beta) {
    double worst = 0.0;
    for (const auto& env : envs) {
      const Eigen::VectorXd analytic = grad_beta_env(model, env);
      Eigen::VectorXd fd(analytic.size());
      Model m = model;
      const int d = model.head_input_dim();
      for (int i = 0; i <= d; ++i) {
        const auto nudge = [&](double delta) {
          if (i < d)
            m.head_w[i] = model.head_w[i] + delta;
          else
            m.head_b = model.head_b + delta;
        };
        nudge(step);
        const double hi = loss(m, env);
        nudge(-step);
        const double lo = loss(m, env);
        nudge(0.0);
        fd[i] = (hi - lo) / (2.0 * step);
      }
      worst = std::max(worst, max_rel_err(analytic, fd));
    }
    return worst;
  }

  const Eigen::VectorXd analytic = penalty_grad_phi(model, envs, desc);
  if (analytic.size() == 0) return 0.0;
  const ParamLayout layout = layout_of(model);
  const Eigen::VectorXd base = to_params(model);
  Eigen::VectorXd fd(analytic.size());
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    Eigen::VectorXd p = base;
    p[i] = base[i] + step;
    const double hi = penalty_value(from_params(layout, p), envs, desc);
    p[i] = base[i] - step;
    const double lo = penalty_value(from_params(layout, p), envs, desc);
    fd[i] = (hi - lo) / (2.0 * step);
  }
  return max_rel_err(analytic, fd);
}

double fd_check_penalty_beta(const Model& model, const std::vector<EnvironmentData>& envs,
                             double step, const PenaltyDesc& desc) {
  if (!(step > 0.0)) throw Precondition("finite-difference step must be > 0");
  const Eigen::VectorXd analytic = penalty_grad_beta(model, envs, desc);
  const ParamLayout layout = layout_of(model);
  const Eigen::VectorXd base = to_params(model);
  Eigen::VectorXd fd(analytic.size());
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    Eigen::VectorXd p = base;
    const Eigen::Index j = layout.phi_size + i;
    p[j] = base[j] + step;
    const double hi = penalty_value(from_params(layout, p), envs, desc);
    p[j] = base[j] - step;
    const double lo = penalty_value(from_params(layout, p), envs, desc);
    fd[i] = (hi - lo) / (2.0 * step);
  }
  return max_rel_err(analytic, fd);
}

}  // namespace dirmlab
