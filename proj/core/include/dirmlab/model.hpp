#pragma once

// Shallow network family: 0-2 hidden affine layers with ELU, a linear head
// and an identity or logistic link. Gradients in all parameters are exact;
// the mixed second-order contractions needed by gradient penalties are
// closed-form layer rules (no general tape).

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "dirmlab/errors.hpp"
#include "dirmlab/scm.hpp"

namespace dirmlab {

enum class Link { identity, logistic };

struct AffineLayer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;
};

struct Model {
  int input_dim = 0;
  std::vector<AffineLayer> hidden;  // ELU after each layer
  Eigen::VectorXd head_w;
  double head_b = 0.0;
  Link link = Link::identity;

  int head_input_dim() const {
    return hidden.empty() ? input_dim : static_cast<int>(hidden.back().w.rows());
  }
  bool phi_empty() const { return hidden.empty(); }
};

// Xavier-uniform initialization, deterministic per seed; biases start at 0.
Model make_model(int input_dim, const std::vector<int>& hidden_widths, Link link,
                 std::uint64_t seed);

// Throws DimensionMismatch / Precondition if layer shapes do not chain from
// input_dim to the head or any parameter is non-finite.
void validate_model(const Model& model);

// Flat parameter layout: φ-block first (W then b per hidden layer, weights
// row-major), then the β-block (head weights, head bias last).
struct ParamLayout {
  int input_dim = 0;
  std::vector<int> hidden_widths;
  Link link = Link::identity;
  Eigen::Index phi_size = 0;
  Eigen::Index beta_size = 0;  // head weights + head bias
  Eigen::Index total() const { return phi_size + beta_size; }
};

ParamLayout layout_of(const Model& model);
Eigen::VectorXd to_params(const Model& model);
Model from_params(const ParamLayout& layout, const Eigen::VectorXd& params);

// Forward evaluation; identity link returns raw scores, logistic link returns
// probabilities in (0,1).
Eigen::VectorXd forward(const Model& model, const Eigen::MatrixXd& x);

// Mean squared error (identity) or mean binary cross-entropy (logistic).
double loss(const Model& model, const EnvironmentData& env);

// Exact gradient of the environment loss with respect to the β-block only,
// bias coordinate last.
Eigen::VectorXd grad_beta_env(const Model& model, const EnvironmentData& env);

struct LossGrads {
  double value = 0.0;
  Eigen::VectorXd grad_beta;
  Eigen::VectorXd grad_phi;
};
LossGrads loss_with_grads(const Model& model, const EnvironmentData& env);

// --- second-order contractions -------------------------------------------

// Gradient with respect to the φ-block of the scalar <grad_beta_env, u>.
// This is the mixed-derivative contraction (d²L/dφdβ)ᵀ u.
Eigen::VectorXd phi_grad_of_beta_gradient(const Model& model, const EnvironmentData& env,
                                          const Eigen::VectorXd& u);

// β-block Hessian of the environment loss applied to u.
Eigen::VectorXd beta_hessian_vec(const Model& model, const EnvironmentData& env,
                                 const Eigen::VectorXd& u);

// Derivative at scale w = 1 of the environment loss of the rescaled predictor
// (the scalar the IRMv1 surrogate squares), plus its block gradients.
double scale_derivative(const Model& model, const EnvironmentData& env);
Eigen::VectorXd grad_beta_of_scale_derivative(const Model& model, const EnvironmentData& env);
Eigen::VectorXd grad_phi_of_scale_derivative(const Model& model, const EnvironmentData& env);

// Model checkpoints: versioned JSON document with the layout descriptor and
// the flat parameter array (decimal, round-trip exact).
void save_model(const std::string& path, const Model& model);
Model load_model(const std::string& path);

}  // namespace dirmlab
