#pragma once

// Deterministic mini-batch training loop: per-environment batches of equal
// size, β updated with the mean-loss gradient, φ with loss + λ(epoch)·penalty
// (β receives the penalty for φ-identity models), constant learning rate,
// optional pooled-validation early stopping.

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dirmlab/objectives.hpp"

namespace dirmlab {

enum class Optimizer { sgd, adam };

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool operator==(const AdamParams&) const = default;
};

struct EarlyStopConfig {
  double validation_fraction = 0.2;
  int patience = 20;
  bool operator==(const EarlyStopConfig&) const = default;
};

struct TrainConfig {
  double learning_rate = 1e-2;
  int epochs = 100;
  int batch_size = 128;  // clamped to the smallest environment
  Optimizer optimizer = Optimizer::adam;
  AdamParams adam;
  std::uint64_t seed = 0;
  std::optional<EarlyStopConfig> early_stop;
  double l2_reg = 0.0;

  bool operator==(const TrainConfig&) const = default;
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  std::vector<double> env_loss;         // full-data loss per training environment
  std::vector<double> env_grad_sqnorm;  // squared 2-norm of each env's β-gradient
  double penalty = 0.0;                 // unweighted penalty at end of epoch
  double lambda = 0.0;
  std::optional<Eigen::VectorXd> coef;  // head weights for φ-identity models
  std::optional<double> validation_loss;
  double wall_seconds = 0.0;
};

struct TrainTrace {
  std::vector<std::string> env_ids;
  std::vector<std::string> feature_names;
  std::vector<EpochRecord> epochs;
  bool early_stopped = false;
};

struct TrainResult {
  Model model;
  TrainTrace trace;
};

// Aborts training when a loss, penalty or parameter becomes non-finite; the
// partial trace is attached for diagnosis.
struct NonFiniteLoss : Error {
  explicit NonFiniteLoss(TrainTrace partial)
      : Error("non-finite loss encountered during training"), trace(std::move(partial)) {}
  TrainTrace trace;
};

TrainResult train(const Model& init, const std::vector<EnvironmentData>& envs,
                  const ObjectiveSpec& objective, const TrainConfig& config);

// Splits a held-out slice from every environment and pools the slices into a
// single validation environment. Deterministic per seed.
std::pair<std::vector<EnvironmentData>, EnvironmentData> pooled_validation_split(
    const std::vector<EnvironmentData>& envs, double fraction, std::uint64_t seed);

// Head weights of a φ-identity model, aligned to the feature order.
Eigen::VectorXd effective_coefficients(const Model& model);

// CSV schema: epoch, env_id, loss, penalty, lambda, coef_<feature>..., grad_sqnorm
void trace_to_csv(const TrainTrace& trace, std::ostream& os);

}  // namespace dirmlab
