#include "dirmlab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "dirmlab/csv.hpp"
#include "dirmlab/rng.hpp"

namespace dirmlab {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("train.batch_size", "must be >= 1");
  if (epochs < 1) throw ValidationError("train.epochs", "must be >= 1");
  if (learning_rate < 0.0) throw ValidationError("train.learning_rate", "must be >= 0");
  if (l2_reg < 0.0) throw ValidationError("train.l2_reg", "must be >= 0");
  if (early_stop) {
    if (!(early_stop->validation_fraction >= 0.0 && early_stop->validation_fraction < 1.0))
      throw ValidationError("train.early_stop.validation_fraction", "must be in [0,1)");
    if (early_stop->patience < 1)
      throw ValidationError("train.early_stop.patience", "must be >= 1");
  }
}

std::pair<std::vector<EnvironmentData>, EnvironmentData> pooled_validation_split(
    const std::vector<EnvironmentData>& envs, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw Precondition("validation fraction must be in (0,1)");
  if (envs.empty()) throw Precondition("no environments to split");

  std::vector<EnvironmentData> train;
  Eigen::Index val_rows = 0;
  std::vector<std::vector<std::size_t>> val_idx(envs.size());
  std::vector<std::vector<std::size_t>> train_idx(envs.size());

  for (std::size_t e = 0; e < envs.size(); ++e) {
    const Eigen::Index n = envs[e].y.size();
    const auto k = static_cast<Eigen::Index>(std::floor(static_cast<double>(n) * fraction));
    if (n == 0 || k >= n) throw EmptySplit("environment " + envs[e].env_id + " would lose all rows");
    SplitMix64 gen(SplitMix64::mix(seed, 0x59117ull + e));
    std::vector<std::size_t> perm = shuffled_indices(static_cast<std::size_t>(n), gen);
    val_idx[e].assign(perm.begin(), perm.begin() + k);
    train_idx[e].assign(perm.begin() + k, perm.end());
    std::sort(val_idx[e].begin(), val_idx[e].end());
    std::sort(train_idx[e].begin(), train_idx[e].end());
    val_rows += k;
  }
  if (val_rows == 0) throw EmptySplit("validation set would be empty");

  EnvironmentData val;
  val.env_id = "validation";
  val.feature_names = envs[0].feature_names;
  val.x.resize(val_rows, envs[0].x.cols());
  val.y.resize(val_rows);
  Eigen::Index row = 0;
  for (std::size_t e = 0; e < envs.size(); ++e) {
    EnvironmentData t;
    t.env_id = envs[e].env_id;
    t.feature_names = envs[e].feature_names;
    t.x.resize(static_cast<Eigen::Index>(train_idx[e].size()), envs[e].x.cols());
    t.y.resize(static_cast<Eigen::Index>(train_idx[e].size()));
    for (std::size_t i = 0; i < train_idx[e].size(); ++i) {
      t.x.row(static_cast<Eigen::Index>(i)) = envs[e].x.row(static_cast<Eigen::Index>(train_idx[e][i]));
      t.y[static_cast<Eigen::Index>(i)] = envs[e].y[static_cast<Eigen::Index>(train_idx[e][i])];
    }
    train.push_back(std::move(t));
    for (std::size_t i = 0; i < val_idx[e].size(); ++i) {
      val.x.row(row) = envs[e].x.row(static_cast<Eigen::Index>(val_idx[e][i]));
      val.y[row] = envs[e].y[static_cast<Eigen::Index>(val_idx[e][i])];
      ++row;
    }
  }
  return {std::move(train), std::move(val)};
}

Eigen::VectorXd effective_coefficients(const Model& model) {
  if (!model.phi_empty())
    throw Unsupported("effective coefficients are defined for models without hidden layers");
  return model.head_w;
}

namespace {

EnvironmentData take_rows(const EnvironmentData& env, const std::vector<std::size_t>& perm,
                          std::size_t begin, std::size_t count) {
  EnvironmentData out;
  out.env_id = env.env_id;
  out.feature_names = env.feature_names;
  out.x.resize(static_cast<Eigen::Index>(count), env.x.cols());
  out.y.resize(static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    const auto r = static_cast<Eigen::Index>(perm[begin + i]);
    out.x.row(static_cast<Eigen::Index>(i)) = env.x.row(r);
    out.y[static_cast<Eigen::Index>(i)] = env.y[r];
  }
  return out;
}

}  // namespace

TrainResult train(const Model& init, const std::vector<EnvironmentData>& envs,
                  const ObjectiveSpec& objective, const TrainConfig& config) {
  validate_model(init);
  config.validate();
  objective.validate();
  if (envs.empty()) throw Precondition("training needs at least one environment");
  for (const auto& env : envs) {
    if (env.y.size() < 1) throw Precondition("empty environment " + env.env_id);
    if (env.x.cols() != init.input_dim)
      throw DimensionMismatch("environment features do not match model input");
  }

  std::vector<EnvironmentData> train_envs;
  EnvironmentData validation;
  bool has_validation = false;
  if (config.early_stop) {
    auto [t, v] = pooled_validation_split(envs, config.early_stop->validation_fraction, config.seed);
    train_envs = std::move(t);
    validation = std::move(v);
    has_validation = true;
  } else {
    train_envs = envs;
  }
  const std::size_t n_envs = train_envs.size();

  Eigen::Index min_rows = train_envs[0].y.size();
  for (const auto& env : train_envs) min_rows = std::min(min_rows, env.y.size());
  const auto batch = static_cast<std::size_t>(
      std::min<Eigen::Index>(config.batch_size, min_rows));
  const std::size_t steps_per_epoch =
      std::max<std::size_t>(1, static_cast<std::size_t>(min_rows) / batch);
  const bool full_batch = steps_per_epoch == 1 && batch == static_cast<std::size_t>(min_rows) &&
                          std::all_of(train_envs.begin(), train_envs.end(), [&](const auto& e) {
                            return e.y.size() == min_rows;
                          });

  const ParamLayout layout = layout_of(init);
  Eigen::VectorXd params = to_params(init);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(params.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(params.size());
  long step_count = 0;

  Eigen::VectorXd dro_weights =
      Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_envs), 1.0 / static_cast<double>(n_envs));

  TrainTrace trace;
  for (const auto& env : train_envs) trace.env_ids.push_back(env.env_id);
  trace.feature_names = train_envs[0].feature_names;

  Model model = init;
  double best_val = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_params = params;
  int bad_epochs = 0;

  std::vector<EnvironmentData> batches;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const double lambda = objective.lambda_at(epoch);

    std::vector<std::vector<std::size_t>> perms(n_envs);
    if (!full_batch) {
      for (std::size_t e = 0; e < n_envs; ++e) {
        SplitMix64 gen(SplitMix64::mix(SplitMix64::mix(config.seed, 0xba7c4),
                                       static_cast<std::uint64_t>(epoch) * n_envs + e));
        perms[e] = shuffled_indices(static_cast<std::size_t>(train_envs[e].y.size()), gen);
      }
    }

    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::vector<EnvironmentData>* step_envs;
      if (full_batch) {
        step_envs = &train_envs;
      } else {
        batches.clear();
        for (std::size_t e = 0; e < n_envs; ++e)
          batches.push_back(take_rows(train_envs[e], perms[e], step * batch, batch));
        step_envs = &batches;
      }

      if (objective.kind == ObjectiveKind::group_dro) {
        Eigen::VectorXd batch_losses(static_cast<Eigen::Index>(n_envs));
        for (std::size_t e = 0; e < n_envs; ++e)
          batch_losses[static_cast<Eigen::Index>(e)] = loss(model, (*step_envs)[e]);
        dro_weights = dro_reweight(dro_weights, batch_losses, objective.dro_step);
      }

      const GradReport report =
          total_objective(model, *step_envs, objective, epoch,
                          objective.kind == ObjectiveKind::group_dro ? &dro_weights : nullptr);
      if (!std::isfinite(report.value)) throw NonFiniteLoss(trace);

      Eigen::VectorXd grad(params.size());
      grad.head(layout.phi_size) = report.grad_phi;
      grad.tail(layout.beta_size) = report.grad_beta;
      if (config.l2_reg > 0.0) grad += 2.0 * config.l2_reg * params;
      if (!grad.allFinite()) throw NonFiniteLoss(trace);

      if (config.optimizer == Optimizer::sgd) {
        params -= config.learning_rate * grad;
      } else {
        ++step_count;
        const AdamParams& a = config.adam;
        m = a.beta1 * m + (1.0 - a.beta1) * grad;
        v = a.beta2 * v + (1.0 - a.beta2) * grad.cwiseProduct(grad);
        const double mc = 1.0 - std::pow(a.beta1, static_cast<double>(step_count));
        const double vc = 1.0 - std::pow(a.beta2, static_cast<double>(step_count));
        params -= config.learning_rate *
                  ((m / mc).array() / ((v / vc).array().sqrt() + a.epsilon)).matrix();
      }
      if (!params.allFinite()) throw NonFiniteLoss(trace);
      model = from_params(layout, params);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lambda = lambda;
    for (const auto& env : train_envs) {
      rec.env_loss.push_back(loss(model, env));
      rec.env_grad_sqnorm.push_back(grad_beta_env(model, env).squaredNorm());
    }
    if (objective.has_penalty())
      rec.penalty = penalty_value(model, train_envs, objective.penalty_desc());
    if (model.phi_empty()) rec.coef = model.head_w;
    if (has_validation) rec.validation_loss = loss(model, validation);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    trace.epochs.push_back(std::move(rec));

    if (has_validation) {
      const double val = *trace.epochs.back().validation_loss;
      if (!std::isfinite(val)) throw NonFiniteLoss(trace);
      if (val < best_val) {
        best_val = val;
        best_params = params;
        bad_epochs = 0;
      } else if (++bad_epochs > config.early_stop->patience) {
        trace.early_stopped = true;
        break;
      }
    }
  }

  if (has_validation) model = from_params(layout, best_params);
  return {std::move(model), std::move(trace)};
}

void trace_to_csv(const TrainTrace& trace, std::ostream& os) {
  std::vector<std::string> header = {"epoch", "env_id", "loss", "penalty", "lambda"};
  for (const auto& f : trace.feature_names) header.push_back("coef_" + f);
  header.push_back("grad_sqnorm");
  csv::write_row(os, header);
  for (const auto& rec : trace.epochs) {
    for (std::size_t e = 0; e < trace.env_ids.size(); ++e) {
      std::vector<std::string> row = {std::to_string(rec.epoch), trace.env_ids[e],
                                      csv::num(rec.env_loss[e]), csv::num(rec.penalty),
                                      csv::num(rec.lambda)};
      if (rec.coef) {
        for (Eigen::Index i = 0; i < rec.coef->size(); ++i) row.push_back(csv::num((*rec.coef)[i]));
      } else {
        for (std::size_t i = 0; i < trace.feature_names.size(); ++i) row.push_back("");
      }
      row.push_back(e < rec.env_grad_sqnorm.size() ? csv::num(rec.env_grad_sqnorm[e])
                                                   : std::string());
      csv::write_row(os, row);
    }
  }
}

}  // namespace dirmlab
