#include "dirmlab/config.hpp"

#include <cmath>

namespace dirmlab {

namespace {

ObjectiveKind objective_kind_from(const std::string& s) {
  if (s == "erm") return ObjectiveKind::erm;
  if (s == "group_dro") return ObjectiveKind::group_dro;
  if (s == "irm") return ObjectiveKind::irm;
  if (s == "rex") return ObjectiveKind::rex;
  if (s == "dirm") return ObjectiveKind::dirm;
  throw ValidationError("objective.kind", "unknown objective: " + s);
}

std::string objective_kind_to(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::erm: return "erm";
    case ObjectiveKind::group_dro: return "group_dro";
    case ObjectiveKind::irm: return "irm";
    case ObjectiveKind::rex: return "rex";
    case ObjectiveKind::dirm: return "dirm";
  }
  return "erm";
}

double get_double(const toml::Value& table, const std::string& key, const std::string& path,
                  double fallback) {
  const toml::Value* v = table.find(key);
  if (!v) return fallback;
  if (!v->is_number()) throw ValidationError(path, "must be a number");
  return v->as_double();
}

std::int64_t get_int(const toml::Value& table, const std::string& key, const std::string& path,
                     std::int64_t fallback) {
  const toml::Value* v = table.find(key);
  if (!v) return fallback;
  if (!v->is_int()) throw ValidationError(path, "must be an integer");
  return v->as_int();
}

bool get_bool(const toml::Value& table, const std::string& key, const std::string& path,
              bool fallback) {
  const toml::Value* v = table.find(key);
  if (!v) return fallback;
  if (!v->is_bool()) throw ValidationError(path, "must be a boolean");
  return v->as_bool();
}

std::string get_string(const toml::Value& table, const std::string& key, const std::string& path,
                       const std::string& fallback) {
  const toml::Value* v = table.find(key);
  if (!v) return fallback;
  if (!v->is_string()) throw ValidationError(path, "must be a string");
  return v->as_string();
}

std::vector<double> get_double_list(const toml::Value& table, const std::string& key,
                                    const std::string& path) {
  std::vector<double> out;
  const toml::Value* v = table.find(key);
  if (!v) return out;
  if (!v->is_array()) throw ValidationError(path, "must be an array of numbers");
  for (const auto& item : v->as_array()) {
    if (!item.is_number()) throw ValidationError(path, "must be an array of numbers");
    out.push_back(item.as_double());
  }
  return out;
}

std::map<std::string, double> table_to_map(const toml::Value& v, const std::string& path) {
  std::map<std::string, double> out;
  if (!v.is_table()) throw ValidationError(path, "must be a table of name = value pairs");
  for (const auto& [k, item] : v.as_table()) {
    if (!item.is_number()) throw ValidationError(path + "." + k, "must be a number");
    out[k] = item.as_double();
  }
  return out;
}

}  // namespace

RunConfig config_from_toml(const toml::Value& root) {
  RunConfig cfg;

  if (const toml::Value* scm = root.find("scm")) {
    cfg.scm.preset = get_string(*scm, "preset", "scm.preset", "");
    cfg.scm.path = get_string(*scm, "path", "scm.path", "");
    cfg.scm.confounded = get_bool(*scm, "confounded", "scm.confounded", true);
  } else {
    cfg.scm.preset = "intro";
  }
  if (cfg.scm.preset.empty() == cfg.scm.path.empty())
    throw ValidationError("scm", "exactly one of scm.preset or scm.path is required");

  if (const toml::Value* envs = root.find("environment")) {
    if (!envs->is_array()) throw ValidationError("environment", "must be an array of tables");
    for (std::size_t i = 0; i < envs->as_array().size(); ++i) {
      const toml::Value& item = envs->as_array()[i];
      Intervention iv;
      const std::string path = "environment[" + std::to_string(i) + "]";
      if (const toml::Value* s = item.find("shift")) iv.shifts = table_to_map(*s, path + ".shift");
      if (const toml::Value* s = item.find("scale")) iv.scales = table_to_map(*s, path + ".scale");
      for (const auto& [name, scale] : iv.scales)
        if (!(scale > 0.0)) throw ValidationError(path + ".scale." + name, "must be > 0");
      cfg.environments.push_back(std::move(iv));
    }
  }

  if (const toml::Value* model = root.find("model")) {
    if (const toml::Value* hidden = model->find("hidden")) {
      if (!hidden->is_array()) throw ValidationError("model.hidden", "must be an array of widths");
      for (const auto& w : hidden->as_array()) {
        if (!w.is_int() || w.as_int() < 1)
          throw ValidationError("model.hidden", "widths must be positive integers");
        cfg.model.hidden.push_back(static_cast<int>(w.as_int()));
      }
      if (cfg.model.hidden.size() > 2)
        throw ValidationError("model.hidden", "at most 2 hidden layers are supported");
    }
    const std::string link = get_string(*model, "link", "model.link", "identity");
    if (link == "identity")
      cfg.model.link = Link::identity;
    else if (link == "logistic")
      cfg.model.link = Link::logistic;
    else
      throw ValidationError("model.link", "must be 'identity' or 'logistic'");
  }

  if (const toml::Value* obj = root.find("objective")) {
    cfg.objective.kind = objective_kind_from(get_string(*obj, "kind", "objective.kind", "erm"));
    cfg.objective.lambda_final = get_double(*obj, "lambda", "objective.lambda", 0.0);
    if (cfg.objective.lambda_final < 0.0)
      throw ValidationError("objective.lambda", "must be >= 0");
    cfg.objective.warmup_epochs =
        static_cast<int>(get_int(*obj, "warmup_epochs", "objective.warmup_epochs", 0));
    if (cfg.objective.warmup_epochs < 0)
      throw ValidationError("objective.warmup_epochs", "must be >= 0");
    const std::string mode =
        get_string(*obj, "dirm_norm_mode", "objective.dirm_norm_mode", "point");
    if (mode == "point")
      cfg.objective.dirm_norm_mode = DirmNormMode::point;
    else if (mode == "scaled_grid")
      cfg.objective.dirm_norm_mode = DirmNormMode::scaled_grid;
    else
      throw ValidationError("objective.dirm_norm_mode", "must be 'point' or 'scaled_grid'");
    const std::string form =
        get_string(*obj, "dirm_penalty_form", "objective.dirm_penalty_form", "grad_variance");
    if (form == "grad_variance")
      cfg.objective.dirm_penalty_form = DirmPenaltyForm::grad_variance;
    else if (form == "sqnorm_variance")
      cfg.objective.dirm_penalty_form = DirmPenaltyForm::sqnorm_variance;
    else
      throw ValidationError("objective.dirm_penalty_form",
                            "must be 'grad_variance' or 'sqnorm_variance'");
    cfg.objective.dro_step = get_double(*obj, "dro_step", "objective.dro_step", 0.01);
    if (cfg.objective.kind == ObjectiveKind::group_dro && !(cfg.objective.dro_step > 0.0))
      throw ValidationError("objective.dro_step", "must be > 0");
    cfg.objective.head_bias_in_penalty =
        get_bool(*obj, "head_bias_in_penalty", "objective.head_bias_in_penalty", true);
    cfg.objective.linear_ramp = get_bool(*obj, "linear_ramp", "objective.linear_ramp", false);
  }

  if (const toml::Value* train = root.find("train")) {
    cfg.train.learning_rate =
        get_double(*train, "learning_rate", "train.learning_rate", 1e-2);
    if (cfg.train.learning_rate < 0.0)
      throw ValidationError("train.learning_rate", "must be >= 0");
    cfg.train.epochs = static_cast<int>(get_int(*train, "epochs", "train.epochs", 100));
    if (cfg.train.epochs < 1) throw ValidationError("train.epochs", "must be >= 1");
    cfg.train.batch_size = static_cast<int>(get_int(*train, "batch_size", "train.batch_size", 128));
    if (cfg.train.batch_size < 1) throw ValidationError("train.batch_size", "must be >= 1");
    const std::string optimizer = get_string(*train, "optimizer", "train.optimizer", "adam");
    if (optimizer == "adam")
      cfg.train.optimizer = Optimizer::adam;
    else if (optimizer == "sgd")
      cfg.train.optimizer = Optimizer::sgd;
    else
      throw ValidationError("train.optimizer", "must be 'adam' or 'sgd'");
    cfg.train.adam.beta1 = get_double(*train, "adam_beta1", "train.adam_beta1", 0.9);
    cfg.train.adam.beta2 = get_double(*train, "adam_beta2", "train.adam_beta2", 0.999);
    cfg.train.adam.epsilon = get_double(*train, "adam_epsilon", "train.adam_epsilon", 1e-8);
    cfg.train.seed = static_cast<std::uint64_t>(get_int(*train, "seed", "train.seed", 0));
    cfg.train.l2_reg = get_double(*train, "l2_reg", "train.l2_reg", 0.0);
    if (cfg.train.l2_reg < 0.0) throw ValidationError("train.l2_reg", "must be >= 0");
    if (const toml::Value* es = train->find("early_stop")) {
      EarlyStopConfig stop;
      stop.validation_fraction = get_double(
          *es, "validation_fraction", "train.early_stop.validation_fraction", 0.2);
      if (!(stop.validation_fraction >= 0.0 && stop.validation_fraction < 1.0))
        throw ValidationError("train.early_stop.validation_fraction", "must be in [0,1)");
      stop.patience = static_cast<int>(get_int(*es, "patience", "train.early_stop.patience", 20));
      if (stop.patience < 1)
        throw ValidationError("train.early_stop.patience", "must be >= 1");
      cfg.train.early_stop = stop;
    }
  }

  if (const toml::Value* exp = root.find("experiment")) {
    cfg.experiment.preset = get_string(*exp, "preset", "experiment.preset", "");
    cfg.experiment.lambdas = get_double_list(*exp, "lambdas", "experiment.lambdas");
    cfg.experiment.magnitudes = get_double_list(*exp, "magnitudes", "experiment.magnitudes");
    cfg.experiment.etas = get_double_list(*exp, "etas", "experiment.etas");
    for (double l : cfg.experiment.lambdas)
      if (l < 0.0) throw ValidationError("experiment.lambdas", "must be >= 0");
    for (double e : cfg.experiment.etas)
      if (e < 0.0) throw ValidationError("experiment.etas", "must be >= 0");
  }

  if (const toml::Value* output = root.find("output")) {
    cfg.out_dir = get_string(*output, "dir", "output.dir", "runs");
    if (const toml::Value* seeds = output->find("seeds")) {
      cfg.seeds.clear();
      if (!seeds->is_array()) throw ValidationError("output.seeds", "must be an array of integers");
      for (const auto& s : seeds->as_array()) {
        if (!s.is_int() || s.as_int() < 0)
          throw ValidationError("output.seeds", "must be non-negative integers");
        cfg.seeds.push_back(static_cast<std::uint64_t>(s.as_int()));
      }
      if (cfg.seeds.empty()) throw ValidationError("output.seeds", "must be non-empty");
    }
  }

  if (const toml::Value* sim = root.find("simulate")) {
    cfg.n_samples = static_cast<int>(get_int(*sim, "n_samples", "simulate.n_samples", 10000));
    if (cfg.n_samples < 1) throw ValidationError("simulate.n_samples", "must be >= 1");
  }

  return cfg;
}

RunConfig load_config(const std::string& path) {
  return config_from_toml(toml::parse_file(path));
}

toml::Value config_to_toml(const RunConfig& cfg) {
  toml::Value root{toml::Table{}};

  toml::Value scm{toml::Table{}};
  if (!cfg.scm.preset.empty()) scm["preset"] = cfg.scm.preset;
  if (!cfg.scm.path.empty()) scm["path"] = cfg.scm.path;
  scm["confounded"] = cfg.scm.confounded;
  root["scm"] = std::move(scm);

  if (!cfg.environments.empty()) {
    toml::Array envs;
    for (const auto& iv : cfg.environments) {
      toml::Value t{toml::Table{}};
      toml::Value shift{toml::Table{}};
      for (const auto& [k, v] : iv.shifts) shift[k] = v;
      toml::Value scale{toml::Table{}};
      for (const auto& [k, v] : iv.scales) scale[k] = v;
      t["shift"] = std::move(shift);
      t["scale"] = std::move(scale);
      envs.push_back(std::move(t));
    }
    root["environment"] = toml::Value(std::move(envs));
  }

  toml::Value model{toml::Table{}};
  toml::Array hidden;
  for (int w : cfg.model.hidden) hidden.push_back(toml::Value(static_cast<std::int64_t>(w)));
  model["hidden"] = toml::Value(std::move(hidden));
  model["link"] = cfg.model.link == Link::identity ? "identity" : "logistic";
  root["model"] = std::move(model);

  toml::Value obj{toml::Table{}};
  obj["kind"] = objective_kind_to(cfg.objective.kind);
  obj["lambda"] = cfg.objective.lambda_final;
  obj["warmup_epochs"] = static_cast<std::int64_t>(cfg.objective.warmup_epochs);
  obj["dirm_norm_mode"] =
      cfg.objective.dirm_norm_mode == DirmNormMode::point ? "point" : "scaled_grid";
  obj["dirm_penalty_form"] = cfg.objective.dirm_penalty_form == DirmPenaltyForm::grad_variance
                                 ? "grad_variance"
                                 : "sqnorm_variance";
  obj["dro_step"] = cfg.objective.dro_step;
  obj["head_bias_in_penalty"] = cfg.objective.head_bias_in_penalty;
  obj["linear_ramp"] = cfg.objective.linear_ramp;
  root["objective"] = std::move(obj);

  toml::Value train{toml::Table{}};
  train["learning_rate"] = cfg.train.learning_rate;
  train["epochs"] = static_cast<std::int64_t>(cfg.train.epochs);
  train["batch_size"] = static_cast<std::int64_t>(cfg.train.batch_size);
  train["optimizer"] = cfg.train.optimizer == Optimizer::adam ? "adam" : "sgd";
  train["adam_beta1"] = cfg.train.adam.beta1;
  train["adam_beta2"] = cfg.train.adam.beta2;
  train["adam_epsilon"] = cfg.train.adam.epsilon;
  train["seed"] = static_cast<std::int64_t>(cfg.train.seed);
  train["l2_reg"] = cfg.train.l2_reg;
  if (cfg.train.early_stop) {
    toml::Value es{toml::Table{}};
    es["validation_fraction"] = cfg.train.early_stop->validation_fraction;
    es["patience"] = static_cast<std::int64_t>(cfg.train.early_stop->patience);
    train["early_stop"] = std::move(es);
  }
  root["train"] = std::move(train);

  if (!cfg.experiment.preset.empty() || !cfg.experiment.lambdas.empty() ||
      !cfg.experiment.magnitudes.empty() || !cfg.experiment.etas.empty()) {
    toml::Value exp{toml::Table{}};
    if (!cfg.experiment.preset.empty()) exp["preset"] = cfg.experiment.preset;
    const auto list = [](const std::vector<double>& v) {
      toml::Array arr;
      for (double d : v) arr.push_back(toml::Value(d));
      return toml::Value(std::move(arr));
    };
    if (!cfg.experiment.lambdas.empty()) exp["lambdas"] = list(cfg.experiment.lambdas);
    if (!cfg.experiment.magnitudes.empty()) exp["magnitudes"] = list(cfg.experiment.magnitudes);
    if (!cfg.experiment.etas.empty()) exp["etas"] = list(cfg.experiment.etas);
    root["experiment"] = std::move(exp);
  }

  toml::Value output{toml::Table{}};
  output["dir"] = cfg.out_dir;
  toml::Array seeds;
  for (auto s : cfg.seeds) seeds.push_back(toml::Value(static_cast<std::int64_t>(s)));
  output["seeds"] = toml::Value(std::move(seeds));
  root["output"] = std::move(output);

  toml::Value sim{toml::Table{}};
  sim["n_samples"] = static_cast<std::int64_t>(cfg.n_samples);
  root["simulate"] = std::move(sim);

  return root;
}

std::string serialize_config(const RunConfig& config) {
  return toml::serialize(config_to_toml(config));
}

ScmSpec resolve_scm(const ScmSource& source) {
  if (!source.preset.empty()) {
    if (source.preset == "intro") return intro_example_spec(source.confounded);
    throw ValidationError("scm.preset", "unknown preset: " + source.preset);
  }
  return load_scm(source.path);
}

}  // namespace dirmlab
