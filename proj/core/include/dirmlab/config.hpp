#pragma once

// Run configuration: one TOML document selecting the SCM source, the
// environment interventions, the model architecture, the objective and the
// training loop. Defaults are documented in configs/reference.toml.

#include <string>
#include <vector>

#include "dirmlab/objectives.hpp"
#include "dirmlab/scm.hpp"
#include "dirmlab/trainer.hpp"

namespace dirmlab {

struct ScmSource {
  std::string preset;  // exactly one of preset ("intro") or path
  std::string path;
  bool confounded = true;

  bool operator==(const ScmSource&) const = default;
};

struct ModelConfig {
  std::vector<int> hidden;  // hidden layer widths, at most 2
  Link link = Link::identity;

  bool operator==(const ModelConfig&) const = default;
};

struct ExperimentConfig {
  std::string preset;  // fig1 | stability | coeffs | theorem1 | features
  std::vector<double> lambdas;
  std::vector<double> magnitudes;
  std::vector<double> etas;

  bool operator==(const ExperimentConfig&) const = default;
};

struct RunConfig {
  ScmSource scm;
  std::vector<Intervention> environments;  // one intervention per environment
  ModelConfig model;
  ObjectiveSpec objective;
  TrainConfig train;
  ExperimentConfig experiment;
  std::string out_dir = "runs";
  std::vector<std::uint64_t> seeds = {0};
  int n_samples = 10000;

  bool operator==(const RunConfig&) const = default;
};

// Parses and validates. Throws ParseError (line/column) on malformed TOML and
// ValidationError naming the offending key.
RunConfig load_config(const std::string& path);
RunConfig config_from_toml(const toml::Value& root);
toml::Value config_to_toml(const RunConfig& config);
std::string serialize_config(const RunConfig& config);

// Resolves the SCM source (built-in preset or TOML file).
ScmSpec resolve_scm(const ScmSource& source);

}  // namespace dirmlab
