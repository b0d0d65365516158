#pragma once

// Linear-Gaussian structural causal models: specification, validation,
// interventional sampling and exact moment propagation. Only the exogenous
// distributions shift between environments; structural coefficients are
// fixed.

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "dirmlab/errors.hpp"
#include "dirmlab/toml.hpp"

namespace dirmlab {

struct ExogenousSpec {
  std::string name;
  double mean = 0.0;
  double variance = 1.0;  // >= 0

  bool operator==(const ExogenousSpec&) const = default;
};

// target := sum_p parents[p] * p + exogenous_source (unit loading)
struct StructuralEquation {
  std::string target;
  std::map<std::string, double> parents;
  std::string exogenous_source;

  bool operator==(const StructuralEquation&) const = default;
};

enum class Role { observed, hidden, target };

struct ScmSpec {
  std::vector<StructuralEquation> equations;
  std::vector<ExogenousSpec> exogenous;
  std::map<std::string, Role> roles;

  bool operator==(const ScmSpec&) const = default;
};

// Per-environment manipulation of exogenous distributions: additive mean
// shift and strictly positive standard-deviation multiplier.
struct Intervention {
  std::map<std::string, double> shifts;
  std::map<std::string, double> scales;

  bool operator==(const Intervention&) const = default;
};

struct EnvironmentData {
  Eigen::MatrixXd x;  // n_samples x d_observed
  Eigen::VectorXd y;  // n_samples
  std::string env_id;
  std::vector<std::string> feature_names;
};

// Checks all ScmSpec invariants and returns a topological evaluation order of
// the endogenous variables. Throws CyclicGraph / UnknownName / Precondition.
std::vector<std::string> validate_and_order(const ScmSpec& spec);

// Throws UnknownName / Precondition if the intervention references undeclared
// exogenous variables or uses non-positive scales.
void validate_intervention(const ScmSpec& spec, const Intervention& iv);

// Observed non-target variables in lexicographic name order (the feature
// order used by EnvironmentData, coefficients and CSV exports).
std::vector<std::string> observed_features(const ScmSpec& spec);
std::string target_name(const ScmSpec& spec);

// The chain H -> X2 -> Y -> X1 with confounder H. When confounded is false
// the variance of E_H is zero, so H := 0 and all H paths are inert.
ScmSpec intro_example_spec(bool confounded = true);

// Draws n joint samples under the intervention. Deterministic: a pure
// function of (spec, iv, n, seed); exogenous variable k uses SplitMix64
// substream mix(seed, k).
EnvironmentData sample(const ScmSpec& spec, const Intervention& iv, int n, std::uint64_t seed,
                       const std::string& env_id = "env");

struct Moments {
  std::vector<std::string> names;  // endogenous, in topological order
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  int index_of(const std::string& name) const;
};

// Exact first and second moments by propagating exogenous loadings through
// the topological order.
Moments analytic_moments(const ScmSpec& spec, const Intervention& iv);

struct LinearPredictor {
  Eigen::VectorXd coef;
  double intercept = 0.0;
  std::vector<std::string> feature_names;
};

// Population least squares of the target on the observed features: solves
// Cov(X,X) b = Cov(X,y) on analytic moments.
LinearPredictor population_ols(const ScmSpec& spec, const Intervention& iv);

// Same on the equal-weight mixture of the given environments.
LinearPredictor pooled_population_ols(const ScmSpec& spec, const std::vector<Intervention>& ivs);

// Exact E[(y - coef'x - intercept)^2] under the intervened distribution.
double population_mse(const ScmSpec& spec, const Intervention& iv, const LinearPredictor& predictor);

toml::Value scm_to_toml(const ScmSpec& spec);
ScmSpec scm_from_toml(const toml::Value& root);
void save_scm(const std::string& path, const ScmSpec& spec);
ScmSpec load_scm(const std::string& path);

// CSV export: header = feature names + "y", one row per sample.
void environment_to_csv(const EnvironmentData& env, std::ostream& os);

}  // namespace dirmlab
