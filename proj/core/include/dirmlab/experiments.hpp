#pragma once

// Preset experiment pipelines: the introductory-example interpolation sweep,
// robustness to interventions, coefficient-recovery tables, the affine
// worst-case identity check, and multi-study feature-selection stability.
// Every report is reproducible bit-for-bit from (preset id, seeds).

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dirmlab/scm.hpp"
#include "dirmlab/toml.hpp"
#include "dirmlab/trainer.hpp"

namespace dirmlab {

struct ReportRow {
  std::string objective;
  std::uint64_t seed = 0;
  double lambda = std::nan("");
  double shift = std::nan("");
  double eta = std::nan("");
  int n_envs = 0;
  std::string target;  // intervention-axis label or feature name
  std::string metric;
  double value = 0.0;
};

struct ExperimentReport {
  std::string experiment;
  std::vector<std::string> tags;
  std::vector<std::uint64_t> seeds;
  toml::Value manifest;  // preset parameters and provenance notes
  std::vector<ReportRow> rows;

  // all values for (objective, metric), ordered by seed
  std::vector<double> values(const std::string& objective, const std::string& metric) const;
};

// Writes <outdir>/<experiment>/report.csv and manifest.toml; when svg is set,
// also one line plot per experiment (series per objective).
void write_report(const ExperimentReport& report, const std::string& outdir, bool svg = false);

double median(std::vector<double> values);

// Number of worker threads used by grid runners (cells are independent and
// merged in deterministic order, so the thread count never changes results).
void set_experiment_threads(int n);
int experiment_threads();

// --- introductory example presets ------------------------------------------

// Training environments of the introductory example: exogenous variances
// sigma^2 = 1 and 2 on E_X1, E_X2 (scale sqrt(2) on the second environment).
std::vector<Intervention> intro_train_interventions();

struct TrainPreset {
  int n_train = 10000;
  int epochs = 5000;
  int warmup_epochs = 500;
  double learning_rate = 1e-2;
  double lambda_infinity = 1e4;  // operationalizes the λ → ∞ limit
};

struct Fig1Options {
  bool confounded = true;
  std::string shift_axis = "observed";  // "observed": mean shift of E_X1; "hidden": mean shift of E_H
  std::vector<double> magnitudes = {0.0, 1.0, 2.0, 3.0, 4.0, 5.0};
  std::vector<double> lambdas = {0.0, 0.1, 1.0, 10.0, 100.0, 1e4};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  TrainPreset train{.n_train = 20000};
};
ExperimentReport run_fig1(const Fig1Options& opt);

struct StabilityOptions {
  std::string target = "E_Y";  // "E_X" shifts E_X1+E_X2; "E_H"; "E_Y"
  double max_shift = 5.0;
  int n_points = 6;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  TrainPreset train;
};
ExperimentReport run_stability(const StabilityOptions& opt);

struct CoeffTableOptions {
  bool confounded = true;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  TrainPreset train;
};
ExperimentReport run_coeff_tables(const CoeffTableOptions& opt);

struct Theorem1Options {
  int n_envs = 2;
  std::vector<double> eta_grid = {0.0, 0.5, 1.0, 5.0};
  int trials = 1000;
  std::uint64_t seed = 0;
};
ExperimentReport run_theorem1_check(const Theorem1Options& opt);

// --- multi-study feature stability ------------------------------------------

// Synthetic multi-study binary-outcome generator: 5 planted stable features
// drive the label; 5 anti-causal spurious features leak it with study-specific
// strength; features are normalized to zero mean and unit variance per study.
struct FeatureStudyOptions {
  int n_studies = 40;
  int n_per_study = 1500;
  int n_stable = 5;
  int n_spurious = 5;
  double spurious_zero_prob = 0.7;
  std::uint64_t generator_seed = 0;
};
std::vector<EnvironmentData> make_feature_studies(const FeatureStudyOptions& opt);

struct FeatureStabilityOptions {
  FeatureStudyOptions studies;
  int pairs = 100;
  std::vector<double> lambda_grid = {0.0, 0.25, 0.5, 1.0};
  int top_k = 10;
  double coef_threshold = 0.1;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  int epochs = 400;
  int warmup_epochs = 100;
  double learning_rate = 0.05;
  double mode_lambda = 1.0;  // λ used for the point/grid-mode comparison
};
ExperimentReport run_feature_stability(const FeatureStabilityOptions& opt);

// Count of features selected in at least `level` of the runs.
int intersection_count_at(const std::vector<int>& per_feature_run_counts, int level);

}  // namespace dirmlab
