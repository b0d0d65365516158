#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dirmlab/config.hpp"
#include "dirmlab/experiments.hpp"
#include "dirmlab/penalty.hpp"
#include "dirmlab/rng.hpp"
#include "dirmlab/version.hpp"

namespace dirmlab {

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& arg) {
  std::vector<std::uint64_t> seeds;
  if (arg.empty()) return seeds;
  if (arg.find(',') == std::string::npos) {
    const long n = std::stol(arg);
    if (n < 1) throw ValidationError("--seeds", "count must be >= 1");
    for (long i = 0; i < n; ++i) seeds.push_back(static_cast<std::uint64_t>(i));
    return seeds;
  }
  std::size_t pos = 0;
  while (pos < arg.size()) {
    const std::size_t comma = arg.find(',', pos);
    const std::string tok = arg.substr(pos, comma == std::string::npos ? comma : comma - pos);
    seeds.push_back(static_cast<std::uint64_t>(std::stoull(tok)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (seeds.empty()) throw ValidationError("--seeds", "empty seed list");
  return seeds;
}

std::vector<double> parse_grid(const std::string& arg) {
  std::vector<double> grid;
  std::size_t pos = 0;
  while (pos < arg.size()) {
    const std::size_t comma = arg.find(',', pos);
    const std::string tok = arg.substr(pos, comma == std::string::npos ? comma : comma - pos);
    grid.push_back(std::stod(tok));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return grid;
}

void apply_seed_env(RunConfig& cfg) {
  if (const char* env = std::getenv("DIRM_LAB_SEED")) {
    const auto seed = static_cast<std::uint64_t>(std::stoull(env));
    cfg.train.seed = seed;
    cfg.seeds = {seed};
  }
}

int cmd_simulate(const std::string& config_path, const std::string& out_override,
                 const std::string& seeds_arg) {
  RunConfig cfg = load_config(config_path);
  apply_seed_env(cfg);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (!seeds_arg.empty()) cfg.seeds = parse_seeds(seeds_arg);
  const ScmSpec spec = resolve_scm(cfg.scm);
  std::vector<Intervention> envs = cfg.environments;
  if (envs.empty()) envs.push_back(Intervention{});

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  for (std::uint64_t seed : cfg.seeds) {
    for (std::size_t e = 0; e < envs.size(); ++e) {
      const EnvironmentData env =
          sample(spec, envs[e], cfg.n_samples, SplitMix64::mix(seed, 100 + e),
                 "env" + std::to_string(e));
      const fs::path path = fs::path(cfg.out_dir) /
                            ("dataset_env" + std::to_string(e) + "_seed" + std::to_string(seed) +
                             ".csv");
      std::ofstream out(path);
      if (!out) throw Error("cannot write " + path.string());
      environment_to_csv(env, out);
      std::cout << "wrote " << path.string() << " (" << env.y.size() << " rows)\n";
    }
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_override) {
  RunConfig cfg = load_config(config_path);
  apply_seed_env(cfg);
  if (!out_override.empty()) cfg.out_dir = out_override;
  const ScmSpec spec = resolve_scm(cfg.scm);
  std::vector<Intervention> ivs = cfg.environments;
  if (ivs.empty()) ivs = intro_train_interventions();

  std::vector<EnvironmentData> envs;
  for (std::size_t e = 0; e < ivs.size(); ++e)
    envs.push_back(sample(spec, ivs[e], cfg.n_samples, SplitMix64::mix(cfg.train.seed, 100 + e),
                          "env" + std::to_string(e)));

  const Model init = make_model(static_cast<int>(envs[0].feature_names.size()), cfg.model.hidden,
                                cfg.model.link, SplitMix64::mix(cfg.train.seed, 7));
  const TrainResult result = train(init, envs, cfg.objective, cfg.train);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream out(fs::path(cfg.out_dir) / "trace.csv");
    trace_to_csv(result.trace, out);
  }
  save_model((fs::path(cfg.out_dir) / "model.json").string(), result.model);

  const auto& last = result.trace.epochs.back();
  std::cout << "epochs run: " << result.trace.epochs.size() << "\n";
  for (std::size_t e = 0; e < result.trace.env_ids.size(); ++e)
    std::cout << "final loss " << result.trace.env_ids[e] << ": " << last.env_loss[e] << "\n";
  if (result.model.phi_empty()) {
    const Eigen::VectorXd coef = effective_coefficients(result.model);
    std::cout << "coefficients:";
    for (Eigen::Index i = 0; i < coef.size(); ++i)
      std::cout << ' ' << result.trace.feature_names[static_cast<std::size_t>(i)] << '='
                << coef[i];
    std::cout << " bias=" << result.model.head_b << "\n";
  }
  std::cout << "wrote " << (fs::path(cfg.out_dir) / "trace.csv").string() << " and model.json\n";
  return 0;
}

int cmd_experiment(const std::string& which, const std::string& out_dir,
                   const std::string& seeds_arg, const std::string& lambda_arg,
                   const std::string& eta_arg, bool svg, int threads, bool confounded_only) {
  set_experiment_threads(threads);
  const std::vector<std::uint64_t> seeds = parse_seeds(seeds_arg.empty() ? "10" : seeds_arg);
  std::vector<ExperimentReport> reports;

  if (which == "fig1") {
    Fig1Options opt;
    opt.seeds = seeds;
    if (!lambda_arg.empty()) opt.lambdas = parse_grid(lambda_arg);
    for (const char* axis : {"observed", "hidden"}) {
      opt.shift_axis = axis;
      opt.confounded = true;
      reports.push_back(run_fig1(opt));
    }
    if (!confounded_only) {
      opt.shift_axis = "observed";
      opt.confounded = false;
      reports.push_back(run_fig1(opt));
    }
  } else if (which == "stability") {
    StabilityOptions opt;
    opt.seeds = seeds;
    for (const char* target : {"E_X", "E_H", "E_Y"}) {
      opt.target = target;
      reports.push_back(run_stability(opt));
    }
  } else if (which == "coeffs") {
    CoeffTableOptions opt;
    opt.seeds = seeds;
    opt.confounded = true;
    reports.push_back(run_coeff_tables(opt));
    if (!confounded_only) {
      opt.confounded = false;
      reports.push_back(run_coeff_tables(opt));
    }
  } else if (which == "theorem1") {
    Theorem1Options opt;
    opt.n_envs = 0;  // cycle 2,3,4
    if (!eta_arg.empty()) opt.eta_grid = parse_grid(eta_arg);
    if (!seeds.empty()) opt.seed = seeds[0];
    reports.push_back(run_theorem1_check(opt));
  } else if (which == "features") {
    FeatureStabilityOptions opt;
    opt.seeds = seeds;
    if (!lambda_arg.empty()) opt.lambda_grid = parse_grid(lambda_arg);
    reports.push_back(run_feature_stability(opt));
  } else {
    std::cerr << "unknown experiment: " << which
              << " (expected fig1|stability|coeffs|theorem1|features)\n";
    return 1;
  }

  for (const auto& report : reports) {
    write_report(report, out_dir, svg);
    std::cout << "wrote " << out_dir << "/" << report.experiment << "/report.csv ("
              << report.rows.size() << " rows)\n";
  }
  return 0;
}

int cmd_check_grad(int cases, double step) {
  const std::vector<std::vector<int>> archs = {{}, {5}, {5, 4}};
  const int d = 3;
  bool ok = true;
  for (const auto& widths : archs) {
    for (const Link link : {Link::identity, Link::logistic}) {
      double worst_beta = 0.0;
      double worst_phi = 0.0;
      double worst_pbeta = 0.0;
      for (int c = 0; c < cases; ++c) {
        const std::uint64_t seed =
            SplitMix64::mix(42, static_cast<std::uint64_t>(c) * 31 + widths.size() * 7 +
                                    (link == Link::logistic ? 1 : 0));
        SplitMix64 gen(seed);
        const Model model = make_model(d, widths, link, gen.next());
        std::vector<EnvironmentData> envs;
        for (int e = 0; e < 2; ++e) {
          EnvironmentData env;
          env.env_id = "env" + std::to_string(e);
          env.feature_names = {"f1", "f2", "f3"};
          env.x.resize(25, d);
          env.y.resize(25);
          for (Eigen::Index i = 0; i < env.x.rows(); ++i) {
            for (Eigen::Index j = 0; j < d; ++j) env.x(i, j) = gen.normal();
            env.y[i] = link == Link::logistic ? (gen.uniform01() < 0.5 ? 0.0 : 1.0) : gen.normal();
          }
          envs.push_back(std::move(env));
        }
        worst_beta = std::max(worst_beta, fd_check(model, envs, FdWhich::beta, step));
        for (const DirmPenaltyForm form :
             {DirmPenaltyForm::grad_variance, DirmPenaltyForm::sqnorm_variance}) {
          PenaltyDesc desc;
          desc.form = form;
          desc.mode = c % 5 == 0 ? DirmNormMode::scaled_grid : DirmNormMode::point;
          worst_phi = std::max(worst_phi, fd_check(model, envs, FdWhich::phi_penalty, step, desc));
          worst_pbeta = std::max(worst_pbeta, fd_check_penalty_beta(model, envs, step, desc));
        }
        if (c % 5 == 1) {
          PenaltyDesc desc;
          desc.kind = PenaltyKind::irm;
          worst_phi = std::max(worst_phi, fd_check(model, envs, FdWhich::phi_penalty, step, desc));
          desc.kind = PenaltyKind::rex;
          worst_phi = std::max(worst_phi, fd_check(model, envs, FdWhich::phi_penalty, step, desc));
        }
      }
      std::string arch = "hidden=[";
      for (std::size_t i = 0; i < widths.size(); ++i)
        arch += (i ? "," : "") + std::to_string(widths[i]);
      arch += "]";
      const char* link_name = link == Link::logistic ? "logistic" : "identity";
      std::cout << arch << " " << link_name << ": max rel err beta=" << worst_beta
                << " phi-penalty=" << worst_phi << " beta-penalty=" << worst_pbeta << "\n";
      if (worst_beta >= 1e-4 || worst_phi >= 1e-4 || worst_pbeta >= 1e-4) ok = false;
    }
  }
  std::cout << (ok ? "gradient check passed" : "gradient check FAILED") << "\n";
  return ok ? 0 : 2;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"derivative-invariant risk minimization lab"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "runs";
  std::string seeds_arg;
  std::string lambda_arg;
  std::string eta_arg;
  bool svg = false;
  bool confounded_only = false;
  int threads = 1;

  auto* simulate = app.add_subcommand("simulate", "sample an SCM and export datasets as CSV");
  simulate->add_option("--config", config_path, "run configuration (TOML)")->required();
  simulate->add_option("--out", out_dir, "output directory");
  simulate->add_option("--seeds", seeds_arg, "seed count or comma list");

  auto* train_cmd = app.add_subcommand("train", "single training run");
  train_cmd->add_option("--config", config_path, "run configuration (TOML)")->required();
  train_cmd->add_option("--out", out_dir, "output directory");

  std::string experiment_name;
  auto* experiment = app.add_subcommand("experiment", "run a preset experiment pipeline");
  experiment->add_option("name", experiment_name, "fig1|stability|coeffs|theorem1|features")
      ->required();
  experiment->add_option("--out", out_dir, "output directory");
  experiment->add_option("--seeds", seeds_arg, "seed count or comma list");
  experiment->add_option("--lambda", lambda_arg, "lambda grid, comma separated");
  experiment->add_option("--eta", eta_arg, "eta grid, comma separated");
  experiment->add_flag("--svg", svg, "emit SVG line plots");
  experiment->add_flag("--confounded", confounded_only,
                       "run only the confounded variant (fig1, coeffs)");
  experiment->add_option("--threads", threads, "worker threads for grid cells");

  int cases = 100;
  double step = 1e-5;
  auto* check = app.add_subcommand("check-grad", "finite-difference gradient battery");
  check->add_option("--cases", cases, "random cases per architecture");
  check->add_option("--step", step, "central difference step");

  auto* version = app.add_subcommand("version", "print version");

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(config_path, out_dir, seeds_arg);
    if (train_cmd->parsed()) return cmd_train(config_path, out_dir);
    if (experiment->parsed())
      return cmd_experiment(experiment_name, out_dir, seeds_arg, lambda_arg, eta_arg, svg, threads,
                            confounded_only);
    if (check->parsed()) return cmd_check_grad(cases, step);
    if (version->parsed()) {
      std::cout << "dirmlab " << kVersion << "\n";
      return 0;
    }
  } catch (const NonFiniteLoss& e) {
    std::cerr << "numerical failure: " << e.what() << " (" << e.trace.epochs.size()
              << " epochs completed)\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace dirmlab
