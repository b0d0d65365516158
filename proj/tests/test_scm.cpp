#include <doctest.h>

#include <cmath>
#include <sstream>

#include "dirmlab/scm.hpp"

using namespace dirmlab;

namespace {

ScmSpec two_cycle() {
  ScmSpec spec;
  spec.exogenous = {{"E_X", 0.0, 1.0}, {"E_Y", 0.0, 1.0}};
  spec.equations = {{"X", {{"Y", 1.0}}, "E_X"}, {"Y", {{"X", 1.0}}, "E_Y"}};
  spec.roles = {{"X", Role::observed}, {"Y", Role::target}};
  return spec;
}

// test-side oracle: empirical least squares with intercept via normal equations
Eigen::VectorXd empirical_ols(const EnvironmentData& env) {
  const Eigen::Index n = env.y.size();
  const Eigen::Index d = env.x.cols();
  Eigen::MatrixXd z(n, d + 1);
  z.leftCols(d) = env.x;
  z.col(d).setOnes();
  return (z.transpose() * z).ldlt().solve(z.transpose() * env.y);
}

}  // namespace

TEST_CASE("validate_and_order returns the unique topological order of the intro example") {
  const ScmSpec spec = intro_example_spec(true);
  const auto order = validate_and_order(spec);
  CHECK(order == std::vector<std::string>{"H", "X2", "Y", "X1"});
}

TEST_CASE("validate_and_order rejects cycles and dangling names") {
  CHECK_THROWS_AS(validate_and_order(two_cycle()), CyclicGraph);

  ScmSpec empty;
  CHECK(validate_and_order(empty).empty());

  ScmSpec selfloop;
  selfloop.exogenous = {{"E", 0.0, 1.0}};
  selfloop.equations = {{"X", {{"X", 1.0}}, "E"}};
  selfloop.roles = {{"X", Role::target}};
  CHECK_THROWS_AS(validate_and_order(selfloop), CyclicGraph);

  ScmSpec dangling;
  dangling.exogenous = {{"E", 0.0, 1.0}};
  dangling.equations = {{"X", {{"missing", 1.0}}, "E"}};
  dangling.roles = {{"X", Role::target}};
  CHECK_THROWS_AS(validate_and_order(dangling), UnknownName);

  ScmSpec bad_exo;
  bad_exo.exogenous = {{"E", 0.0, 1.0}};
  bad_exo.equations = {{"X", {}, "nope"}};
  bad_exo.roles = {{"X", Role::target}};
  CHECK_THROWS_AS(validate_and_order(bad_exo), UnknownName);

  ScmSpec neg_var;
  neg_var.exogenous = {{"E", 0.0, -1.0}};
  neg_var.equations = {{"X", {}, "E"}};
  neg_var.roles = {{"X", Role::target}};
  CHECK_THROWS_AS(validate_and_order(neg_var), Precondition);

  ScmSpec two_targets;
  two_targets.exogenous = {{"E", 0.0, 1.0}, {"F", 0.0, 1.0}};
  two_targets.equations = {{"X", {}, "E"}, {"Y", {}, "F"}};
  two_targets.roles = {{"X", Role::target}, {"Y", Role::target}};
  CHECK_THROWS_AS(validate_and_order(two_targets), Precondition);
}

TEST_CASE("intro example carries the causal coefficients (0,1) for (X1, X2)") {
  const ScmSpec spec = intro_example_spec(true);
  const StructuralEquation* target_eq = nullptr;
  for (const auto& eq : spec.equations)
    if (eq.target == "Y") target_eq = &eq;
  REQUIRE(target_eq);
  CHECK(target_eq->parents.count("X1") == 0);  // X1 does not cause Y
  CHECK(target_eq->parents.at("X2") == 1.0);
  CHECK(observed_features(spec) == std::vector<std::string>{"X1", "X2"});
  CHECK(target_name(spec) == "Y");

  const ScmSpec unconf = intro_example_spec(false);
  for (const auto& e : unconf.exogenous)
    if (e.name == "E_H") CHECK(e.variance == 0.0);
  CHECK_NOTHROW(validate_and_order(unconf));
  CHECK_NOTHROW(validate_and_order(spec));
}

TEST_CASE("sample means and variances match the analytic propagation") {
  const ScmSpec spec = intro_example_spec(true);
  const int n = 1000000;
  const EnvironmentData env = sample(spec, {}, n, 20240817);
  const Eigen::Index x2 = 1;  // features are (X1, X2)

  const double mean_x2 = env.x.col(x2).mean();
  CHECK(std::abs(mean_x2) < 5e-3);

  // Var(X2) = Var(H) + Var(E_X2) = 2 in the confounded variant
  const double var_x2 = env.x.col(x2).squaredNorm() / n - mean_x2 * mean_x2;
  CHECK(var_x2 == doctest::Approx(2.0).epsilon(0.01));
}

TEST_CASE("sample is bit-identical for identical inputs") {
  const ScmSpec spec = intro_example_spec(true);
  Intervention iv;
  iv.shifts["E_X1"] = 0.5;
  const EnvironmentData a = sample(spec, iv, 1000, 99);
  const EnvironmentData b = sample(spec, iv, 1000, 99);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);
  const EnvironmentData c = sample(spec, iv, 1000, 100);
  CHECK(a.x != c.x);
}

TEST_CASE("sample validates preconditions") {
  const ScmSpec spec = intro_example_spec(true);
  CHECK_THROWS_AS(sample(spec, {}, 0, 1), Precondition);
  Intervention bad_scale;
  bad_scale.scales["E_X1"] = 0.0;
  CHECK_THROWS_AS(sample(spec, bad_scale, 10, 1), Precondition);
  Intervention unknown;
  unknown.shifts["nope"] = 1.0;
  CHECK_THROWS_AS(sample(spec, unknown, 10, 1), UnknownName);
}

TEST_CASE("analytic moments match hand-propagated covariances") {
  const ScmSpec spec = intro_example_spec(true);
  const Moments m = analytic_moments(spec, {});
  const int x2 = m.index_of("X2");
  const int y = m.index_of("Y");
  const int x1 = m.index_of("X1");
  // X2 = -H + E_X2, Y = 2H + E_X2 + E_Y, X1 = H + 2E_X2 + E_Y + E_X1
  CHECK(m.cov(x2, x2) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(m.cov(x2, y) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(m.cov(x1, x1) == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(m.cov(x1, y) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(m.mean.isZero(1e-14));
}

TEST_CASE("analytic moments agree with a Monte Carlo oracle under interventions") {
  const ScmSpec spec = intro_example_spec(true);
  Intervention iv;
  iv.scales["E_X2"] = 2.0;
  iv.shifts["E_Y"] = 0.7;

  const Moments m = analytic_moments(spec, iv);
  // Var(X2) = Var(H) + 4 Var(E_X2) = 5 once E_X2 is scaled by 2
  CHECK(m.cov(m.index_of("X2"), m.index_of("X2")) == doctest::Approx(5.0).epsilon(1e-12));

  const int n = 1000000;
  const EnvironmentData env = sample(spec, iv, n, 7);
  for (const auto& [name, col] : {std::pair<std::string, int>{"X1", 0}, {"X2", 1}}) {
    const double emp_mean = env.x.col(col).mean();
    const double emp_var =
        (env.x.col(col).array() - emp_mean).square().sum() / n;
    const int idx = m.index_of(name);
    CHECK(emp_mean == doctest::Approx(m.mean[idx]).epsilon(0.01).scale(1.0));
    CHECK(emp_var == doctest::Approx(m.cov(idx, idx)).epsilon(0.01));
  }
  const double emp_cov_xy =
      ((env.x.col(1).array() - env.x.col(1).mean()) * (env.y.array() - env.y.mean())).sum() / n;
  CHECK(emp_cov_xy == doctest::Approx(m.cov(m.index_of("X2"), m.index_of("Y"))).epsilon(0.01));
}

TEST_CASE("zero-variance exogenous gives a zero covariance matrix") {
  ScmSpec spec;
  spec.exogenous = {{"E_X", 0.0, 0.0}, {"E_Y", 0.0, 0.0}};
  spec.equations = {{"X", {}, "E_X"}, {"Y", {{"X", 2.0}}, "E_Y"}};
  spec.roles = {{"X", Role::observed}, {"Y", Role::target}};
  const Moments m = analytic_moments(spec, {});
  CHECK(m.cov.isZero(0.0));
}

TEST_CASE("intervention locality: only descendants move") {
  const ScmSpec spec = intro_example_spec(true);
  Intervention iv;
  iv.shifts["E_X1"] = 3.0;  // X1 is a sink: nothing else descends from E_X1
  const Moments base = analytic_moments(spec, {});
  const Moments shifted = analytic_moments(spec, iv);
  for (const auto& name : {"H", "X2", "Y"}) {
    const int i = base.index_of(name);
    CHECK(base.mean[i] == shifted.mean[i]);
    CHECK(base.cov(i, i) == shifted.cov(i, i));
  }
  CHECK(shifted.mean[base.index_of("X1")] == doctest::Approx(3.0));
}

TEST_CASE("population OLS in the unconfounded variant is still biased (collider)") {
  const ScmSpec spec = intro_example_spec(false);
  const LinearPredictor ols = population_ols(spec, {});
  // hand solve: Cov(X,X) = [[6,2],[2,1]], Cov(X,y) = (3,1) -> b = (0.5, 0)
  CHECK(ols.coef[0] == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(ols.coef[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-10));
  CHECK(std::abs(ols.coef[0] - 0.0) > 0.1);  // != causal (0,1)
  CHECK(std::abs(ols.coef[1] - 1.0) > 0.1);

  // cross-check against empirical OLS on 10^6 samples
  const EnvironmentData env = sample(spec, {}, 1000000, 11);
  const Eigen::VectorXd emp = empirical_ols(env);
  CHECK(emp[0] == doctest::Approx(ols.coef[0]).epsilon(0.01));
  CHECK(std::abs(emp[1] - ols.coef[1]) < 0.01);
}

TEST_CASE("population OLS recovers the coefficient of a single clean cause") {
  ScmSpec spec;
  spec.exogenous = {{"E_X", 0.0, 1.0}, {"E_Y", 0.0, 1.0}};
  spec.equations = {{"X", {}, "E_X"}, {"Y", {{"X", -2.5}}, "E_Y"}};
  spec.roles = {{"X", Role::observed}, {"Y", Role::target}};
  const LinearPredictor ols = population_ols(spec, {});
  CHECK(ols.coef[0] == doctest::Approx(-2.5).epsilon(1e-12));
  CHECK(ols.intercept == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("duplicated feature column raises SingularCovariance") {
  ScmSpec spec;
  spec.exogenous = {{"E_X", 0.0, 1.0}, {"E_0", 0.0, 0.0}, {"E_Y", 0.0, 1.0}};
  spec.equations = {{"X", {}, "E_X"},
                    {"X_copy", {{"X", 1.0}}, "E_0"},
                    {"Y", {{"X", 1.0}}, "E_Y"}};
  spec.roles = {{"X", Role::observed}, {"X_copy", Role::observed}, {"Y", Role::target}};
  CHECK_THROWS_AS(population_ols(spec, {}), SingularCovariance);
}

TEST_CASE("pooled population OLS matches the hand-derived mixture solution") {
  const ScmSpec spec = intro_example_spec(true);
  Intervention sigma2;
  sigma2.scales["E_X1"] = std::sqrt(2.0);
  sigma2.scales["E_X2"] = std::sqrt(2.0);
  const LinearPredictor pooled = pooled_population_ols(spec, {{}, sigma2});
  // mixture moments: Cov(X,X) = [[9.5, 2], [2, 2.5]], Cov(X,y) = (6, -0.5)
  CHECK(pooled.coef[0] == doctest::Approx(16.0 / 19.75).epsilon(1e-12));
  CHECK(pooled.coef[1] == doctest::Approx(-16.75 / 19.75).epsilon(1e-12));
}

TEST_CASE("population MSE matches a Monte Carlo estimate") {
  const ScmSpec spec = intro_example_spec(true);
  LinearPredictor causal;
  causal.coef = Eigen::VectorXd::Zero(2);
  causal.coef[1] = 1.0;
  causal.feature_names = {"X1", "X2"};
  // residual 3H + E_Y: MSE = 10
  CHECK(population_mse(spec, {}, causal) == doctest::Approx(10.0).epsilon(1e-12));
  const EnvironmentData env = sample(spec, {}, 500000, 3);
  const double emp =
      (env.y - env.x * causal.coef).squaredNorm() / static_cast<double>(env.y.size());
  CHECK(emp == doctest::Approx(10.0).epsilon(0.02));
}

TEST_CASE("scm TOML serialization round-trips") {
  const ScmSpec spec = intro_example_spec(true);
  const ScmSpec back = scm_from_toml(scm_to_toml(spec));
  CHECK(back == spec);

  const std::string text = toml::serialize(scm_to_toml(spec));
  const ScmSpec reparsed = scm_from_toml(toml::parse(text));
  CHECK(reparsed == spec);
}

TEST_CASE("environment CSV export has feature headers plus y") {
  const ScmSpec spec = intro_example_spec(true);
  const EnvironmentData env = sample(spec, {}, 5, 1);
  std::ostringstream os;
  environment_to_csv(env, os);
  std::istringstream is(os.str());
  std::string header;
  std::getline(is, header);
  CHECK(header.find("X1,X2,y") != std::string::npos);
  int rows = 0;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 5);
}

TEST_CASE("empirical moments of 1e6 samples track analytic moments within 3 SE") {
  // grid of interventions over both variants of the built-in example
  std::vector<Intervention> grid(3);
  grid[1].shifts["E_X2"] = 1.5;
  grid[1].scales["E_X1"] = 2.0;
  grid[2].shifts["E_H"] = 1.0;
  grid[2].scales["E_Y"] = 0.5;

  const int n = 1000000;
  std::uint64_t seed = 2100;
  for (const bool confounded : {true, false}) {
    const ScmSpec spec = intro_example_spec(confounded);
    for (const auto& iv : grid) {
      const Moments m = analytic_moments(spec, iv);
      const EnvironmentData env = sample(spec, iv, n, seed++);
      Eigen::MatrixXd cols(n, 3);
      cols.col(0) = env.x.col(0);
      cols.col(1) = env.x.col(1);
      cols.col(2) = env.y;
      const int idx[3] = {m.index_of("X1"), m.index_of("X2"), m.index_of("Y")};
      for (int a = 0; a < 3; ++a) {
        const double mean = cols.col(a).mean();
        const double sd = std::sqrt((cols.col(a).array() - mean).square().sum() / (n - 1));
        CHECK(std::abs(mean - m.mean[idx[a]]) < 3.0 * sd / std::sqrt(double(n)));
        for (int b = 0; b <= a; ++b) {
          const Eigen::ArrayXd prod =
              (cols.col(a).array() - mean) * (cols.col(b).array() - cols.col(b).mean());
          const double cov = prod.sum() / n;
          const double se = std::sqrt((prod - cov).square().sum() / (n - 1.0) / n);
          CHECK(std::abs(cov - m.cov(idx[a], idx[b])) < 3.0 * se);
        }
      }
    }
  }
}
