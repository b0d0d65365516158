#include <doctest.h>

#include <cmath>

#include "dirmlab/objectives.hpp"
#include "dirmlab/rng.hpp"
#include "dirmlab/scm.hpp"

using namespace dirmlab;

namespace {

Model linear_model(std::initializer_list<double> w, double b, Link link = Link::identity) {
  Model m;
  m.input_dim = static_cast<int>(w.size());
  m.head_w = Eigen::VectorXd(static_cast<Eigen::Index>(w.size()));
  Eigen::Index i = 0;
  for (double v : w) m.head_w[i++] = v;
  m.head_b = b;
  m.link = link;
  return m;
}

EnvironmentData env_from(std::initializer_list<double> xs, std::initializer_list<double> ys,
                         const std::string& id = "env") {
  EnvironmentData env;
  env.env_id = id;
  env.feature_names = {"f1"};
  env.x.resize(static_cast<Eigen::Index>(xs.size()), 1);
  env.y.resize(static_cast<Eigen::Index>(ys.size()));
  Eigen::Index i = 0;
  for (double v : xs) env.x(i++, 0) = v;
  i = 0;
  for (double v : ys) env.y[i++] = v;
  return env;
}

EnvironmentData random_env(int n, int d, SplitMix64& gen) {
  EnvironmentData env;
  env.env_id = "env";
  env.x.resize(n, d);
  env.y.resize(n);
  for (int j = 0; j < d; ++j) env.feature_names.push_back("f" + std::to_string(j + 1));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) env.x(i, j) = gen.normal();
    env.y[i] = gen.normal();
  }
  return env;
}

}  // namespace

TEST_CASE("dirm_penalty hand case: gradients (1,0) and (0,2) give 2.25") {
  // env1 yields beta-gradient (1, 0): residuals +-0.5 at z = 2 and 0
  const EnvironmentData e1 = env_from({2.0, 0.0}, {-0.5, 0.5}, "e1");
  // env2 yields beta-gradient (0, 2): residuals (1, 1) at z = 1 and -1
  const EnvironmentData e2 = env_from({1.0, -1.0}, {-1.0, -1.0}, "e2");
  const Model zero = linear_model({0.0}, 0.0);
  const Eigen::VectorXd g1 = grad_beta_env(zero, e1);
  const Eigen::VectorXd g2 = grad_beta_env(zero, e2);
  CHECK(g1[0] == 1.0);
  CHECK(g1[1] == 0.0);
  CHECK(g2[0] == 0.0);
  CHECK(g2[1] == 2.0);
  // squared norms (1, 4): population variance 2.25
  CHECK(dirm_penalty(zero, {e1, e2}) == doctest::Approx(2.25).epsilon(1e-15));
}

TEST_CASE("dirm_penalty degenerate cases") {
  SplitMix64 gen(3);
  const EnvironmentData e = random_env(50, 2, gen);
  const Model m = linear_model({0.2, -0.4}, 0.1);
  CHECK(dirm_penalty(m, {e}) == 0.0);                      // one environment
  CHECK(dirm_penalty(m, {e, e}) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("grid-mode penalty equals the mean of five explicit point evaluations") {
  SplitMix64 gen(4);
  const EnvironmentData e1 = random_env(60, 2, gen);
  const EnvironmentData e2 = random_env(60, 2, gen);
  const Model m = linear_model({0.7, -0.3}, 0.2);

  double mean = 0.0;
  for (double c : kGridScales) {
    Model scaled = m;
    scaled.head_w *= c;
    scaled.head_b *= c;
    mean += dirm_penalty(scaled, {e1, e2});
  }
  mean /= 5.0;
  CHECK(dirm_penalty_grid(m, {e1, e2}) == doctest::Approx(mean).epsilon(1e-14));

  // at beta = 0 the five grid points coincide with the point evaluation
  const Model zero = linear_model({0.0, 0.0}, 0.0);
  CHECK(dirm_penalty_grid(zero, {e1, e2}) ==
        doctest::Approx(dirm_penalty(zero, {e1, e2})).epsilon(1e-15));
  CHECK(dirm_penalty_grid(zero, {e1, e1}) == 0.0);
}

TEST_CASE("irm penalty vanishes at per-environment optima") {
  // model fits env perfectly -> zero derivative in the rescaling
  const EnvironmentData fit = env_from({1.0, 2.0}, {0.5, 1.0});
  const Model half = linear_model({0.5}, 0.0);
  CHECK(irm_penalty(half, {fit}) == 0.0);

  // all-zero predictor with zero-mean labels
  const EnvironmentData centered = env_from({1.0, -2.0}, {3.0, -3.0});
  const Model zero = linear_model({0.0}, 0.0);
  CHECK(irm_penalty(zero, {centered}) ==
        doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
}

TEST_CASE("irm penalty derivative matches a finite difference in the scale") {
  SplitMix64 gen(5);
  const EnvironmentData e = random_env(80, 2, gen);
  const Model m = linear_model({0.6, 0.3}, -0.2);
  const double d_analytic = scale_derivative(m, e);
  const double h = 1e-6;
  Model hi = m;
  hi.head_w *= 1.0 + h;
  hi.head_b *= 1.0 + h;
  Model lo = m;
  lo.head_w *= 1.0 - h;
  lo.head_b *= 1.0 - h;
  const double fd = (loss(hi, e) - loss(lo, e)) / (2.0 * h);
  CHECK(std::abs(d_analytic - fd) / (std::abs(fd) + 1e-12) < 1e-4);
  CHECK(irm_penalty(m, {e}) == doctest::Approx(d_analytic * d_analytic).epsilon(1e-14));
}

TEST_CASE("rex penalty is the population variance of environment losses") {
  // losses (0, 2): variance 1
  const EnvironmentData perfect = env_from({1.0}, {0.0});
  EnvironmentData off = env_from({1.0, 1.0}, {std::sqrt(2.0), -std::sqrt(2.0)});
  const Model zero = linear_model({0.0}, 0.0);
  CHECK(loss(zero, perfect) == 0.0);
  CHECK(loss(zero, off) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(rex_penalty(zero, {perfect, off}) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(rex_penalty(zero, {off, off, off}) == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
  CHECK(rex_penalty(zero, {off}) == 0.0);
}

TEST_CASE("dro_reweight follows the exponentiated-gradient rule") {
  Eigen::VectorXd w(2);
  w << 0.5, 0.5;
  Eigen::VectorXd equal(2);
  equal << 1.0, 1.0;
  CHECK(dro_reweight(w, equal, 1.0) == w);  // symmetry

  Eigen::VectorXd skew(2);
  skew << 0.0, 10.0;
  const Eigen::VectorXd heavy = dro_reweight(w, skew, 10.0);
  CHECK(heavy[1] > 0.999);

  Eigen::VectorXd losses(2);
  losses << 1.0, 2.0;
  const Eigen::VectorXd next = dro_reweight(w, losses, 1.0);
  const double e = std::exp(1.0);
  CHECK(next[0] == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-14));
  CHECK(next[1] == doctest::Approx(e / (1.0 + e)).epsilon(1e-14));

  Eigen::VectorXd off_simplex(2);
  off_simplex << 0.9, 0.3;
  CHECK_THROWS_AS(dro_reweight(off_simplex, losses, 1.0), Precondition);
  CHECK_THROWS_AS(dro_reweight(w, losses, 0.0), Precondition);
}

TEST_CASE("penalties are non-negative on random draws") {
  SplitMix64 gen(6);
  for (int trial = 0; trial < 25; ++trial) {
    const EnvironmentData e1 = random_env(30, 2, gen);
    const EnvironmentData e2 = random_env(30, 2, gen);
    const Model m = linear_model({gen.uniform(-2, 2), gen.uniform(-2, 2)}, gen.uniform(-1, 1));
    CHECK(dirm_penalty(m, {e1, e2}) >= 0.0);
    CHECK(dirm_penalty_grid(m, {e1, e2}) >= 0.0);
    CHECK(irm_penalty(m, {e1, e2}) >= 0.0);
    CHECK(rex_penalty(m, {e1, e2}) >= 0.0);
  }
}

TEST_CASE("total_objective reduces to ERM when lambda is zero") {
  SplitMix64 gen(7);
  const std::vector<EnvironmentData> envs = {random_env(40, 2, gen), random_env(40, 2, gen)};
  const Model m = linear_model({0.4, -0.1}, 0.05);

  ObjectiveSpec erm;
  const GradReport base = total_objective(m, envs, erm, 0);
  CHECK(base.value == base.mean_loss);

  for (const ObjectiveKind kind : {ObjectiveKind::dirm, ObjectiveKind::irm, ObjectiveKind::rex}) {
    ObjectiveSpec spec;
    spec.kind = kind;
    spec.lambda_final = 0.0;
    const GradReport r = total_objective(m, envs, spec, 0);
    CHECK(r.value == base.value);
    CHECK(r.grad_beta == base.grad_beta);
  }

  // before warmup the penalized objective equals ERM at the same parameters
  ObjectiveSpec warm;
  warm.kind = ObjectiveKind::dirm;
  warm.lambda_final = 50.0;
  warm.warmup_epochs = 10;
  const GradReport before = total_objective(m, envs, warm, 9);
  CHECK(before.value == base.value);
  CHECK(before.grad_beta == base.grad_beta);
  const GradReport after = total_objective(m, envs, warm, 10);
  CHECK(after.lambda == 50.0);
  CHECK(after.value > base.value);
}

TEST_CASE("total_objective routes the penalty gradient per the block rule") {
  SplitMix64 gen(8);
  const std::vector<EnvironmentData> envs = {random_env(40, 3, gen), random_env(40, 3, gen)};

  ObjectiveSpec dirm;
  dirm.kind = ObjectiveKind::dirm;
  dirm.lambda_final = 2.0;

  // hidden-layer model: beta sees only the mean loss
  const Model deep = make_model(3, {5}, Link::identity, 21);
  const GradReport deep_report = total_objective(deep, envs, dirm, 0);
  const GradReport deep_erm = total_objective(deep, envs, ObjectiveSpec{}, 0);
  CHECK(deep_report.grad_beta == deep_erm.grad_beta);
  CHECK(deep_report.grad_phi != deep_erm.grad_phi);

  // phi-identity model: the penalty flows to beta; check against finite differences
  const Model flat = make_model(3, {}, Link::identity, 22);
  const GradReport flat_report = total_objective(flat, envs, dirm, 0);
  const ParamLayout layout = layout_of(flat);
  const Eigen::VectorXd base = to_params(flat);
  for (Eigen::Index i = 0; i < layout.beta_size; ++i) {
    Eigen::VectorXd p = base;
    const double h = 1e-6;
    p[i] += h;
    const double hi = total_objective(from_params(layout, p), envs, dirm, 0).value;
    p[i] = base[i] - h;
    const double lo = total_objective(from_params(layout, p), envs, dirm, 0).value;
    const double fd = (hi - lo) / (2.0 * h);
    CHECK(std::abs(flat_report.grad_beta[i] - fd) / (std::abs(fd) + 1e-9) < 1e-4);
  }
}

TEST_CASE("total_objective weights environments under GroupDRO") {
  SplitMix64 gen(9);
  const std::vector<EnvironmentData> envs = {random_env(40, 2, gen), random_env(40, 2, gen)};
  const Model m = linear_model({0.4, -0.1}, 0.0);
  ObjectiveSpec dro;
  dro.kind = ObjectiveKind::group_dro;
  Eigen::VectorXd w(2);
  w << 0.9, 0.1;
  const GradReport r = total_objective(m, envs, dro, 0, &w);
  CHECK(r.value == doctest::Approx(0.9 * r.env_losses[0] + 0.1 * r.env_losses[1]));
}

TEST_CASE("affine_sup closed form and vertex oracle agree") {
  Eigen::VectorXd single(1);
  single << 2.0;
  CHECK(affine_sup(single, 0.0) == 2.0);
  CHECK(affine_sup(single, 7.0) == 2.0);

  Eigen::VectorXd two(2);
  two << 1.0, 3.0;
  CHECK(affine_sup(two, 0.0) == 3.0);
  CHECK(affine_sup(two, 0.5) == doctest::Approx(4.0).epsilon(1e-15));
  // vertex (-0.5, 1.5): -0.5*1 + 1.5*3 = 4
  CHECK(affine_sup_vertex_oracle(two, 0.5) == doctest::Approx(4.0).epsilon(1e-15));

  CHECK_THROWS_AS(affine_sup(two, -0.1), Precondition);
  CHECK_THROWS_AS(affine_sup(Eigen::VectorXd(), 0.0), Precondition);
}

TEST_CASE("affine_sup property: 1000 random draws match the vertex oracle") {
  SplitMix64 gen(10);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(gen.below(3));
    Eigen::VectorXd losses(n);
    for (int i = 0; i < n; ++i) losses[i] = gen.uniform(0.0, 10.0);
    const double eta = gen.uniform(0.0, 5.0);
    const double sup = affine_sup(losses, eta);
    const double oracle = affine_sup_vertex_oracle(losses, eta);
    CHECK(std::abs(sup - oracle) <= 1e-10 * std::max(1.0, std::abs(oracle)));

    // first identity in the derivation: sup - mean = (1 + n*eta) * (max - mean)
    const double mean = losses.mean();
    const double rhs = (1.0 + n * eta) * (losses.maxCoeff() - mean);
    CHECK(std::abs((sup - mean) - rhs) <= 1e-10 * std::max(1.0, std::abs(rhs)));

    // monotone in eta (larger feasible set)
    CHECK(affine_sup(losses, eta + 0.5) >= sup - 1e-12);
  }
}

TEST_CASE("moment_residual equals -1/2 of the MSE beta-gradient") {
  SplitMix64 gen(11);
  const EnvironmentData env = random_env(60, 2, gen);
  const Model m = linear_model({0.3, 0.5}, -0.1);
  const Eigen::VectorXd mr = moment_residual(m, env);
  const Eigen::VectorXd g = grad_beta_env(m, env);
  CHECK((mr + 0.5 * g).norm() == 0.0);

  // at the environment's own least-squares solution it vanishes
  Eigen::MatrixXd z(60, 3);
  z.leftCols(2) = env.x;
  z.col(2).setOnes();
  const Eigen::VectorXd ols = (z.transpose() * z).ldlt().solve(z.transpose() * env.y);
  const Model at_ols = linear_model({ols[0], ols[1]}, ols[2]);
  CHECK(moment_residual(at_ols, env).norm() < 1e-8);

  // y identically zero and beta zero
  EnvironmentData zero_env = env;
  zero_env.y.setZero();
  const Model zero = linear_model({0.0, 0.0}, 0.0);
  CHECK(moment_residual(zero, zero_env).norm() == 0.0);

  const Model logit = linear_model({0.1, 0.1}, 0.0, Link::logistic);
  CHECK_THROWS_AS(moment_residual(logit, env), Unsupported);
}

TEST_CASE("dirm penalty at the causal solution vanishes as n grows") {
  const ScmSpec spec = intro_example_spec(true);
  Intervention sigma2;
  sigma2.scales["E_X1"] = std::sqrt(2.0);
  sigma2.scales["E_X2"] = std::sqrt(2.0);
  const Model causal = linear_model({0.0, 1.0}, 0.0);

  // the empirical penalty at the causal head decays like O(1/n)
  std::vector<double> values;
  for (const int n : {1000, 10000, 100000}) {
    const std::vector<EnvironmentData> envs = {sample(spec, {}, n, 400 + n),
                                               sample(spec, sigma2, n, 500 + n)};
    values.push_back(dirm_penalty(causal, envs));
  }
  CHECK(values[1] < values[0] / 2.0);
  CHECK(values[2] < values[1] / 2.0);
  CHECK(values[2] < values[0] / 20.0);
}
