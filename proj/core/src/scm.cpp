#include "dirmlab/scm.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>
#include <unordered_map>

#include "dirmlab/csv.hpp"
#include "dirmlab/rng.hpp"

namespace dirmlab {

namespace {

Role role_from_string(const std::string& s) {
  if (s == "observed") return Role::observed;
  if (s == "hidden") return Role::hidden;
  if (s == "target") return Role::target;
  throw ValidationError("roles", "unknown role: " + s);
}

std::string role_to_string(Role r) {
  switch (r) {
    case Role::observed: return "observed";
    case Role::hidden: return "hidden";
    case Role::target: return "target";
  }
  return "";
}

}  // namespace

std::vector<std::string> validate_and_order(const ScmSpec& spec) {
  std::set<std::string> exo_names;
  for (const auto& e : spec.exogenous) {
    if (!exo_names.insert(e.name).second)
      throw Precondition("duplicate exogenous name: " + e.name);
    if (!(e.variance >= 0.0))
      throw Precondition("negative variance for exogenous " + e.name);
  }

  std::unordered_map<std::string, std::size_t> eq_index;
  for (std::size_t i = 0; i < spec.equations.size(); ++i) {
    const auto& eq = spec.equations[i];
    if (!eq_index.emplace(eq.target, i).second)
      throw Precondition("duplicate equation for " + eq.target);
  }
  for (const auto& eq : spec.equations) {
    if (eq.parents.count(eq.target))
      throw CyclicGraph("self-loop on " + eq.target);
    for (const auto& [p, c] : eq.parents) {
      (void)c;
      if (!eq_index.count(p))
        throw UnknownName("equation for " + eq.target + " references undeclared variable " + p);
    }
    if (!exo_names.count(eq.exogenous_source))
      throw UnknownName("equation for " + eq.target + " references undeclared exogenous " +
                        eq.exogenous_source);
  }

  int target_count = 0;
  for (const auto& [name, role] : spec.roles) {
    if (!eq_index.count(name)) throw UnknownName("role for undeclared variable " + name);
    if (role == Role::target) ++target_count;
  }
  for (const auto& eq : spec.equations) {
    if (!spec.roles.count(eq.target)) throw Precondition("missing role for " + eq.target);
  }
  if (!spec.equations.empty() && target_count != 1)
    throw Precondition("exactly one variable must have role target");

  // Kahn's algorithm; ties broken by declaration order for determinism.
  std::vector<int> indegree(spec.equations.size(), 0);
  std::vector<std::vector<std::size_t>> children(spec.equations.size());
  for (std::size_t i = 0; i < spec.equations.size(); ++i) {
    for (const auto& [p, c] : spec.equations[i].parents) {
      (void)c;
      children[eq_index.at(p)].push_back(i);
      ++indegree[i];
    }
  }
  std::deque<std::size_t> ready;
  for (std::size_t i = 0; i < spec.equations.size(); ++i)
    if (indegree[i] == 0) ready.push_back(i);
  std::vector<std::string> order;
  while (!ready.empty()) {
    const std::size_t i = ready.front();
    ready.pop_front();
    order.push_back(spec.equations[i].target);
    for (std::size_t ch : children[i])
      if (--indegree[ch] == 0) ready.push_back(ch);
  }
  if (order.size() != spec.equations.size())
    throw CyclicGraph("structural equations contain a cycle");
  return order;
}

void validate_intervention(const ScmSpec& spec, const Intervention& iv) {
  std::set<std::string> exo_names;
  for (const auto& e : spec.exogenous) exo_names.insert(e.name);
  for (const auto& [name, shift] : iv.shifts) {
    (void)shift;
    if (!exo_names.count(name)) throw UnknownName("intervention shift on undeclared " + name);
  }
  for (const auto& [name, scale] : iv.scales) {
    if (!exo_names.count(name)) throw UnknownName("intervention scale on undeclared " + name);
    if (!(scale > 0.0)) throw Precondition("non-positive scale for " + name);
  }
}

std::vector<std::string> observed_features(const ScmSpec& spec) {
  std::vector<std::string> out;
  for (const auto& [name, role] : spec.roles)
    if (role == Role::observed) out.push_back(name);
  std::sort(out.begin(), out.end());
  return out;
}

std::string target_name(const ScmSpec& spec) {
  for (const auto& [name, role] : spec.roles)
    if (role == Role::target) return name;
  throw Precondition("spec has no target variable");
}

ScmSpec intro_example_spec(bool confounded) {
  ScmSpec spec;
  spec.exogenous = {
      {"E_H", 0.0, confounded ? 1.0 : 0.0},
      {"E_X2", 0.0, 1.0},
      {"E_Y", 0.0, 1.0},
      {"E_X1", 0.0, 1.0},
  };
  spec.equations = {
      {"H", {}, "E_H"},
      {"X2", {{"H", -1.0}}, "E_X2"},
      {"Y", {{"X2", 1.0}, {"H", 3.0}}, "E_Y"},
      {"X1", {{"Y", 1.0}, {"X2", 1.0}}, "E_X1"},
  };
  spec.roles = {
      {"H", Role::hidden},
      {"X1", Role::observed},
      {"X2", Role::observed},
      {"Y", Role::target},
  };
  return spec;
}

EnvironmentData sample(const ScmSpec& spec, const Intervention& iv, int n, std::uint64_t seed,
                       const std::string& env_id) {
  if (n < 1) throw Precondition("sample size must be >= 1");
  const std::vector<std::string> order = validate_and_order(spec);
  validate_intervention(spec, iv);

  // Exogenous draws, one substream per declared variable.
  std::unordered_map<std::string, Eigen::VectorXd> exo_values;
  for (std::size_t k = 0; k < spec.exogenous.size(); ++k) {
    const auto& e = spec.exogenous[k];
    double mean = e.mean;
    double sd = std::sqrt(e.variance);
    if (auto it = iv.shifts.find(e.name); it != iv.shifts.end()) mean += it->second;
    if (auto it = iv.scales.find(e.name); it != iv.scales.end()) sd *= it->second;
    SplitMix64 gen(SplitMix64::mix(seed, k));
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = mean + sd * gen.normal();
    exo_values.emplace(e.name, std::move(v));
  }

  std::unordered_map<std::string, const StructuralEquation*> eq_by_target;
  for (const auto& eq : spec.equations) eq_by_target[eq.target] = &eq;

  std::unordered_map<std::string, Eigen::VectorXd> values;
  for (const auto& name : order) {
    const StructuralEquation& eq = *eq_by_target.at(name);
    Eigen::VectorXd v = exo_values.at(eq.exogenous_source);
    for (const auto& [p, c] : eq.parents) v += c * values.at(p);
    values.emplace(name, std::move(v));
  }

  EnvironmentData env;
  env.env_id = env_id;
  env.feature_names = observed_features(spec);
  env.x.resize(n, static_cast<Eigen::Index>(env.feature_names.size()));
  for (std::size_t j = 0; j < env.feature_names.size(); ++j)
    env.x.col(static_cast<Eigen::Index>(j)) = values.at(env.feature_names[j]);
  env.y = values.at(target_name(spec));
  if (!env.x.allFinite() || !env.y.allFinite())
    throw Precondition("sample produced non-finite values");
  return env;
}

int Moments::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw UnknownName("no such endogenous variable: " + name);
}

Moments analytic_moments(const ScmSpec& spec, const Intervention& iv) {
  const std::vector<std::string> order = validate_and_order(spec);
  validate_intervention(spec, iv);

  const std::size_t n_exo = spec.exogenous.size();
  Eigen::VectorXd exo_mean(n_exo);
  Eigen::VectorXd exo_var(n_exo);
  std::unordered_map<std::string, std::size_t> exo_index;
  for (std::size_t k = 0; k < n_exo; ++k) {
    const auto& e = spec.exogenous[k];
    exo_index[e.name] = k;
    double mean = e.mean;
    double sd = std::sqrt(e.variance);
    if (auto it = iv.shifts.find(e.name); it != iv.shifts.end()) mean += it->second;
    if (auto it = iv.scales.find(e.name); it != iv.scales.end()) sd *= it->second;
    exo_mean[static_cast<Eigen::Index>(k)] = mean;
    exo_var[static_cast<Eigen::Index>(k)] = sd * sd;
  }

  std::unordered_map<std::string, const StructuralEquation*> eq_by_target;
  for (const auto& eq : spec.equations) eq_by_target[eq.target] = &eq;

  // Loadings of each endogenous variable on the exogenous vector.
  std::unordered_map<std::string, Eigen::VectorXd> loading;
  for (const auto& name : order) {
    const StructuralEquation& eq = *eq_by_target.at(name);
    Eigen::VectorXd lam = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_exo));
    lam[static_cast<Eigen::Index>(exo_index.at(eq.exogenous_source))] += 1.0;
    for (const auto& [p, c] : eq.parents) lam += c * loading.at(p);
    loading.emplace(name, std::move(lam));
  }

  Moments m;
  m.names = order;
  const Eigen::Index d = static_cast<Eigen::Index>(order.size());
  m.mean.resize(d);
  m.cov.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const Eigen::VectorXd& li = loading.at(order[static_cast<std::size_t>(i)]);
    m.mean[i] = li.dot(exo_mean);
    for (Eigen::Index j = 0; j <= i; ++j) {
      const Eigen::VectorXd& lj = loading.at(order[static_cast<std::size_t>(j)]);
      const double cij = (li.array() * lj.array() * exo_var.array()).sum();
      m.cov(i, j) = cij;
      m.cov(j, i) = cij;
    }
  }
  return m;
}

namespace {

struct SecondMoments {
  std::vector<std::string> features;
  Eigen::MatrixXd cxx;  // Cov(X, X)
  Eigen::VectorXd cxy;  // Cov(X, y)
  Eigen::VectorXd mean_x;
  double mean_y = 0.0;
  double var_y = 0.0;
};

SecondMoments feature_moments(const ScmSpec& spec, const Moments& m) {
  SecondMoments s;
  s.features = observed_features(spec);
  const int t = m.index_of(target_name(spec));
  const Eigen::Index d = static_cast<Eigen::Index>(s.features.size());
  s.cxx.resize(d, d);
  s.cxy.resize(d);
  s.mean_x.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const int fi = m.index_of(s.features[static_cast<std::size_t>(i)]);
    s.mean_x[i] = m.mean[fi];
    s.cxy[i] = m.cov(fi, t);
    for (Eigen::Index j = 0; j < d; ++j)
      s.cxx(i, j) = m.cov(fi, m.index_of(s.features[static_cast<std::size_t>(j)]));
  }
  s.mean_y = m.mean[t];
  s.var_y = m.cov(t, t);
  return s;
}

LinearPredictor solve_ols(const SecondMoments& s) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(s.cxx);
  lu.setThreshold(1e-10);
  if (!lu.isInvertible())
    throw SingularCovariance("feature covariance matrix is not invertible");
  LinearPredictor p;
  p.coef = lu.solve(s.cxy);
  p.intercept = s.mean_y - p.coef.dot(s.mean_x);
  p.feature_names = s.features;
  return p;
}

}  // namespace

LinearPredictor population_ols(const ScmSpec& spec, const Intervention& iv) {
  return solve_ols(feature_moments(spec, analytic_moments(spec, iv)));
}

LinearPredictor pooled_population_ols(const ScmSpec& spec, const std::vector<Intervention>& ivs) {
  if (ivs.empty()) throw Precondition("pooled OLS needs at least one environment");
  SecondMoments pooled;
  bool first = true;
  Eigen::MatrixXd exx;       // E[x x']
  Eigen::VectorXd exy;       // E[x y]
  double eyy = 0.0;          // E[y^2]
  for (const auto& iv : ivs) {
    SecondMoments s = feature_moments(spec, analytic_moments(spec, iv));
    const Eigen::MatrixXd m2 = s.cxx + s.mean_x * s.mean_x.transpose();
    const Eigen::VectorXd my = s.cxy + s.mean_x * s.mean_y;
    const double y2 = s.var_y + s.mean_y * s.mean_y;
    if (first) {
      pooled = s;
      exx = m2;
      exy = my;
      eyy = y2;
      pooled.mean_x = s.mean_x;
      pooled.mean_y = s.mean_y;
      first = false;
    } else {
      exx += m2;
      exy += my;
      eyy += y2;
      pooled.mean_x += s.mean_x;
      pooled.mean_y += s.mean_y;
    }
  }
  const double k = static_cast<double>(ivs.size());
  pooled.mean_x /= k;
  pooled.mean_y /= k;
  pooled.cxx = exx / k - pooled.mean_x * pooled.mean_x.transpose();
  pooled.cxy = exy / k - pooled.mean_x * pooled.mean_y;
  pooled.var_y = eyy / k - pooled.mean_y * pooled.mean_y;
  return solve_ols(pooled);
}

double population_mse(const ScmSpec& spec, const Intervention& iv, const LinearPredictor& predictor) {
  SecondMoments s = feature_moments(spec, analytic_moments(spec, iv));
  if (predictor.coef.size() != s.cxx.rows())
    throw DimensionMismatch("predictor dimension does not match observed features");
  const double bias = s.mean_y - predictor.coef.dot(s.mean_x) - predictor.intercept;
  const double var = s.var_y - 2.0 * predictor.coef.dot(s.cxy) +
                     predictor.coef.dot(s.cxx * predictor.coef);
  return var + bias * bias;
}

toml::Value scm_to_toml(const ScmSpec& spec) {
  toml::Value root{toml::Table{}};
  toml::Array exo;
  for (const auto& e : spec.exogenous) {
    toml::Value t{toml::Table{}};
    t["name"] = e.name;
    t["mean"] = e.mean;
    t["variance"] = e.variance;
    exo.push_back(std::move(t));
  }
  root["exogenous"] = toml::Value(std::move(exo));
  toml::Array eqs;
  for (const auto& eq : spec.equations) {
    toml::Value t{toml::Table{}};
    t["target"] = eq.target;
    t["exogenous"] = eq.exogenous_source;
    toml::Value parents{toml::Table{}};
    for (const auto& [p, c] : eq.parents) parents[p] = c;
    t["parents"] = std::move(parents);
    eqs.push_back(std::move(t));
  }
  root["equation"] = toml::Value(std::move(eqs));
  toml::Value roles{toml::Table{}};
  for (const auto& [name, role] : spec.roles) roles[name] = role_to_string(role);
  root["roles"] = std::move(roles);
  return root;
}

ScmSpec scm_from_toml(const toml::Value& root) {
  ScmSpec spec;
  if (const toml::Value* exo = root.find("exogenous")) {
    for (const auto& item : exo->as_array()) {
      ExogenousSpec e;
      e.name = item.at("name").as_string();
      if (const auto* v = item.find("mean")) e.mean = v->as_double();
      if (const auto* v = item.find("variance")) e.variance = v->as_double();
      spec.exogenous.push_back(std::move(e));
    }
  }
  if (const toml::Value* eqs = root.find("equation")) {
    for (const auto& item : eqs->as_array()) {
      StructuralEquation eq;
      eq.target = item.at("target").as_string();
      eq.exogenous_source = item.at("exogenous").as_string();
      if (const auto* parents = item.find("parents")) {
        for (const auto& [p, c] : parents->as_table()) eq.parents[p] = c.as_double();
      }
      spec.equations.push_back(std::move(eq));
    }
  }
  if (const toml::Value* roles = root.find("roles")) {
    for (const auto& [name, role] : roles->as_table())
      spec.roles[name] = role_from_string(role.as_string());
  }
  validate_and_order(spec);
  return spec;
}

void save_scm(const std::string& path, const ScmSpec& spec) {
  toml::write_file(path, scm_to_toml(spec));
}

ScmSpec load_scm(const std::string& path) { return scm_from_toml(toml::parse_file(path)); }

void environment_to_csv(const EnvironmentData& env, std::ostream& os) {
  std::vector<std::string> header = env.feature_names;
  header.push_back("y");
  csv::write_row(os, header);
  for (Eigen::Index i = 0; i < env.y.size(); ++i) {
    std::vector<std::string> row;
    row.reserve(header.size());
    for (Eigen::Index j = 0; j < env.x.cols(); ++j) row.push_back(csv::num(env.x(i, j)));
    row.push_back(csv::num(env.y[i]));
    csv::write_row(os, row);
  }
}

}  // namespace dirmlab
