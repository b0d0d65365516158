#include "dirmlab/model.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "dirmlab/rng.hpp"

namespace dirmlab {

namespace {

Eigen::ArrayXXd elu(const Eigen::ArrayXXd& a) {
  return (a > 0.0).select(a, a.exp() - 1.0);
}

Eigen::ArrayXXd elu_prime(const Eigen::ArrayXXd& a) {
  return (a > 0.0).select(Eigen::ArrayXXd::Ones(a.rows(), a.cols()), a.exp());
}

Eigen::VectorXd sigmoid(const Eigen::VectorXd& s) {
  return s.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

double softplus(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

struct ForwardCache {
  std::vector<Eigen::MatrixXd> acts;  // acts[0] = x, acts[l] = ELU(pre[l-1])
  std::vector<Eigen::MatrixXd> pre;   // one per hidden layer
  Eigen::VectorXd score;
  Eigen::VectorXd pred;  // link applied
  Eigen::Index n() const { return score.size(); }
};

ForwardCache run_forward(const Model& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.input_dim)
    throw DimensionMismatch("input has " + std::to_string(x.cols()) + " columns, model expects " +
                            std::to_string(model.input_dim));
  ForwardCache c;
  c.acts.reserve(model.hidden.size() + 1);
  c.acts.push_back(x);
  for (const auto& layer : model.hidden) {
    Eigen::MatrixXd a = c.acts.back() * layer.w.transpose();
    a.rowwise() += layer.b.transpose();
    c.pre.push_back(a);
    c.acts.push_back(elu(a.array()).matrix());
  }
  c.score = c.acts.back() * model.head_w;
  c.score.array() += model.head_b;
  c.pred = model.link == Link::logistic ? sigmoid(c.score) : c.score;
  return c;
}

void check_labels(const Model& model, const EnvironmentData& env) {
  if (env.y.size() == 0) throw Precondition("environment is empty");
  if (env.x.rows() != env.y.size())
    throw DimensionMismatch("x and y row counts differ");
  if (model.link == Link::logistic) {
    for (Eigen::Index i = 0; i < env.y.size(); ++i)
      if (env.y[i] != 0.0 && env.y[i] != 1.0)
        throw LabelDomain("logistic link requires labels in {0,1}");
  }
}

double loss_from_cache(const Model& model, const ForwardCache& c, const Eigen::VectorXd& y) {
  const double n = static_cast<double>(c.n());
  if (model.link == Link::identity) return (c.score - y).squaredNorm() / n;
  double total = 0.0;
  for (Eigen::Index i = 0; i < c.n(); ++i) total += softplus(c.score[i]) - y[i] * c.score[i];
  return total / n;
}

// Per-sample d(loss)/d(score), already divided by n.
Eigen::VectorXd score_residual(const Model& model, const ForwardCache& c, const Eigen::VectorXd& y) {
  const double n = static_cast<double>(c.n());
  if (model.link == Link::identity) return 2.0 * (c.score - y) / n;
  return (c.pred - y) / n;
}

Eigen::VectorXd beta_grad_from_cache(const Model& model, const ForwardCache& c,
                                     const Eigen::VectorXd& y) {
  const Eigen::VectorXd r = score_residual(model, c, y);
  Eigen::VectorXd g(model.head_input_dim() + 1);
  g.head(model.head_input_dim()) = c.acts.back().transpose() * r;
  g[model.head_input_dim()] = r.sum();
  return g;
}

// Reverse pass through the φ-block. rho is the per-sample derivative of the
// scalar with respect to the score; direct_zl (optional) is an additional
// per-sample derivative with respect to the last hidden activation that does
// not go through the score.
Eigen::VectorXd phi_backward(const Model& model, const ForwardCache& c, const Eigen::VectorXd& rho,
                             const Eigen::MatrixXd* direct_zl) {
  const ParamLayout layout = layout_of(model);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(layout.phi_size);
  if (model.hidden.empty()) return grad;

  Eigen::MatrixXd delta = rho * model.head_w.transpose();
  if (direct_zl) delta += *direct_zl;

  Eigen::Index offset = layout.phi_size;
  for (std::size_t l = model.hidden.size(); l-- > 0;) {
    const AffineLayer& layer = model.hidden[l];
    const Eigen::MatrixXd dpre =
        (delta.array() * elu_prime(c.pre[l].array())).matrix();
    const Eigen::MatrixXd gw = dpre.transpose() * c.acts[l];
    const Eigen::VectorXd gb = dpre.colwise().sum();
    const Eigen::Index wsize = gw.size();
    const Eigen::Index bsize = gb.size();
    offset -= bsize;
    grad.segment(offset, bsize) = gb;
    offset -= wsize;
    // row-major flattening of the weight block
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gwr = gw;
    grad.segment(offset, wsize) = Eigen::Map<const Eigen::VectorXd>(gwr.data(), wsize);
    if (l > 0) delta = dpre * layer.w;
  }
  return grad;
}

// rho and direct terms for the mixed contraction d/dφ <g_beta, u>.
void beta_gradient_contraction_terms(const Model& model, const ForwardCache& c,
                                     const Eigen::VectorXd& y, const Eigen::VectorXd& u,
                                     Eigen::VectorXd& rho, Eigen::MatrixXd& direct) {
  const double n = static_cast<double>(c.n());
  const int d = model.head_input_dim();
  const Eigen::VectorXd u_w = u.head(d);
  const double u_b = u[d];
  const Eigen::VectorXd q = (c.acts.back() * u_w).array() + u_b;  // z'u_w + u_b
  if (model.link == Link::identity) {
    rho = 2.0 * q / n;
    direct = (2.0 / n) * (c.score - y) * u_w.transpose();
  } else {
    const Eigen::ArrayXd w = c.pred.array() * (1.0 - c.pred.array());
    rho = (w * q.array() / n).matrix();
    direct = (1.0 / n) * (c.pred - y) * u_w.transpose();
  }
}

}  // namespace

Model make_model(int input_dim, const std::vector<int>& hidden_widths, Link link,
                 std::uint64_t seed) {
  if (input_dim < 1) throw Precondition("input_dim must be >= 1");
  if (hidden_widths.size() > 2)
    throw Unsupported("at most 2 hidden layers are supported");
  Model m;
  m.input_dim = input_dim;
  m.link = link;
  int fan_in = input_dim;
  std::uint64_t stream = 0;
  for (int width : hidden_widths) {
    if (width < 1) throw Precondition("hidden width must be >= 1");
    SplitMix64 gen(SplitMix64::mix(seed, stream++));
    const double bound = std::sqrt(6.0 / (fan_in + width));
    AffineLayer layer;
    layer.w.resize(width, fan_in);
    for (Eigen::Index i = 0; i < layer.w.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.w.cols(); ++j)
        layer.w(i, j) = gen.uniform(-bound, bound);
    layer.b = Eigen::VectorXd::Zero(width);
    m.hidden.push_back(std::move(layer));
    fan_in = width;
  }
  SplitMix64 gen(SplitMix64::mix(seed, stream));
  const double bound = std::sqrt(6.0 / (fan_in + 1));
  m.head_w.resize(fan_in);
  for (Eigen::Index i = 0; i < m.head_w.size(); ++i) m.head_w[i] = gen.uniform(-bound, bound);
  m.head_b = 0.0;
  return m;
}

void validate_model(const Model& model) {
  int width = model.input_dim;
  if (width < 1) throw Precondition("input_dim must be >= 1");
  for (const auto& layer : model.hidden) {
    if (layer.w.cols() != width)
      throw DimensionMismatch("hidden layer input width mismatch");
    if (layer.b.size() != layer.w.rows())
      throw DimensionMismatch("hidden layer bias width mismatch");
    if (!layer.w.allFinite() || !layer.b.allFinite())
      throw Precondition("non-finite layer parameters");
    width = static_cast<int>(layer.w.rows());
  }
  if (model.head_w.size() != width) throw DimensionMismatch("head width mismatch");
  if (!model.head_w.allFinite() || !std::isfinite(model.head_b))
    throw Precondition("non-finite head parameters");
}

ParamLayout layout_of(const Model& model) {
  ParamLayout layout;
  layout.input_dim = model.input_dim;
  layout.link = model.link;
  layout.phi_size = 0;
  for (const auto& layer : model.hidden) {
    layout.hidden_widths.push_back(static_cast<int>(layer.w.rows()));
    layout.phi_size += layer.w.size() + layer.b.size();
  }
  layout.beta_size = model.head_w.size() + 1;
  return layout;
}

Eigen::VectorXd to_params(const Model& model) {
  const ParamLayout layout = layout_of(model);
  Eigen::VectorXd p(layout.total());
  Eigen::Index offset = 0;
  for (const auto& layer : model.hidden) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> wr = layer.w;
    p.segment(offset, layer.w.size()) = Eigen::Map<const Eigen::VectorXd>(wr.data(), layer.w.size());
    offset += layer.w.size();
    p.segment(offset, layer.b.size()) = layer.b;
    offset += layer.b.size();
  }
  p.segment(offset, model.head_w.size()) = model.head_w;
  offset += model.head_w.size();
  p[offset] = model.head_b;
  return p;
}

Model from_params(const ParamLayout& layout, const Eigen::VectorXd& params) {
  if (params.size() != layout.total())
    throw DimensionMismatch("parameter vector size does not match layout");
  Model m;
  m.input_dim = layout.input_dim;
  m.link = layout.link;
  Eigen::Index offset = 0;
  int fan_in = layout.input_dim;
  for (int width : layout.hidden_widths) {
    AffineLayer layer;
    layer.w.resize(width, fan_in);
    for (Eigen::Index i = 0; i < width; ++i)
      for (Eigen::Index j = 0; j < fan_in; ++j) layer.w(i, j) = params[offset++];
    layer.b.resize(width);
    for (Eigen::Index i = 0; i < width; ++i) layer.b[i] = params[offset++];
    m.hidden.push_back(std::move(layer));
    fan_in = width;
  }
  m.head_w.resize(fan_in);
  for (Eigen::Index i = 0; i < fan_in; ++i) m.head_w[i] = params[offset++];
  m.head_b = params[offset];
  return m;
}

Eigen::VectorXd forward(const Model& model, const Eigen::MatrixXd& x) {
  return run_forward(model, x).pred;
}

double loss(const Model& model, const EnvironmentData& env) {
  check_labels(model, env);
  return loss_from_cache(model, run_forward(model, env.x), env.y);
}

Eigen::VectorXd grad_beta_env(const Model& model, const EnvironmentData& env) {
  check_labels(model, env);
  return beta_grad_from_cache(model, run_forward(model, env.x), env.y);
}

LossGrads loss_with_grads(const Model& model, const EnvironmentData& env) {
  check_labels(model, env);
  const ForwardCache c = run_forward(model, env.x);
  LossGrads out;
  out.value = loss_from_cache(model, c, env.y);
  out.grad_beta = beta_grad_from_cache(model, c, env.y);
  const Eigen::VectorXd rho = score_residual(model, c, env.y);
  out.grad_phi = phi_backward(model, c, rho, nullptr);
  return out;
}

Eigen::VectorXd phi_grad_of_beta_gradient(const Model& model, const EnvironmentData& env,
                                          const Eigen::VectorXd& u) {
  check_labels(model, env);
  if (u.size() != model.head_input_dim() + 1)
    throw DimensionMismatch("contraction vector size mismatch");
  const ForwardCache c = run_forward(model, env.x);
  Eigen::VectorXd rho;
  Eigen::MatrixXd direct;
  beta_gradient_contraction_terms(model, c, env.y, u, rho, direct);
  return phi_backward(model, c, rho, &direct);
}

Eigen::VectorXd beta_hessian_vec(const Model& model, const EnvironmentData& env,
                                 const Eigen::VectorXd& u) {
  check_labels(model, env);
  if (u.size() != model.head_input_dim() + 1)
    throw DimensionMismatch("contraction vector size mismatch");
  const ForwardCache c = run_forward(model, env.x);
  const double n = static_cast<double>(c.n());
  const int d = model.head_input_dim();
  Eigen::VectorXd q = (c.acts.back() * u.head(d)).array() + u[d];
  if (model.link == Link::logistic)
    q.array() *= c.pred.array() * (1.0 - c.pred.array());
  const double scale = model.link == Link::identity ? 2.0 / n : 1.0 / n;
  Eigen::VectorXd out(d + 1);
  out.head(d) = scale * (c.acts.back().transpose() * q);
  out[d] = scale * q.sum();
  return out;
}

double scale_derivative(const Model& model, const EnvironmentData& env) {
  check_labels(model, env);
  const ForwardCache c = run_forward(model, env.x);
  const double n = static_cast<double>(c.n());
  if (model.link == Link::identity)
    return 2.0 * (c.score - env.y).dot(c.score) / n;
  return (c.pred - env.y).dot(c.score) / n;
}

Eigen::VectorXd grad_beta_of_scale_derivative(const Model& model, const EnvironmentData& env) {
  check_labels(model, env);
  const ForwardCache c = run_forward(model, env.x);
  const double n = static_cast<double>(c.n());
  const int d = model.head_input_dim();
  Eigen::VectorXd coeff;
  if (model.link == Link::identity) {
    coeff = (2.0 / n) * (2.0 * c.score - env.y);
  } else {
    const Eigen::ArrayXd w = c.pred.array() * (1.0 - c.pred.array());
    coeff = ((c.pred - env.y).array() + w * c.score.array()).matrix() / n;
  }
  Eigen::VectorXd out(d + 1);
  out.head(d) = c.acts.back().transpose() * coeff;
  out[d] = coeff.sum();
  return out;
}

Eigen::VectorXd grad_phi_of_scale_derivative(const Model& model, const EnvironmentData& env) {
  check_labels(model, env);
  const ForwardCache c = run_forward(model, env.x);
  const double n = static_cast<double>(c.n());
  Eigen::VectorXd rho;
  if (model.link == Link::identity) {
    rho = (2.0 / n) * (2.0 * c.score - env.y);
  } else {
    const Eigen::ArrayXd w = c.pred.array() * (1.0 - c.pred.array());
    rho = ((c.pred - env.y).array() + w * c.score.array()).matrix() / n;
  }
  return phi_backward(model, c, rho, nullptr);
}

void save_model(const std::string& path, const Model& model) {
  validate_model(model);
  const ParamLayout layout = layout_of(model);
  const Eigen::VectorXd params = to_params(model);
  nlohmann::json doc;
  doc["format"] = "dirmlab-model";
  doc["version"] = 1;
  doc["input_dim"] = layout.input_dim;
  doc["hidden_widths"] = layout.hidden_widths;
  doc["link"] = model.link == Link::identity ? "identity" : "logistic";
  doc["params"] = std::vector<double>(params.data(), params.data() + params.size());
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file: " + path);
  out << doc.dump(2) << "\n";
}

Model load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid model JSON: ") + e.what(), 0, 0);
  }
  if (doc.value("format", "") != "dirmlab-model" || doc.value("version", 0) != 1)
    throw ValidationError("format", "unsupported model checkpoint format");
  ParamLayout layout;
  layout.input_dim = doc.at("input_dim").get<int>();
  layout.hidden_widths = doc.at("hidden_widths").get<std::vector<int>>();
  layout.link = doc.at("link").get<std::string>() == "logistic" ? Link::logistic : Link::identity;
  const auto values = doc.at("params").get<std::vector<double>>();
  int fan_in = layout.input_dim;
  layout.phi_size = 0;
  for (int w : layout.hidden_widths) {
    layout.phi_size += static_cast<Eigen::Index>(w) * fan_in + w;
    fan_in = w;
  }
  layout.beta_size = fan_in + 1;
  Eigen::VectorXd params =
      Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  Model m = from_params(layout, params);
  validate_model(m);
  return m;
}

}  // namespace dirmlab
