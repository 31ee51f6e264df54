#include "twinccd/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace twinccd {

namespace {

std::vector<int> layer_widths(const MlpConfig& cfg) {
  std::vector<int> w{cfg.input};
  w.insert(w.end(), cfg.hidden.begin(), cfg.hidden.end());
  w.push_back(cfg.output);
  return w;
}

}  // namespace

Mlp::Mlp(const MlpConfig& cfg, Rng& rng) : cfg_(cfg) {
  const auto widths = layer_widths(cfg);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l]));
    ad::Matrix w(widths[l], widths[l + 1]);
    ad::Matrix b(1, widths[l + 1]);
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = rng.uniform(-bound, bound);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = rng.uniform(-bound, bound);
    weights_.emplace_back("W" + std::to_string(l), std::move(w));
    biases_.emplace_back("b" + std::to_string(l), std::move(b));
  }
}

Mlp Mlp::constant(const MlpConfig& cfg, double weight, double bias) {
  Mlp m;
  m.cfg_ = cfg;
  const auto widths = layer_widths(cfg);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    m.weights_.emplace_back("W" + std::to_string(l), ad::Matrix::Constant(widths[l], widths[l + 1], weight));
    m.biases_.emplace_back("b" + std::to_string(l), ad::Matrix::Constant(1, widths[l + 1], bias));
  }
  return m;
}

void Mlp::check_input(Eigen::Index cols) const {
  if (cols != cfg_.input) {
    throw std::invalid_argument("network input width " + std::to_string(cols) + " does not match configured " +
                                std::to_string(cfg_.input));
  }
}

ad::Matrix Mlp::forward(const ad::Matrix& x) const {
  check_input(x.cols());
  ad::Matrix h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    ad::Matrix z = h * weights_[l].value;
    z.rowwise() += biases_[l].value.row(0);
    h = (l + 1 < weights_.size()) ? ad::Matrix(z.array().tanh()) : std::move(z);
  }
  return h;
}

std::vector<ad::Matrix> Mlp::hidden_activations(const ad::Matrix& x) const {
  check_input(x.cols());
  std::vector<ad::Matrix> out;
  ad::Matrix h = x;
  for (std::size_t l = 0; l + 1 < weights_.size(); ++l) {
    ad::Matrix z = h * weights_[l].value;
    z.rowwise() += biases_[l].value.row(0);
    h = z.array().tanh();
    out.push_back(h);
  }
  return out;
}

ad::Var Mlp::forward(ad::Tape& tape, const ad::Var& x) {
  check_input(x.cols());
  ad::Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    ad::Var z = ad::add(ad::matmul(h, tape.leaf(weights_[l])), tape.leaf(biases_[l]));
    h = (l + 1 < weights_.size()) ? ad::tanh(z) : z;
  }
  return h;
}

std::vector<ad::Parameter*> Mlp::parameters() {
  std::vector<ad::Parameter*> p;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    p.push_back(&weights_[l]);
    p.push_back(&biases_[l]);
  }
  return p;
}

std::vector<const ad::Parameter*> Mlp::parameters() const {
  std::vector<const ad::Parameter*> p;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    p.push_back(&weights_[l]);
    p.push_back(&biases_[l]);
  }
  return p;
}

bool Adam::step(const std::vector<ad::Parameter*>& params) {
  if (!ad::grads_finite(params)) return false;
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const auto* p : params) {
      m_.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
  return true;
}

Agent::Agent(const AgentConfig& cfg, const DesignBounds& bounds, const SuspensionDesign& design, Rng& rng)
    : cfg_(cfg), bounds_(bounds) {
  bounds_.validate();
  if (cfg.policy.input != kDesignDim + kObsDim || cfg.value.input != kDesignDim + kObsDim) {
    throw std::invalid_argument("agent networks take design + observation (13) inputs");
  }
  if (cfg.policy.output != kActionDim || cfg.value.output != 1) {
    throw std::invalid_argument("policy must output 4 actions and value 1 scalar");
  }
  mean_net_ = Mlp(cfg.policy, rng);
  std_net_ = Mlp::constant(cfg.policy, cfg.std_init_weight, cfg.std_init_bias);
  value_net_ = Mlp(cfg.value, rng);
  design_ = ad::Parameter("design", ad::Matrix(1, 2));
  set_design(design);
}

SuspensionDesign Agent::design() const {
  return {design_.value(0, 0) * bounds_.k_mid(), design_.value(0, 1) * bounds_.c_mid()};
}

void Agent::set_design(const SuspensionDesign& d) {
  const SuspensionDesign c = bounds_.clamp(d);
  design_.value(0, 0) = c.k_s / bounds_.k_mid();
  design_.value(0, 1) = c.c_s / bounds_.c_mid();
}

void Agent::project_design() { set_design(design()); }

ad::Matrix Agent::network_input(const ad::Matrix& obs) const {
  ad::Matrix in(obs.rows(), kDesignDim + kObsDim);
  in.leftCols(kDesignDim) = design_.value.replicate(obs.rows(), 1);
  in.rightCols(kObsDim) = obs * obs_scale_.cwiseInverse().asDiagonal();
  return in;
}

ad::Var Agent::network_input(ad::Tape& tape, const ad::Var& design_leaf, const ad::Matrix& obs) const {
  const ad::Var scaled = tape.constant(obs * obs_scale_.cwiseInverse().asDiagonal());
  return ad::concat_cols(ad::repeat_rows(design_leaf, obs.rows()), scaled);
}

PolicyOutput Agent::policy(const ad::Matrix& obs) const {
  const ad::Matrix in = network_input(obs);
  PolicyOutput out;
  out.mean = mean_net_.forward(in);
  out.std = ad::softplus(std_net_.forward(in)).array() + kMinStd;
  return out;
}

ActionSample Agent::sample_action(const Observation& y, Rng& rng) const {
  const PolicyOutput p = policy(y.transpose());
  ActionSample s;
  for (int i = 0; i < kActionDim; ++i) s.normalized(i) = p.mean(0, i) + p.std(0, i) * rng.normal();
  s.force = s.normalized * cfg_.action_scale;
  s.log_prob = gaussian_log_prob(s.normalized.transpose(), p.mean, p.std)(0);
  return s;
}

Action Agent::mean_action(const Observation& y) const {
  const ad::Matrix m = mean_net_.forward(network_input(y.transpose()));
  return m.row(0).transpose() * cfg_.action_scale;
}

double Agent::value(const Observation& y) const {
  return value_net_.forward(network_input(y.transpose()))(0, 0) * value_scale_;
}

Eigen::VectorXd Agent::values(const ad::Matrix& obs) const {
  return value_net_.forward(network_input(obs)).col(0) * value_scale_;
}

std::vector<ad::Parameter*> Agent::policy_parameters() {
  auto p = mean_net_.parameters();
  const auto s = std_net_.parameters();
  p.insert(p.end(), s.begin(), s.end());
  return p;
}

std::vector<ad::Parameter*> Agent::value_parameters() { return value_net_.parameters(); }

std::vector<ad::Parameter*> Agent::all_parameters() {
  auto p = policy_parameters();
  const auto v = value_parameters();
  p.insert(p.end(), v.begin(), v.end());
  p.push_back(&design_);
  return p;
}

Eigen::VectorXd gaussian_log_prob(const ad::Matrix& x, const ad::Matrix& mean, const ad::Matrix& std) {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const ad::Matrix z = (x - mean).cwiseQuotient(std);
  return -(0.5 * z.array().square() + std.array().log() + half_log_2pi).rowwise().sum();
}

}  // namespace twinccd
