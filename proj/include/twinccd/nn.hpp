#pragma once

// Tanh multilayer perceptrons, the Adam optimizer, and the actor-critic
// agent whose inputs are the suspension design concatenated with the
// observation.

#include <Eigen/Dense>

#include <vector>

#include "twinccd/autodiff.hpp"
#include "twinccd/random.hpp"
#include "twinccd/vehicle.hpp"

namespace twinccd {

struct MlpConfig {
  int input = kDesignDim + kObsDim;
  std::vector<int> hidden{128, 128, 128};
  int output = kActionDim;
};

// Affine layers with tanh after every hidden layer and a linear output.
// Weights are stored input x output so a batch (one sample per row) maps as
// X W + b.
class Mlp {
 public:
  Mlp() = default;
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  Mlp(const MlpConfig& cfg, Rng& rng);
  // Every weight set to `weight`, every bias to `bias`.
  static Mlp constant(const MlpConfig& cfg, double weight, double bias);

  ad::Matrix forward(const ad::Matrix& x) const;
  ad::Var forward(ad::Tape& tape, const ad::Var& x);
  // Post-tanh activations of each hidden layer.
  std::vector<ad::Matrix> hidden_activations(const ad::Matrix& x) const;

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  const MlpConfig& config() const { return cfg_; }
  std::size_t layers() const { return weights_.size(); }
  ad::Parameter& weight(std::size_t i) { return weights_[i]; }
  ad::Parameter& bias(std::size_t i) { return biases_[i]; }

 private:
  void check_input(Eigen::Index cols) const;
  MlpConfig cfg_;
  std::vector<ad::Parameter> weights_;
  std::vector<ad::Parameter> biases_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over an ordered parameter list; moments are matched by position.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  // Returns false and leaves parameters untouched if any gradient is non-finite.
  bool step(const std::vector<ad::Parameter*>& params);

  const AdamConfig& config() const { return cfg_; }
  AdamConfig& config() { return cfg_; }
  long steps() const { return t_; }
  std::vector<ad::Matrix>& first_moments() { return m_; }
  std::vector<ad::Matrix>& second_moments() { return v_; }
  const std::vector<ad::Matrix>& first_moments() const { return m_; }
  const std::vector<ad::Matrix>& second_moments() const { return v_; }
  void set_steps(long t) { t_ = t; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<ad::Matrix> m_;
  std::vector<ad::Matrix> v_;
};

struct AgentConfig {
  MlpConfig policy{kDesignDim + kObsDim, {128, 128, 128}, kActionDim};
  MlpConfig value{kDesignDim + kObsDim, {128, 128, 128}, 1};
  // Network actions are in units of action_scale newtons.
  double action_scale = 100.0;
  // Initial weight and bias of every std-network layer.
  double std_init_weight = 0.0;
  double std_init_bias = 0.01;
};

struct PolicyOutput {
  ad::Matrix mean;  // n x 4, normalized action units
  ad::Matrix std;   // n x 4, normalized action units
};

struct ActionSample {
  Action force;             // N
  Eigen::Vector4d normalized;
  double log_prob = 0.0;    // density of `normalized`
};

// Diagonal-Gaussian policy (separate mean and std networks), value network,
// and the co-designed suspension as a trainable 1x2 leaf. The design leaf
// holds (k_s / k_mid, c_s / c_mid) with the midpoints of the design bounds.
class Agent {
 public:
  Agent() = default;
  Agent(const AgentConfig& cfg, const DesignBounds& bounds, const SuspensionDesign& design, Rng& rng);

  SuspensionDesign design() const;
  void set_design(const SuspensionDesign& d);
  void project_design();
  const DesignBounds& bounds() const { return bounds_; }

  // Inputs are scaled per component by obs_scale.
  const Observation& obs_scale() const { return obs_scale_; }
  void set_obs_scale(const Observation& s) { obs_scale_ = s; }
  double action_scale() const { return cfg_.action_scale; }
  double value_scale() const { return value_scale_; }
  void set_value_scale(double s) { value_scale_ = s; }
  const AgentConfig& config() const { return cfg_; }

  // n x 13 network input from a batch of observations (one per row).
  ad::Matrix network_input(const ad::Matrix& obs) const;
  ad::Var network_input(ad::Tape& tape, const ad::Var& design_leaf, const ad::Matrix& obs) const;

  PolicyOutput policy(const ad::Matrix& obs) const;
  ActionSample sample_action(const Observation& y, Rng& rng) const;
  Action mean_action(const Observation& y) const;
  // Value in return units (network output times value_scale).
  double value(const Observation& y) const;
  Eigen::VectorXd values(const ad::Matrix& obs) const;

  Mlp& mean_net() { return mean_net_; }
  Mlp& std_net() { return std_net_; }
  Mlp& value_net() { return value_net_; }
  const Mlp& mean_net() const { return mean_net_; }
  const Mlp& std_net() const { return std_net_; }
  const Mlp& value_net() const { return value_net_; }
  ad::Parameter& design_leaf() { return design_; }
  const ad::Parameter& design_leaf() const { return design_; }

  std::vector<ad::Parameter*> policy_parameters();
  std::vector<ad::Parameter*> value_parameters();
  std::vector<ad::Parameter*> all_parameters();

 private:
  AgentConfig cfg_;
  DesignBounds bounds_;
  Mlp mean_net_;
  Mlp std_net_;
  Mlp value_net_;
  ad::Parameter design_;
  Observation obs_scale_ = Observation::Ones();
  double value_scale_ = 1.0;
};

// Log-density of a diagonal Gaussian, row by row.
Eigen::VectorXd gaussian_log_prob(const ad::Matrix& x, const ad::Matrix& mean, const ad::Matrix& std);

// Positive map used on the std network output.
inline constexpr double kMinStd = 1e-6;

}  // namespace twinccd
