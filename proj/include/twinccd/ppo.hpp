#pragma once

// Clipped-surrogate co-design training: rollouts, advantage estimation, the
// joint loss over policy, value and suspension design, and the epoch loop
// with best-so-far tracking and patience.

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "twinccd/autodiff.hpp"
#include "twinccd/env.hpp"
#include "twinccd/nn.hpp"
#include "twinccd/random.hpp"

namespace twinccd {

struct PpoConfig {
  double gamma = 0.99;
  double lambda_gae = 0.95;
  double clip_eps = 0.2;
  double c_v = 0.5;
  int rollout_len = 1000;
  int opt_epochs = 10;  // passes over each batch
  int minibatch = 256;
  int max_epochs = 2000;
  int patience = 100;
  double lr_net = 3e-4;
  double lr_design = 1e-3;
  bool train_design = true;
  // Weight of the differentiable-replay term on the design; 0 disables it.
  double dyn_coef = 0.1;
  int dyn_horizon = 32;
  // Abort when more than this fraction of rollouts diverged (checked after
  // min_epochs_for_abort epochs).
  double divergence_abort_fraction = 0.5;
  int min_epochs_for_abort = 10;
  // Returned agent: best-so-far (true) or the last one (false).
  bool return_best = true;

  void validate() const;
};

struct Trajectory {
  ad::Matrix obs;      // n x 11
  ad::Matrix actions;  // n x 4, normalised units
  ad::Matrix states;   // n x 14, state before each action
  std::vector<Action> forces;
  std::vector<ReplayStep> replay;
  Eigen::VectorXd log_probs;
  Eigen::VectorXd rewards;
  Eigen::VectorXd comfort;
  Eigen::VectorXd body_accel;  // heave acceleration per step
  bool diverged = false;
  std::size_t size() const { return static_cast<std::size_t>(rewards.size()); }
  double total_reward() const { return rewards.sum(); }
  double mean_abs_force() const;
};

// Runs up to `len` steps. With deterministic = true the policy mean is
// applied and log_probs hold the density of the mean. Divergence truncates.
Trajectory rollout(Environment& env, const Agent& agent, std::size_t len, Rng& rng, bool deterministic = false);

struct GaeResult {
  Eigen::VectorXd advantages;  // raw, not normalised
  Eigen::VectorXd returns;     // value targets: advantages + values
};

// bootstrap is the value after the last step (0 on truncation).
GaeResult compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values, double gamma, double lambda,
                      double bootstrap = 0.0);
Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& adv);
Eigen::VectorXd discounted_returns(const Eigen::VectorXd& rewards, double gamma);

struct PpoBatch {
  ad::Matrix obs;
  ad::Matrix actions;
  Eigen::VectorXd old_log_probs;
  Eigen::VectorXd advantages;     // normalised
  Eigen::VectorXd value_targets;  // return units
};

// Replay-return term: value and gradient with respect to the normalised
// design leaf (k_s / k_mid, c_s / c_mid).
struct DynamicsTerm {
  double value = 0.0;
  Eigen::RowVector2d grad = Eigen::RowVector2d::Zero();
};

// -coef * R(p) / (horizon * reward_scale) for the stretch [start, start + horizon)
// of a trajectory, where R is the replayed return.
DynamicsTerm dynamics_term(const Trajectory& traj, std::size_t start, std::size_t horizon, const Plant& plant,
                           const Agent& agent, const RewardWeights& w, double dt, double coef, double reward_scale);

struct LossTerms {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double dynamics = 0.0;
};

// Records the joint loss on `tape` and returns its node. Gradients reach
// the policy, value and design leaves of `agent` on backward().
ad::Var ppo_loss(ad::Tape& tape, Agent& agent, const PpoBatch& batch, const PpoConfig& cfg,
                 const DynamicsTerm* dyn = nullptr, LossTerms* terms = nullptr);

struct EpochLog {
  int epoch = 0;
  double episode_return = 0.0;
  double mean_reward = 0.0;
  double best_return = 0.0;
  double k_s = 0.0;
  double c_s = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double dynamics_loss = 0.0;
  double mean_abs_u = 0.0;
  double rms_comfort = 0.0;
  int steps = 0;
  bool diverged = false;
  bool update_skipped = false;
};

struct TrainingRecord {
  std::vector<EpochLog> epochs;
  double best_return = 0.0;
  int best_epoch = -1;
  std::string stop_reason;
};

// Thrown when training cannot continue (persistent divergence).
struct TrainingAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  Agent agent;
  TrainingRecord record;
};

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train_ccd(const Agent& initial, Environment& env, const PpoConfig& cfg, Rng& rng,
                      const EpochCallback& on_epoch = {});

void write_training_csv(const std::filesystem::path& path, const TrainingRecord& rec);

}  // namespace twinccd
