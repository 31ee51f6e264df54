#pragma once

// Finite-difference check of the joint PPO loss on a 4-wide toy agent.
// Shared by the unit tests and the acceptance binary.

#include <array>
#include <cmath>
#include <memory>

#include "twinccd/env.hpp"
#include "twinccd/ppo.hpp"

namespace twinccd::check {

inline std::shared_ptr<DisturbanceSeries> wavy_series(std::size_t n) {
  auto s = std::make_shared<DisturbanceSeries>();
  s->dt = 0.01;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * 0.01;
    s->drive.push_back({6.0 + 0.5 * t, 0.5, 0.04 * std::sin(0.7 * t)});
    WheelDisturbance w;
    for (int i = 0; i < 4; ++i) {
      w.z_r(i) = 0.02 * std::sin(4.0 * t + i);
      w.zdot_r(i) = 0.08 * std::cos(4.0 * t + i);
    }
    s->road.push_back(w);
  }
  return s;
}

inline AgentConfig toy_agent_config() {
  AgentConfig c;
  c.policy.hidden = {4, 4};
  c.value.hidden = {4, 4};
  return c;
}

struct GradientErrors {
  double policy = 0.0;  // mean and std networks
  double value = 0.0;
  double k_s = 0.0;
  double c_s = 0.0;
  double worst() const { return std::max({policy, value, k_s, c_s}); }
};

// Loss = clipped surrogate + value term + replay term, every piece evaluated
// at the current parameters (the replay term is recomputed for each design).
inline GradientErrors ppo_gradient_errors(std::uint64_t seed = 11) {
  Rng rng(seed);
  Agent agent(toy_agent_config(), DesignBounds{}, {26000.0, 2100.0}, rng);
  // nonzero std weights so the std net's gradient is generic
  for (auto* p : agent.std_net().parameters())
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value(i) = rng.uniform(-0.3, 0.3);
  agent.set_value_scale(20.0);

  const std::size_t n = 48, horizon = 16, start = 8;
  ProfileEnv env(Plant::real(VehicleParams::nominal()), agent.design(), RewardWeights{}, wavy_series(200));
  env.reset(rng);
  const Trajectory traj = rollout(env, agent, n, rng);

  PpoConfig cfg;
  PpoBatch batch;
  batch.obs = traj.obs;
  batch.actions = traj.actions;
  // spread the ratios over both clip regions, away from the kinks
  batch.old_log_probs = traj.log_probs;
  for (Eigen::Index i = 0; i < batch.old_log_probs.size(); ++i) {
    double off = 0.0;
    do off = rng.uniform(-0.35, 0.35);
    while (std::abs(std::exp(-off) - 0.8) < 0.02 || std::abs(std::exp(-off) - 1.2) < 0.02 || std::abs(off) < 0.02);
    batch.old_log_probs(i) += off;
  }
  Eigen::VectorXd adv(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < adv.size(); ++i) adv(i) = rng.uniform(-1.5, 1.5);
  batch.advantages = adv;
  batch.value_targets = discounted_returns(traj.rewards, cfg.gamma);
  const double reward_scale = std::abs(traj.rewards.mean());

  auto loss_value = [&](Agent& a) {
    const DynamicsTerm d =
        dynamics_term(traj, start, horizon, env.plant(), a, env.weights(), env.dt(), cfg.dyn_coef, reward_scale);
    ad::Tape tape;
    return ppo_loss(tape, a, batch, cfg, &d).scalar();
  };

  auto params = agent.all_parameters();
  ad::zero_grad(params);
  {
    const DynamicsTerm d =
        dynamics_term(traj, start, horizon, env.plant(), agent, env.weights(), env.dt(), cfg.dyn_coef, reward_scale);
    ad::Tape tape;
    tape.backward(ppo_loss(tape, agent, batch, cfg, &d));
  }

  // Relative error over a group of (parameter, index) entries.
  auto group_error = [&](const std::vector<ad::Parameter*>& group, int only_index) {
    double diff2 = 0.0, fd2 = 0.0;
    for (auto* p : group) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        if (only_index >= 0 && i != only_index) continue;
        const double x0 = p->value(i);
        const double h = 1e-6 * std::max(1.0, std::abs(x0));
        p->value(i) = x0 + h;
        const double fp = loss_value(agent);
        p->value(i) = x0 - h;
        const double fm = loss_value(agent);
        p->value(i) = x0;
        const double fd = (fp - fm) / (2 * h);
        diff2 += (p->grad(i) - fd) * (p->grad(i) - fd);
        fd2 += fd * fd;
      }
    }
    return std::sqrt(diff2) / std::max(std::sqrt(fd2), 1e-12);
  };

  GradientErrors e;
  e.policy = group_error(agent.policy_parameters(), -1);
  e.value = group_error(agent.value_parameters(), -1);
  e.k_s = group_error({&agent.design_leaf()}, 0);
  e.c_s = group_error({&agent.design_leaf()}, 1);
  return e;
}

}  // namespace twinccd::check
