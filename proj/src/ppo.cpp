#include "twinccd/ppo.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace twinccd {

void PpoConfig::validate() const {
  if (!(gamma > 0 && gamma <= 1)) throw std::invalid_argument("gamma must lie in (0, 1]");
  if (!(lambda_gae >= 0 && lambda_gae <= 1)) throw std::invalid_argument("lambda_gae must lie in [0, 1]");
  if (!(clip_eps > 0 && clip_eps < 1)) throw std::invalid_argument("clip_eps must lie in (0, 1)");
  if (!(c_v >= 0)) throw std::invalid_argument("c_v must be non-negative");
  if (rollout_len < 1 || opt_epochs < 1 || minibatch < 1 || max_epochs < 0) {
    throw std::invalid_argument("rollout_len, opt_epochs and minibatch must be positive");
  }
  if (patience < 1) throw std::invalid_argument("patience must be at least 1");
  if (!(lr_net > 0) || !(lr_design > 0)) throw std::invalid_argument("learning rates must be positive");
  if (!(dyn_coef >= 0) || dyn_horizon < 1) throw std::invalid_argument("invalid dynamics term settings");
  if (!(divergence_abort_fraction > 0 && divergence_abort_fraction <= 1)) {
    throw std::invalid_argument("divergence_abort_fraction must lie in (0, 1]");
  }
}

double Trajectory::mean_abs_force() const {
  if (forces.empty()) return 0.0;
  double s = 0.0;
  for (const auto& f : forces) s += f.cwiseAbs().sum();
  return s / (4.0 * static_cast<double>(forces.size()));
}

Trajectory rollout(Environment& env, const Agent& agent, std::size_t len, Rng& rng, bool deterministic) {
  if (len == 0) throw std::invalid_argument("rollout length must be at least 1");
  Trajectory t;
  const auto n = static_cast<Eigen::Index>(len);
  t.obs.resize(n, kObsDim);
  t.actions.resize(n, kActionDim);
  t.states.resize(n, kStateDim);
  t.log_probs.resize(n);
  t.rewards.resize(n);
  t.comfort.resize(n);
  t.body_accel.resize(n);
  t.forces.reserve(len);
  t.replay.reserve(len);
  Eigen::Index k = 0;
  for (; k < n; ++k) {
    const Observation y = env.observation();
    ActionSample a;
    if (deterministic) {
      const PolicyOutput p = agent.policy(y.transpose());
      a.normalized = p.mean.row(0).transpose();
      a.force = a.normalized * agent.action_scale();
      a.log_prob = gaussian_log_prob(p.mean, p.mean, p.std)(0);
    } else {
      a = agent.sample_action(y, rng);
    }
    t.obs.row(k) = y.transpose();
    t.states.row(k) = env.state().transpose();
    t.actions.row(k) = a.normalized.transpose();
    t.log_probs(k) = a.log_prob;
    const Action applied = env.actuator_limit().apply(a.force);
    const StepResult r = env.step(a.force, rng);
    t.forces.push_back(applied);
    t.replay.push_back(r.replay);
    t.rewards(k) = r.reward;
    t.comfort(k) = r.terms.comfort;
    t.body_accel(k) = r.body_accel(0);
    if (r.diverged) {
      t.diverged = true;
      // The diverging step itself carries no usable reward.
      break;
    }
  }
  t.obs.conservativeResize(k, kObsDim);
  t.actions.conservativeResize(k, kActionDim);
  t.states.conservativeResize(k, kStateDim);
  t.log_probs.conservativeResize(k);
  t.rewards.conservativeResize(k);
  t.comfort.conservativeResize(k);
  t.body_accel.conservativeResize(k);
  t.forces.resize(static_cast<std::size_t>(k));
  t.replay.resize(static_cast<std::size_t>(k));
  return t;
}

GaeResult compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values, double gamma, double lambda,
                      double bootstrap) {
  if (rewards.size() != values.size()) throw std::invalid_argument("rewards and values differ in length");
  const Eigen::Index n = rewards.size();
  GaeResult g;
  g.advantages.resize(n);
  double running = 0.0;
  double next_value = bootstrap;
  for (Eigen::Index k = n - 1; k >= 0; --k) {
    const double delta = rewards(k) + gamma * next_value - values(k);
    running = delta + gamma * lambda * running;
    g.advantages(k) = running;
    next_value = values(k);
  }
  g.returns = g.advantages + values;
  return g;
}

Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& adv) {
  if (adv.size() == 0) return adv;
  const double mean = adv.mean();
  const Eigen::VectorXd c = adv.array() - mean;
  const double sd = std::sqrt(c.squaredNorm() / static_cast<double>(adv.size()));
  return sd > 1e-12 ? Eigen::VectorXd(c / sd) : c;
}

Eigen::VectorXd discounted_returns(const Eigen::VectorXd& rewards, double gamma) {
  Eigen::VectorXd g(rewards.size());
  double running = 0.0;
  for (Eigen::Index k = rewards.size() - 1; k >= 0; --k) {
    running = rewards(k) + gamma * running;
    g(k) = running;
  }
  return g;
}

DynamicsTerm dynamics_term(const Trajectory& traj, std::size_t start, std::size_t horizon, const Plant& plant,
                           const Agent& agent, const RewardWeights& w, double dt, double coef, double reward_scale) {
  if (start + horizon > traj.size()) throw std::out_of_range("replay stretch exceeds the trajectory");
  const State x0 = traj.states.row(static_cast<Eigen::Index>(start)).transpose();
  const auto first = static_cast<std::ptrdiff_t>(start);
  const auto last = static_cast<std::ptrdiff_t>(start + horizon);
  const std::vector<Action> actions(traj.forces.begin() + first, traj.forces.begin() + last);
  const std::vector<ReplayStep> steps(traj.replay.begin() + first, traj.replay.begin() + last);
  const ReplayGradient g = replay_gradient(x0, actions, steps, plant, agent.design(), w, dt);
  const double k = -coef / (static_cast<double>(horizon) * reward_scale);
  DynamicsTerm d;
  d.value = k * g.value;
  d.grad(0) = k * g.d_k_s * agent.bounds().k_mid();
  d.grad(1) = k * g.d_c_s * agent.bounds().c_mid();
  return d;
}

ad::Var ppo_loss(ad::Tape& tape, Agent& agent, const PpoBatch& batch, const PpoConfig& cfg, const DynamicsTerm* dyn,
                 LossTerms* terms) {
  const Eigen::Index n = batch.obs.rows();
  if (n == 0) throw std::invalid_argument("empty batch");
  if (batch.actions.rows() != n || batch.old_log_probs.size() != n || batch.advantages.size() != n ||
      batch.value_targets.size() != n) {
    throw std::invalid_argument("batch fields differ in length");
  }
  const ad::Var design = tape.leaf(agent.design_leaf());
  const ad::Var in = agent.network_input(tape, design, batch.obs);
  const ad::Var mean = agent.mean_net().forward(tape, in);
  const ad::Var std = ad::shift(ad::softplus(agent.std_net().forward(tape, in)), kMinStd);
  const ad::Var z = ad::div(ad::sub(tape.constant(batch.actions), mean), std);
  const double norm_const = 0.5 * std::log(2.0 * std::numbers::pi) * static_cast<double>(kActionDim);
  const ad::Var log_prob =
      ad::shift(ad::row_sum(ad::sub(ad::scale(ad::square(z), -0.5), ad::log(std))), -norm_const);
  const ad::Var ratio = ad::exp(ad::sub(log_prob, tape.constant(batch.old_log_probs)));
  const ad::Var adv = tape.constant(batch.advantages);
  const ad::Var surr1 = ad::mul(ratio, adv);
  const ad::Var surr2 = ad::mul(ad::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), adv);
  const ad::Var policy = ad::neg(ad::mean(ad::minimum(surr1, surr2)));

  const ad::Var value = agent.value_net().forward(tape, in);
  const ad::Var target = tape.constant(batch.value_targets / agent.value_scale());
  const ad::Var value_loss = ad::mean(ad::smooth_l1(value, target));

  ad::Var loss = ad::add(policy, ad::scale(value_loss, cfg.c_v));
  double dyn_value = 0.0;
  if (dyn != nullptr) {
    loss = ad::add(loss, ad::external(design, dyn->value, dyn->grad));
    dyn_value = dyn->value;
  }
  if (terms != nullptr) {
    terms->policy = policy.scalar();
    terms->value = value_loss.scalar();
    terms->dynamics = dyn_value;
    terms->total = loss.scalar();
  }
  return loss;
}

namespace {

struct Snapshot {
  Agent agent;
  Adam net;
  Adam design;
};

PpoBatch gather(const ad::Matrix& obs, const ad::Matrix& actions, const Eigen::VectorXd& logp,
                const Eigen::VectorXd& adv, const Eigen::VectorXd& targets, const std::vector<std::size_t>& order,
                std::size_t start, std::size_t len) {
  std::vector<Eigen::Index> rows(len);
  for (std::size_t r = 0; r < len; ++r) rows[r] = static_cast<Eigen::Index>(order[start + r]);
  PpoBatch b;
  b.obs = obs(rows, Eigen::all);
  b.actions = actions(rows, Eigen::all);
  b.old_log_probs = logp(rows);
  b.advantages = adv(rows);
  b.value_targets = targets(rows);
  return b;
}

}  // namespace

TrainResult train_ccd(const Agent& initial, Environment& env, const PpoConfig& cfg, Rng& rng,
                      const EpochCallback& on_epoch) {
  cfg.validate();
  Agent agent = initial;
  env.set_design(agent.design());
  Adam net_opt(AdamConfig{cfg.lr_net});
  Adam design_opt(AdamConfig{cfg.lr_design});

  TrainResult result;
  result.agent = agent;
  TrainingRecord& rec = result.record;
  rec.best_return = -std::numeric_limits<double>::infinity();
  rec.stop_reason = "max_epochs";
  int since_best = 0;
  int diverged_rollouts = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    env.reset(rng);
    const Trajectory traj = rollout(env, agent, static_cast<std::size_t>(cfg.rollout_len), rng);
    EpochLog log;
    log.epoch = epoch;
    log.steps = static_cast<int>(traj.size());
    log.diverged = traj.diverged;
    log.k_s = agent.design().k_s;
    log.c_s = agent.design().c_s;
    log.episode_return = traj.total_reward();
    log.mean_reward = traj.size() ? log.episode_return / static_cast<double>(traj.size()) : 0.0;
    log.mean_abs_u = traj.mean_abs_force();
    log.rms_comfort = traj.size() ? std::sqrt(traj.comfort.squaredNorm() / static_cast<double>(traj.size())) : 0.0;
    if (traj.diverged) ++diverged_rollouts;

    if (epoch == 0 && traj.size() > 0 && std::isfinite(log.episode_return)) {
      // Frozen for the rest of the run so value targets keep one unit.
      const Eigen::VectorXd g = discounted_returns(traj.rewards, cfg.gamma);
      agent.set_value_scale(std::max(1.0, std::sqrt(g.squaredNorm() / static_cast<double>(g.size()))));
    }
    const Snapshot before{agent, net_opt, design_opt};
    if (traj.size() > 0 && std::isfinite(log.episode_return)) {
      const Eigen::VectorXd values = agent.values(traj.obs);
      const GaeResult gae = compute_gae(traj.rewards, values, cfg.gamma, cfg.lambda_gae, 0.0);
      const Eigen::VectorXd adv = normalize_advantages(gae.advantages);
      const double reward_scale = std::max(1e-8, std::abs(log.mean_reward));
      const std::size_t n = traj.size();
      const auto mb = static_cast<std::size_t>(cfg.minibatch);
      const auto horizon = static_cast<std::size_t>(cfg.dyn_horizon);
      const bool use_dyn = cfg.train_design && cfg.dyn_coef > 0 && n >= horizon;
      std::vector<std::size_t> order(n);
      std::vector<ad::Parameter*> net_params = agent.policy_parameters();
      const auto vp = agent.value_parameters();
      net_params.insert(net_params.end(), vp.begin(), vp.end());
      std::vector<ad::Parameter*> design_params{&agent.design_leaf()};
      std::vector<ad::Parameter*> all = net_params;
      all.push_back(&agent.design_leaf());

      double sum_policy = 0.0, sum_value = 0.0, sum_dyn = 0.0;
      int updates = 0;
      bool failed = false;
      for (int pass = 0; pass < cfg.opt_epochs && !failed; ++pass) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
        for (std::size_t start = 0; start < n; start += mb) {
          const PpoBatch batch =
              gather(traj.obs, traj.actions, traj.log_probs, adv, gae.returns, order, start, std::min(mb, n - start));
          std::optional<DynamicsTerm> dyn;
          if (use_dyn) {
            const std::size_t s = rng.index(n - horizon + 1);
            dyn = dynamics_term(traj, s, horizon, env.plant(), agent, env.weights(), env.dt(), cfg.dyn_coef,
                                reward_scale);
          }
          ad::Tape tape;
          LossTerms terms;
          const ad::Var loss = ppo_loss(tape, agent, batch, cfg, dyn ? &*dyn : nullptr, &terms);
          if (!std::isfinite(terms.total)) {
            failed = true;
            break;
          }
          ad::zero_grad(all);
          tape.backward(loss);
          if (!net_opt.step(net_params)) {
            failed = true;
            break;
          }
          if (cfg.train_design) {
            if (!design_opt.step(design_params)) {
              failed = true;
              break;
            }
            agent.project_design();
          }
          sum_policy += terms.policy;
          sum_value += terms.value;
          sum_dyn += terms.dynamics;
          ++updates;
        }
      }
      if (failed) {
        agent = before.agent;
        net_opt = before.net;
        design_opt = before.design;
        log.update_skipped = true;
      } else if (updates > 0) {
        log.policy_loss = sum_policy / updates;
        log.value_loss = sum_value / updates;
        log.dynamics_loss = sum_dyn / updates;
      }
    } else {
      log.update_skipped = true;
    }
    env.set_design(agent.design());

    if (traj.size() > 0 && log.episode_return > rec.best_return) {
      rec.best_return = log.episode_return;
      rec.best_epoch = epoch;
      since_best = 0;
      if (cfg.return_best) result.agent = before.agent;
    } else {
      ++since_best;
    }
    log.best_return = rec.best_return;
    rec.epochs.push_back(log);
    if (on_epoch) on_epoch(log);

    if (epoch + 1 >= cfg.min_epochs_for_abort &&
        static_cast<double>(diverged_rollouts) > cfg.divergence_abort_fraction * static_cast<double>(epoch + 1)) {
      rec.stop_reason = "divergence";
      throw TrainingAbort("training aborted: " + std::to_string(diverged_rollouts) + " of " +
                          std::to_string(epoch + 1) + " rollouts diverged");
    }
    if (since_best >= cfg.patience) {
      rec.stop_reason = "patience";
      break;
    }
  }
  if (!cfg.return_best || rec.best_epoch < 0) result.agent = agent;
  return result;
}

void write_training_csv(const std::filesystem::path& path, const TrainingRecord& rec) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.precision(17);
  os << "epoch,return,mean_reward,best_return,k_s,c_s,policy_loss,value_loss,dynamics_loss,mean_abs_u,rms_comfort,"
        "steps,diverged,update_skipped\n";
  for (const auto& e : rec.epochs) {
    os << e.epoch << ',' << e.episode_return << ',' << e.mean_reward << ',' << e.best_return << ',' << e.k_s << ','
       << e.c_s << ',' << e.policy_loss << ',' << e.value_loss << ',' << e.dynamics_loss << ',' << e.mean_abs_u << ','
       << e.rms_comfort << ',' << e.steps << ',' << e.diverged << ',' << e.update_skipped << '\n';
  }
}

}  // namespace twinccd
