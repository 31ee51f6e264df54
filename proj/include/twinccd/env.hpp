#pragma once

// Simulation environments the agent trains and is evaluated in, and the
// differentiable replay of a recorded stretch used for design gradients.

#include <Eigen/Dense>

#include <memory>
#include <vector>

#include "twinccd/discrepancy.hpp"
#include "twinccd/profile.hpp"
#include "twinccd/random.hpp"
#include "twinccd/reward.hpp"
#include "twinccd/vehicle.hpp"

namespace twinccd {

// Everything needed to re-simulate one step with a different design while
// the action and exogenous inputs stay fixed.
struct ReplayStep {
  DrivingCondition drive;
  WheelDisturbance road;
  State correction = State::Zero();                        // added after the RK4 step
  Eigen::Vector3d accel_correction = Eigen::Vector3d::Zero();  // added to the reward accelerations
  double extra_cost = 0.0;                                 // design-independent penalty
};

struct StepResult {
  double reward = 0.0;
  RewardTerms terms{};
  double uncertainty = 0.0;  // J before lambda_u
  Eigen::Vector3d body_accel = Eigen::Vector3d::Zero();
  bool diverged = false;
  ReplayStep replay;
};

class Environment {
 public:
  virtual ~Environment() = default;

  // Prepares the next rollout.
  virtual void reset(Rng& rng) = 0;
  // Applies u (newtons) for one step.
  virtual StepResult step(const Action& u, Rng& rng) = 0;

  const State& state() const { return x_; }
  Observation observation() const { return observe(x_); }
  const Plant& plant() const { return plant_; }
  double dt() const { return dt_; }
  const SuspensionDesign& design() const { return design_; }
  void set_design(const SuspensionDesign& d) { design_ = d; }
  const RewardWeights& weights() const { return weights_; }
  ActuatorLimit& actuator_limit() { return limit_; }

 protected:
  Environment(Plant plant, const SuspensionDesign& design, const RewardWeights& w, double dt);
  // Plain RK4 transition with the first-stage reward.
  StepResult nominal_step(const Action& u, const DrivingCondition& drive, const WheelDisturbance& road);

  Plant plant_;
  SuspensionDesign design_;
  RewardWeights weights_;
  double dt_;
  State x_ = State::Zero();
  ActuatorLimit limit_;
};

// Straight-line driving at constant speed with independent Gaussian road
// inputs per wheel and per step; every rollout starts at the zero state.
struct NoiseRoadConfig {
  double speed = 10.0;
  double z_std = 0.001;
  double zdot_std = 0.1;
};

class NoiseRoadEnv : public Environment {
 public:
  NoiseRoadEnv(Plant plant, const SuspensionDesign& design, const RewardWeights& w, double dt,
               NoiseRoadConfig cfg = {});
  void reset(Rng& rng) override;
  StepResult step(const Action& u, Rng& rng) override;
  WheelDisturbance sample_road(Rng& rng) const;

 private:
  NoiseRoadConfig cfg_;
};

// Follows a precomputed driver profile. By default every rollout starts at
// the profile start from the zero state. In continue mode consecutive
// rollouts pick up where the previous one stopped, with the state carried
// over, and the profile restarts from the zero state past its end.
class ProfileEnv : public Environment {
 public:
  ProfileEnv(Plant plant, const SuspensionDesign& design, const RewardWeights& w,
             std::shared_ptr<const DisturbanceSeries> series);
  void reset(Rng& rng) override;
  StepResult step(const Action& u, Rng& rng) override;
  std::size_t cursor() const { return cursor_; }
  // Rewinds to the profile start at the zero state.
  void rewind();
  // Rollouts must fit before the end of the profile; otherwise reset rewinds.
  void set_segment_length(std::size_t n) { segment_ = n; }
  void set_continue(bool on) { continue_ = on; }

 protected:
  std::shared_ptr<const DisturbanceSeries> series_;
  std::size_t cursor_ = 0;
  std::size_t segment_ = 0;
  bool continue_ = false;
};

// Nominal model corrected by the quantile discrepancy model, with the
// uncertainty-augmented reward. The running error fed back into the model
// is its own median prediction; it is zeroed every `error_reset` steps when
// that is positive.
class UpdatedModelEnv : public ProfileEnv {
 public:
  UpdatedModelEnv(Plant nominal, const SuspensionDesign& design, const RewardWeights& w,
                  std::shared_ptr<const DisturbanceSeries> series, std::shared_ptr<const QuantileModel> model,
                  std::size_t error_reset = 0);
  void reset(Rng& rng) override;
  StepResult step(const Action& u, Rng& rng) override;
  const Observation& running_error() const { return e_; }

 private:
  std::shared_ptr<const QuantileModel> model_;
  UpdatedModel updated_;
  Observation e_ = Observation::Zero();
  std::size_t error_reset_;
  std::size_t since_reset_ = 0;
};

// Undiscounted return of re-simulating `steps` from x0 with the recorded
// actions under `design`. Templated so forward-mode derivative scalars
// give d(return)/d(design).
template <typename Scalar>
Scalar replay_return(const State& x0, const std::vector<Action>& actions, const std::vector<ReplayStep>& steps,
                     const Plant& plant, const SuspensionDesignT<Scalar>& design, const RewardWeights& w,
                     double dt) {
  StateT<Scalar> x = x0.cast<Scalar>();
  Scalar total(0.0);
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const ReplayStep& s = steps[k];
    const StateT<Scalar> xd = derivative<Scalar>(x, actions[k], s.drive, s.road, plant, design);
    const RewardTermsT<Scalar> t = step_reward<Scalar>(x, xd, actions[k], w, s.accel_correction);
    total -= t.cost + s.extra_cost;
    x = rk4_step<Scalar>(x, actions[k], s.drive, s.road, plant, design, dt);
    x += s.correction.cast<Scalar>();
  }
  return total;
}

struct ReplayGradient {
  double value = 0.0;
  double d_k_s = 0.0;
  double d_c_s = 0.0;
};

ReplayGradient replay_gradient(const State& x0, const std::vector<Action>& actions,
                               const std::vector<ReplayStep>& steps, const Plant& plant,
                               const SuspensionDesign& design, const RewardWeights& w, double dt);

}  // namespace twinccd
