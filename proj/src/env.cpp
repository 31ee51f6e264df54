#include "twinccd/env.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <stdexcept>

namespace twinccd {

Environment::Environment(Plant plant, const SuspensionDesign& design, const RewardWeights& w, double dt)
    : plant_(std::move(plant)), design_(design), weights_(w), dt_(dt) {
  plant_.params.validate();
  weights_.validate();
  if (!(dt > 0)) throw std::invalid_argument("environment step must be positive");
}

StepResult Environment::nominal_step(const Action& u_in, const DrivingCondition& drive, const WheelDisturbance& road) {
  const Action u = limit_.apply(u_in);
  StepResult r;
  const State xd = derivative<double>(x_, u, drive, road, plant_, design_);
  r.terms = step_reward<double>(x_, xd, u, weights_);
  r.reward = r.terms.reward();
  r.body_accel = {xd(idx::zdot_s), xd(idx::alphadot), xd(idx::betadot)};
  r.replay.drive = drive;
  r.replay.road = road;
  x_ = rk4_step<double>(x_, u, drive, road, plant_, design_, dt_);
  r.diverged = diverged(x_) || !std::isfinite(r.reward);
  return r;
}

NoiseRoadEnv::NoiseRoadEnv(Plant plant, const SuspensionDesign& design, const RewardWeights& w, double dt,
                           NoiseRoadConfig cfg)
    : Environment(std::move(plant), design, w, dt), cfg_(cfg) {
  if (cfg_.speed < 0 || cfg_.z_std < 0 || cfg_.zdot_std < 0) throw std::invalid_argument("invalid noise road");
}

void NoiseRoadEnv::reset(Rng&) { x_ = State::Zero(); }

WheelDisturbance NoiseRoadEnv::sample_road(Rng& rng) const {
  WheelDisturbance w;
  for (int i = 0; i < 4; ++i) w.z_r(i) = rng.normal(0.0, cfg_.z_std);
  for (int i = 0; i < 4; ++i) w.zdot_r(i) = rng.normal(0.0, cfg_.zdot_std);
  return w;
}

StepResult NoiseRoadEnv::step(const Action& u, Rng& rng) {
  const WheelDisturbance road = sample_road(rng);
  return nominal_step(u, DrivingCondition{cfg_.speed, 0.0, 0.0}, road);
}

ProfileEnv::ProfileEnv(Plant plant, const SuspensionDesign& design, const RewardWeights& w,
                       std::shared_ptr<const DisturbanceSeries> series)
    : Environment(std::move(plant), design, w, series ? series->dt : 0.01), series_(std::move(series)) {
  if (!series_ || series_->size() == 0) throw std::invalid_argument("profile environment needs a nonempty series");
}

void ProfileEnv::rewind() {
  cursor_ = 0;
  x_ = State::Zero();
}

void ProfileEnv::reset(Rng&) {
  if (!continue_ || cursor_ + std::max<std::size_t>(segment_, 1) > series_->size()) rewind();
}

StepResult ProfileEnv::step(const Action& u, Rng&) {
  if (cursor_ >= series_->size()) rewind();
  const std::size_t k = cursor_++;
  return nominal_step(u, series_->drive[k], series_->road[k]);
}

UpdatedModelEnv::UpdatedModelEnv(Plant nominal, const SuspensionDesign& design, const RewardWeights& w,
                                 std::shared_ptr<const DisturbanceSeries> series,
                                 std::shared_ptr<const QuantileModel> model, std::size_t error_reset)
    : ProfileEnv(std::move(nominal), design, w, std::move(series)),
      model_(std::move(model)),
      updated_(plant_, model_.get()),
      error_reset_(error_reset) {
  if (plant_.is_real()) throw std::invalid_argument("the updated model corrects the nominal plant");
}

void UpdatedModelEnv::reset(Rng& rng) {
  const std::size_t before = cursor_;
  ProfileEnv::reset(rng);
  if (cursor_ < before || cursor_ == 0) {
    e_.setZero();
    since_reset_ = 0;
  }
}

StepResult UpdatedModelEnv::step(const Action& u_in, Rng&) {
  if (cursor_ >= series_->size()) {
    rewind();
    e_.setZero();
    since_reset_ = 0;
  }
  if (error_reset_ > 0 && since_reset_ >= error_reset_) {
    e_.setZero();
    since_reset_ = 0;
  }
  const std::size_t k = cursor_++;
  const Action u = limit_.apply(u_in);
  const DrivingCondition& drive = series_->drive[k];
  const WheelDisturbance& road = series_->road[k];

  const UpdatedStep s = updated_.step(x_, e_, u, drive, road, design_, dt_);
  StepResult r;
  const State xd = derivative<double>(x_, u, drive, road, plant_, design_);
  const Eigen::Vector3d acc_corr = s.error.median.head<3>() / dt_;
  r.terms = step_reward<double>(x_, xd, u, weights_, acc_corr);
  r.uncertainty = uncertainty_penalty(widths_from_band(s.error.width(), dt_), weights_);
  r.reward = -(r.terms.cost + weights_.lambda_u * r.uncertainty);
  r.body_accel = Eigen::Vector3d(xd(idx::zdot_s), xd(idx::alphadot), xd(idx::betadot)) + acc_corr;
  r.replay.drive = drive;
  r.replay.road = road;
  r.replay.correction = updated_.c_pinv() * s.error.median;
  r.replay.accel_correction = acc_corr;
  r.replay.extra_cost = weights_.lambda_u * r.uncertainty;
  x_ = s.next;
  e_ = s.error.median;
  ++since_reset_;
  r.diverged = diverged(x_) || !std::isfinite(r.reward);
  return r;
}

ReplayGradient replay_gradient(const State& x0, const std::vector<Action>& actions,
                               const std::vector<ReplayStep>& steps, const Plant& plant,
                               const SuspensionDesign& design, const RewardWeights& w, double dt) {
  if (actions.size() != steps.size()) throw std::invalid_argument("replay actions and steps differ in length");
  using Dual = Eigen::AutoDiffScalar<Eigen::Vector2d>;
  SuspensionDesignT<Dual> d{Dual(design.k_s, 2, 0), Dual(design.c_s, 2, 1)};
  const Dual ret = replay_return<Dual>(x0, actions, steps, plant, d, w, dt);
  ReplayGradient g;
  g.value = ret.value();
  if (ret.derivatives().size() == 2) {
    g.d_k_s = ret.derivatives()(0);
    g.d_c_s = ret.derivatives()(1);
  }
  return g;
}

}  // namespace twinccd
