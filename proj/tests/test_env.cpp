#include <doctest.h>

#include <Eigen/Dense>
#include <unsupported/Eigen/AutoDiff>

#include <cmath>
#include <memory>

#include "twinccd/env.hpp"
#include "twinccd/reward.hpp"

using namespace twinccd;

namespace {

const SuspensionDesign kInit{27692.0, 1906.5};

// A short synthetic drive: accelerate, turn, bumpy wheels.
std::shared_ptr<DisturbanceSeries> synthetic_series(std::size_t n) {
  auto s = std::make_shared<DisturbanceSeries>();
  s->dt = 0.01;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * 0.01;
    s->drive.push_back({5.0 + t, 1.0, 0.05 * std::sin(t)});
    WheelDisturbance w;
    for (int i = 0; i < 4; ++i) {
      w.z_r(i) = 0.01 * std::sin(3.0 * t + i);
      w.zdot_r(i) = 0.03 * std::cos(3.0 * t + i);
    }
    s->road.push_back(w);
  }
  return s;
}

}  // namespace

TEST_CASE("comfort index and reward terms") {
  const RewardWeights w;
  CHECK(w.w1 == 10.0);
  CHECK(w.w2 == 1.0);
  CHECK(w.w3 == 0.5);
  CHECK(w.c1 == doctest::Approx(25000.0));
  CHECK(w.c2 == doctest::Approx(33333.333333));
  CHECK(w.c3 == 1e-4);

  auto t = comfort_and_reward<double>({1.0, 0.0, 0.0}, 0.0, 0.0, Action::Zero(), w);
  CHECK(t.comfort == doctest::Approx(10.0));
  CHECK(t.reward() == doctest::Approx(-10.0));
  t = comfort_and_reward<double>({0.3, 4.0, 2.0}, 0.0, 0.0, Action::Zero(), w);
  CHECK(t.comfort == doctest::Approx(std::sqrt(9.0 + 16.0 + 1.0)));
  t = comfort_and_reward<double>({0.0, 0.0, 0.0}, 0.01, -0.01, Action::Constant(100.0), w);
  CHECK(t.comfort == 0.0);
  CHECK(t.cost == doctest::Approx(2.5 + 10.0 / 3.0 + 4.0));

  RewardWeights bad;
  bad.c3 = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("guarded sqrt has a finite derivative at zero") {
  using Dual = Eigen::AutoDiffScalar<Eigen::Vector2d>;
  const Dual z(0.0, 2, 0);
  const Dual r = guarded_sqrt<Dual>(z * z);
  CHECK(r.value() == 0.0);
  CHECK(r.derivatives().allFinite());
  const Dual y(4.0, 2, 1);
  CHECK(guarded_sqrt<Dual>(y).derivatives()(1) == doctest::Approx(0.25));
}

TEST_CASE("uncertainty widths and penalty") {
  Observation band = Observation::Zero();
  band(0) = 0.002;
  band(1) = 0.001;
  band(2) = 0.004;
  band(5) = 9.0;  // wheel channels do not enter
  const UncertaintyWidths u = widths_from_band(band, 0.01);
  CHECK(u.heave_accel == doctest::Approx(0.2));
  CHECK(u.pitch_accel == doctest::Approx(0.1));
  CHECK(u.roll_accel == doctest::Approx(0.4));
  CHECK(u.pitch == doctest::Approx(1e-5));
  CHECK(u.roll == doctest::Approx(4e-5));
  const RewardWeights w;
  const double want = std::sqrt(4.0 + 0.01 + 0.04) + 25000.0 * 1e-10 + (1.0 / 3e-5) * 16e-10;
  CHECK(uncertainty_penalty(u, w) == doctest::Approx(want));
  CHECK(uncertainty_penalty(widths_from_band(Observation::Zero(), 0.01), w) == 0.0);
}

TEST_CASE("noise-road environment") {
  NoiseRoadEnv env(Plant::nominal(), kInit, RewardWeights{}, 0.01);
  Rng a(1), b(1);
  env.reset(a);
  CHECK(env.state().isZero(0.0));
  const State x0 = env.state();
  Rng peek(1);
  const WheelDisturbance road = env.sample_road(peek);
  const Action u = Action::Constant(50.0);
  const StepResult r = env.step(u, a);
  const State xd = derivative<double>(x0, u, {10.0, 0.0, 0.0}, road, Plant::nominal(), kInit);
  CHECK(r.reward == step_reward<double>(x0, xd, u, RewardWeights{}).reward());
  CHECK(env.state() == rk4_step<double>(x0, u, {10.0, 0.0, 0.0}, road, Plant::nominal(), kInit, 0.01));

  NoiseRoadEnv twin(Plant::nominal(), kInit, RewardWeights{}, 0.01);
  twin.reset(b);
  twin.step(u, b);
  CHECK(twin.state() == env.state());

  // road statistics
  Rng s(2);
  double zz = 0.0, dd = 0.0;
  for (int k = 0; k < 5000; ++k) {
    const WheelDisturbance w = env.sample_road(s);
    zz += w.z_r.squaredNorm();
    dd += w.zdot_r.squaredNorm();
  }
  CHECK(std::sqrt(zz / 20000) == doctest::Approx(0.001).epsilon(0.03));
  CHECK(std::sqrt(dd / 20000) == doctest::Approx(0.1).epsilon(0.03));
}

TEST_CASE("actuator limit is applied before the dynamics") {
  NoiseRoadEnv env(Plant::nominal(), kInit, RewardWeights{}, 0.01, {10.0, 0.0, 0.0});
  env.actuator_limit().enabled = true;
  env.actuator_limit().limit = 100.0;
  Rng rng(3);
  env.reset(rng);
  const StepResult r = env.step(Action::Constant(1e4), rng);
  CHECK(r.terms.cost == doctest::Approx(r.terms.comfort + 1e-4 * 4 * 1e4));
}

TEST_CASE("profile episodes restart by default and continue on request") {
  auto series = synthetic_series(50);
  ProfileEnv env(Plant::nominal(), kInit, RewardWeights{}, series);
  Rng rng(4);
  env.set_segment_length(10);
  env.reset(rng);
  for (int k = 0; k < 10; ++k) env.step(Action::Zero(), rng);
  CHECK(env.cursor() == 10);
  const State mid = env.state();
  env.reset(rng);
  CHECK(env.cursor() == 0);
  CHECK(env.state().isZero(0.0));

  env.set_continue(true);
  for (int k = 0; k < 10; ++k) env.step(Action::Zero(), rng);
  env.reset(rng);
  CHECK(env.cursor() == 10);
  CHECK(env.state() == mid);
  for (int k = 0; k < 35; ++k) env.step(Action::Zero(), rng);
  env.reset(rng);  // 45 + 10 > 50
  CHECK(env.cursor() == 0);
  CHECK(env.state().isZero(0.0));

  // stepping past the end wraps to the start
  ProfileEnv wrap(Plant::nominal(), kInit, RewardWeights{}, synthetic_series(3));
  for (int k = 0; k < 4; ++k) wrap.step(Action::Zero(), rng);
  CHECK(wrap.cursor() == 1);
  CHECK_THROWS_AS(ProfileEnv(Plant::nominal(), kInit, RewardWeights{}, std::make_shared<DisturbanceSeries>()),
                  std::invalid_argument);
}

TEST_CASE("updated model with a zero discrepancy is the nominal model") {
  auto series = synthetic_series(200);
  auto model = std::make_shared<const QuantileModel>(QuantileModel::zero());
  ProfileEnv plain(Plant::nominal(), kInit, RewardWeights{}, series);
  UpdatedModelEnv upd(Plant::nominal(), kInit, RewardWeights{}, series, model);
  Rng rng(5);
  plain.reset(rng);
  upd.reset(rng);
  for (int k = 0; k < 200; ++k) {
    const Action u = Action::Constant(20.0 * std::sin(0.1 * k));
    const StepResult a = plain.step(u, rng);
    const StepResult b = upd.step(u, rng);
    CHECK(a.reward == doctest::Approx(b.reward).epsilon(1e-12));
    CHECK(b.uncertainty == 0.0);
  }
  CHECK((plain.state() - upd.state()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(UpdatedModelEnv(Plant::real(VehicleParams{}), kInit, RewardWeights{}, series, model),
                  std::invalid_argument);
}

TEST_CASE("updated model: constant discrepancy shifts the observation and costs its width") {
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(11, -0.001), med = Eigen::VectorXd::Zero(11),
                  hi = Eigen::VectorXd::Constant(11, 0.002);
  med(0) = 0.003;
  med(8) = -0.002;
  auto model = std::make_shared<const QuantileModel>(QuantileModel::constant({}, lo, med, hi));
  const UpdatedModel um(Plant::nominal(), model.get());
  State x = State::Zero();
  x(idx::z_s) = 0.01;
  x(idx::zdot_u) = 0.2;
  const Action u = Action::Constant(30.0);
  const DrivingCondition drive{8.0, 0.5, 0.02};
  const UpdatedStep s = um.step(x, Observation::Zero(), u, drive, {}, kInit, 0.01);
  const State nom = rk4_step<double>(x, u, drive, {}, Plant::nominal(), kInit, 0.01);
  // channels 0 and 8 cross the band and get sorted
  Observation want_med = med, want_width = Observation::Constant(0.003);
  want_med(0) = 0.002;
  want_med(8) = -0.001;
  want_width(0) = 0.004;
  want_width(8) = 0.004;
  CHECK((s.error.median - want_med).cwiseAbs().maxCoeff() < 1e-15);
  const ObservationMatrix& C = observation_matrix();
  const Observation projected = C * (um.c_pinv() * want_med);
  CHECK((observe(s.next) - (observe(nom) + projected)).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(C);
  svd.setThreshold(1e-10);
  CHECK(svd.rank() == 8);
  // an error that some state change explains is reproduced exactly
  State dx = State::Zero();
  dx(idx::z_s) = 1e-3;
  dx(idx::z_u + 2) = -2e-3;
  dx(idx::betadot) = 0.01;
  const Observation consistent = C * dx;
  CHECK((C * (um.c_pinv() * consistent) - consistent).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((s.y.upper - s.y.lower - want_width).cwiseAbs().maxCoeff() < 1e-15);
  // lower <= median <= upper after sorting even though med(0) > hi(0)
  CHECK((s.error.lower.array() <= s.error.median.array()).all());
  CHECK((s.error.median.array() <= s.error.upper.array()).all());

  auto series = synthetic_series(20);
  UpdatedModelEnv env(Plant::nominal(), kInit, RewardWeights{}, series, model);
  Rng rng(6);
  env.reset(rng);
  const StepResult r = env.step(Action::Zero(), rng);
  const QuantilePrediction band = model->predict(make_features(Observation::Zero(), Observation::Zero(),
                                                               Action::Zero(), series->drive[0]));
  CHECK(r.uncertainty == doctest::Approx(uncertainty_penalty(widths_from_band(band.width(), 0.01), RewardWeights{})));
  CHECK(r.reward == doctest::Approx(-(r.terms.cost + r.uncertainty)));
  CHECK(env.running_error() == band.median);
}

TEST_CASE("running error resets on schedule") {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(11), m = Eigen::VectorXd::Constant(11, 1e-4);
  auto model = std::make_shared<const QuantileModel>(QuantileModel::constant({}, z, m, m));
  UpdatedModelEnv env(Plant::nominal(), kInit, RewardWeights{}, synthetic_series(40), model, 5);
  Rng rng(7);
  env.reset(rng);
  for (int k = 0; k < 5; ++k) env.step(Action::Zero(), rng);
  CHECK_FALSE(env.running_error().isZero(0.0));
  env.reset(rng);
  CHECK(env.running_error().isZero(0.0));
}

TEST_CASE("replayed return and its design gradient") {
  // Record a rollout on the real plant, then replay it.
  auto series = synthetic_series(60);
  const Plant real = Plant::real(VehicleParams{});
  ProfileEnv env(real, kInit, RewardWeights{}, series);
  Rng rng(8);
  env.reset(rng);
  std::vector<Action> actions;
  std::vector<ReplayStep> steps;
  double total = 0.0;
  for (int k = 0; k < 60; ++k) {
    const Action u = Action::Constant(40.0 * std::cos(0.2 * k));
    const StepResult r = env.step(u, rng);
    actions.push_back(u);
    steps.push_back(r.replay);
    total += r.reward;
  }
  const ReplayGradient g = replay_gradient(State::Zero(), actions, steps, real, kInit, RewardWeights{}, 0.01);
  CHECK(g.value == doctest::Approx(total).epsilon(1e-12));
  CHECK(g.d_k_s != 0.0);
  CHECK(g.d_c_s != 0.0);
  auto ret = [&](double k, double c) {
    return replay_return<double>(State::Zero(), actions, steps, real, SuspensionDesign{k, c}, RewardWeights{}, 0.01);
  };
  const double hk = 1.0, hc = 0.1;
  const double fk = (ret(kInit.k_s + hk, kInit.c_s) - ret(kInit.k_s - hk, kInit.c_s)) / (2 * hk);
  const double fc = (ret(kInit.k_s, kInit.c_s + hc) - ret(kInit.k_s, kInit.c_s - hc)) / (2 * hc);
  CHECK(g.d_k_s == doctest::Approx(fk).epsilon(1e-5));
  CHECK(g.d_c_s == doctest::Approx(fc).epsilon(1e-5));
  CHECK_THROWS_AS(replay_gradient(State::Zero(), {}, steps, real, kInit, RewardWeights{}, 0.01), std::invalid_argument);
}
