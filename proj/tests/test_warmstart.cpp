#include <doctest.h>

#include <cmath>

#include "twinccd/warmstart.hpp"

using namespace twinccd;

TEST_CASE("gain matrix sign pattern") {
  GainVector k;
  k << 1.0, 2.0, 3.0, 4.0, 5.0;
  const GainMatrix K = build_K(k);
  // rows FL, FR, RL, RR; columns heave, pitch, roll rates, 4 wheel positions, 4 deflections
  for (int i = 0; i < 4; ++i) {
    CHECK(K(i, 0) == 1.0);
    CHECK(K(i, 3 + i) == 4.0);
    CHECK(K(i, 7 + i) == 5.0);
    CHECK(K.row(i).cwiseAbs().sum() == doctest::Approx(1 + 2 + 3 + 4 + 5));
  }
  CHECK(K.col(1).transpose() == Eigen::RowVector4d(2, -2, 2, -2));
  CHECK(K.col(2).transpose() == Eigen::RowVector4d(3, 3, -3, -3));
  CHECK(reference_gains()(4) == -1717.9);
  CHECK(reference_gains()(2) == 801.3);
}

TEST_CASE("GP interpolates and EI behaves") {
  GaussianProcess gp;
  Eigen::MatrixXd x(5, 1);
  x << 0.0, 0.2, 0.5, 0.7, 1.0;
  Eigen::VectorXd y = (x.col(0).array() * 6.0).sin();
  gp.fit(x, y);
  for (int i = 0; i < 5; ++i) {
    const auto [m, s] = gp.predict(x.row(i).transpose());
    CHECK(m == doctest::Approx(y(i)).epsilon(1e-3));
    CHECK(s < 0.02);
  }
  const auto [m_mid, s_mid] = gp.predict(Eigen::VectorXd::Constant(1, 0.35));
  CHECK(s_mid > gp.predict(Eigen::VectorXd::Constant(1, 0.2)).second);
  CHECK(std::isfinite(m_mid));

  CHECK(expected_improvement(1.0, 0.0, 2.0) == doctest::Approx(1.0));
  CHECK(expected_improvement(3.0, 0.0, 2.0) == 0.0);
  CHECK(expected_improvement(2.0, 1.0, 2.0) == doctest::Approx(1.0 / std::sqrt(2.0 * 3.14159265358979)));
  double last = -1.0;
  for (double sd : {0.1, 0.5, 1.0, 2.0}) {
    const double ei = expected_improvement(2.5, sd, 2.0);
    CHECK(ei > last);
    last = ei;
  }
}

TEST_CASE("BO finds the minimum of a 1-D quadratic") {
  Rng rng(3);
  BoConfig cfg;
  cfg.budget = 25;
  cfg.initial = 5;
  cfg.candidates = 500;
  cfg.log_objective = false;
  int calls = 0;
  auto f = [&](const Eigen::VectorXd& x) {
    ++calls;
    return (x(0) - 1.3) * (x(0) - 1.3) + 0.5;
  };
  const BoResult r = bayes_opt(f, Eigen::VectorXd::Constant(1, -4.0), Eigen::VectorXd::Constant(1, 6.0), cfg, rng);
  CHECK(calls == 25);
  CHECK(r.log.size() == 25);
  CHECK(std::abs(r.best_x(0) - 1.3) < 0.05);
  CHECK(r.best_value == doctest::Approx(f(r.best_x)));
  for (const auto& e : r.log) CHECK(e.value >= r.best_value);

  Rng again(3);
  const BoResult r2 =
      bayes_opt(f, Eigen::VectorXd::Constant(1, -4.0), Eigen::VectorXd::Constant(1, 6.0), cfg, again);
  CHECK(r2.best_x == r.best_x);

  BoConfig bad = cfg;
  bad.initial = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("BO-tuned gains beat the zero-gain controller") {
  WarmStartConfig cfg;
  cfg.bo.budget = 30;
  cfg.eval_steps = 1000;
  Rng rng(4);
  const WarmStartResult w =
      tune_gains(cfg, Plant::nominal(), {27692.0, 1906.5}, NoiseRoadConfig{}, 0.01, 2024, rng);
  INFO("zero " << w.zero_gain_objective << " tuned " << w.objective);
  CHECK(w.objective < w.zero_gain_objective);
  CHECK(w.bo.log.front().x.isZero(0.0));
  CHECK(w.bo.log.front().seed_point);
  for (int i = 0; i < 5; ++i) {
    CHECK(w.gains(i) >= cfg.bounds.lo(i));
    CHECK(w.gains(i) <= cfg.bounds.hi(i));
  }
}

TEST_CASE("reference gains are stable for 10,000 steps") {
  for (const Plant& plant : {Plant::nominal(), Plant::real(VehicleParams::nominal())}) {
    Rng rng(5);
    const ClosedLoopResult r =
        run_closed_loop(reference_gains(), plant, {27692.0, 1906.5}, NoiseRoadConfig{}, 0.01, 10000, rng);
    CHECK_FALSE(r.diverged);
    CHECK(r.steps == 10000);
    CHECK(std::isfinite(r.rms_comfort));
    CHECK(r.mean_abs_u > 0.0);
  }
  WarmStartConfig cfg;
  cfg.skip_bo = true;
  Rng rng(6);
  const WarmStartResult w = tune_gains(cfg, Plant::nominal(), {27692.0, 1906.5}, NoiseRoadConfig{}, 0.01, 2024, rng);
  CHECK(w.gains == reference_gains());
  CHECK(w.bo.log.empty());
}

TEST_CASE("pretraining fits the controller") {
  Rng rng(7);
  AgentConfig ac;
  ac.policy.hidden = {32, 32};
  ac.value.hidden = {8};
  Agent agent(ac, DesignBounds{}, {27692.0, 1906.5}, rng);
  const PretrainData data =
      warmstart_dataset(reference_gains(), Plant::nominal(), DesignBounds{}, NoiseRoadConfig{}, 0.01, 4, 300, rng);
  CHECK(data.obs.rows() == 1200);
  CHECK(data.design.col(0).minCoeff() >= 5000.0);
  CHECK(data.design.col(1).maxCoeff() <= 6000.0);
  // actions are exactly -K y
  const GainMatrix K = build_K(reference_gains());
  CHECK((data.actions.row(500).transpose() + K * data.obs.row(500).transpose()).norm() < 1e-9);

  agent.set_obs_scale(observation_scale(data.obs));
  CHECK((agent.obs_scale().array() > 0.0).all());
  WarmStartConfig cfg;
  cfg.pretrain_steps = 1500;
  const ad::Matrix in = network_input_with_designs(agent, data.obs, data.design);
  const double before =
      (agent.mean_net().forward(in) - data.actions / agent.action_scale()).norm() / (data.actions / agent.action_scale()).norm();
  const PretrainReport rep = pretrain_mean(agent, data, cfg, rng);
  INFO("relative error before " << before << " holdout after " << rep.holdout_rel_rmse);
  CHECK(rep.steps == 1500);
  CHECK(rep.holdout_rel_rmse < 0.3);
  CHECK(rep.holdout_rel_rmse < 0.5 * before);
}
