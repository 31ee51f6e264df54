#pragma once

// Structured proportional controller u = -K y, its gains tuned by Bayesian
// optimisation (Gaussian process + expected improvement), and supervised
// pretraining of the policy mean on the controller's actions.

#include <Eigen/Dense>

#include <functional>
#include <vector>

#include "twinccd/env.hpp"
#include "twinccd/nn.hpp"
#include "twinccd/random.hpp"
#include "twinccd/reward.hpp"
#include "twinccd/vehicle.hpp"

namespace twinccd {

using GainVector = Eigen::Matrix<double, 5, 1>;
using GainMatrix = Eigen::Matrix<double, kActionDim, kObsDim>;

// K0 heave rate, K1 pitch rate, K2 roll rate, K3 wheel position, K4 deflection.
GainMatrix build_K(const GainVector& k);
GainVector reference_gains();

struct GainBounds {
  GainVector lo = (GainVector() << 0.0, 0.0, 0.0, 0.0, -5000.0).finished();
  GainVector hi = (GainVector() << 1.0e4, 5000.0, 2000.0, 2.0e4, 5000.0).finished();
  void validate() const;
};

// Gaussian process with a Matern-5/2 kernel on inputs scaled to the unit
// box; the length scale is picked from a grid by marginal likelihood.
class GaussianProcess {
 public:
  void fit(const Eigen::MatrixXd& x_unit, const Eigen::VectorXd& y);
  // Posterior mean and standard deviation in the units of y.
  std::pair<double, double> predict(const Eigen::VectorXd& x_unit) const;
  double length_scale() const { return length_; }

 private:
  double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;
  Eigen::MatrixXd x_;
  Eigen::VectorXd alpha_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  double length_ = 0.2;
  double noise_ = 1e-6;
};

// Expected improvement for minimisation.
double expected_improvement(double mean, double sd, double best, double xi = 0.0);

struct BoConfig {
  int budget = 120;
  int initial = 10;  // seed evaluations including the supplied points
  int candidates = 2000;
  double xi = 0.01;
  bool log_objective = true;  // fit the surrogate to log(f); f must be positive

  void validate() const;
};

struct BoEvaluation {
  int iteration = 0;
  Eigen::VectorXd x;
  double value = 0.0;
  bool seed_point = false;
};

struct BoResult {
  Eigen::VectorXd best_x;
  double best_value = 0.0;
  int best_iteration = -1;
  std::vector<BoEvaluation> log;
};

// Minimises f over the box [lo, hi]. `seed_points` are evaluated first; the
// remaining initial evaluations are uniform random. Exactly cfg.budget
// evaluations are made.
BoResult bayes_opt(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& lo,
                   const Eigen::VectorXd& hi, const BoConfig& cfg, Rng& rng,
                   const std::vector<Eigen::VectorXd>& seed_points = {});

struct ClosedLoopResult {
  double rms_comfort = 0.0;
  double mean_abs_u = 0.0;
  std::size_t steps = 0;
  bool diverged = false;
};

// u = -K y on the given plant with Gaussian wheel inputs drawn from `rng`.
ClosedLoopResult run_closed_loop(const GainVector& gains, const Plant& plant, const SuspensionDesign& design,
                                 const NoiseRoadConfig& road, double dt, std::size_t steps, Rng& rng);

struct WarmStartConfig {
  GainBounds bounds;
  BoConfig bo;
  int eval_steps = 2000;
  double divergence_penalty = 1.0e3;
  bool skip_bo = false;
  int pretrain_episodes = 20;
  int pretrain_episode_len = 1000;
  int pretrain_steps = 3000;
  int pretrain_minibatch = 256;
  double pretrain_lr = 1e-3;
  double holdout_fraction = 0.1;

  void validate() const;
};

struct WarmStartResult {
  GainVector gains;
  double objective = 0.0;
  double zero_gain_objective = 0.0;
  BoResult bo;
};

// Tunes the gains for the RMS comfort index under the fixed evaluation
// seed. With cfg.skip_bo the reference gains are returned.
WarmStartResult tune_gains(const WarmStartConfig& cfg, const Plant& plant, const SuspensionDesign& design,
                           const NoiseRoadConfig& road, double dt, std::uint64_t eval_seed, Rng& rng);

struct PretrainData {
  ad::Matrix obs;      // n x 11
  ad::Matrix design;   // n x 2 (k_s, c_s)
  ad::Matrix actions;  // n x 4, newtons
};

// Closed-loop samples under u = -K y, each episode with a design drawn
// uniformly inside the bounds.
PretrainData warmstart_dataset(const GainVector& gains, const Plant& plant, const DesignBounds& bounds,
                               const NoiseRoadConfig& road, double dt, int episodes, int episode_len, Rng& rng);

// Per-component standard deviation of the observations, floored at 1e-6.
Observation observation_scale(const ad::Matrix& obs);

struct PretrainReport {
  double train_mse = 0.0;      // normalised action units
  double holdout_rel_rmse = 0.0;
  int steps = 0;
};

// Least-squares fit of the policy mean to the controller actions.
PretrainReport pretrain_mean(Agent& agent, const PretrainData& data, const WarmStartConfig& cfg, Rng& rng);

// 13-column network input for explicit per-row designs.
ad::Matrix network_input_with_designs(const Agent& agent, const ad::Matrix& obs, const ad::Matrix& design);

void write_bo_csv(const std::filesystem::path& path, const BoResult& r);

}  // namespace twinccd
