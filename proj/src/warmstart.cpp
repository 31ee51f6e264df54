#include "twinccd/warmstart.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace twinccd {

GainMatrix build_K(const GainVector& k) {
  GainMatrix K = GainMatrix::Zero();
  const double pitch_sign[4] = {1.0, -1.0, 1.0, -1.0};
  const double roll_sign[4] = {1.0, 1.0, -1.0, -1.0};
  for (int i = 0; i < 4; ++i) {
    K(i, 0) = k(0);
    K(i, 1) = pitch_sign[i] * k(1);
    K(i, 2) = roll_sign[i] * k(2);
    K(i, 3 + i) = k(3);
    K(i, 7 + i) = k(4);
  }
  return K;
}

GainVector reference_gains() { return (GainVector() << 5000.0, 3000.0, 801.3, 10000.0, -1717.9).finished(); }

void GainBounds::validate() const {
  for (int i = 0; i < 5; ++i) {
    if (!(lo(i) < hi(i))) throw std::invalid_argument("gain bounds must satisfy lo < hi");
  }
}

double GaussianProcess::kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
  const double r = (a - b).norm() / length_;
  const double s = std::sqrt(5.0) * r;
  return (1.0 + s + s * s / 3.0) * std::exp(-s);
}

void GaussianProcess::fit(const Eigen::MatrixXd& x_unit, const Eigen::VectorXd& y) {
  if (x_unit.rows() != y.size() || y.size() == 0) throw std::invalid_argument("GP fit needs matching, nonempty data");
  x_ = x_unit;
  y_mean_ = y.mean();
  const double var = (y.array() - y_mean_).square().mean();
  y_scale_ = var > 1e-24 ? std::sqrt(var) : 1.0;
  const Eigen::VectorXd ys = (y.array() - y_mean_) / y_scale_;
  const Eigen::Index n = y.size();

  const double grid[] = {0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.2, 2.0};
  double best_lml = -std::numeric_limits<double>::infinity();
  double best_len = grid[2];
  for (double len : grid) {
    length_ = len;
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) K(i, j) = K(j, i) = kernel(x_.row(i).transpose(), x_.row(j).transpose());
    }
    K.diagonal().array() += noise_;
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    if (llt.info() != Eigen::Success) continue;
    const Eigen::VectorXd a = llt.solve(ys);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double lml = -0.5 * ys.dot(a) - 0.5 * logdet;
    if (lml > best_lml) {
      best_lml = lml;
      best_len = len;
    }
  }
  length_ = best_len;
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) K(i, j) = K(j, i) = kernel(x_.row(i).transpose(), x_.row(j).transpose());
  }
  double jitter = noise_;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::MatrixXd Kj = K;
    Kj.diagonal().array() += jitter;
    llt_.compute(Kj);
    if (llt_.info() == Eigen::Success) break;
    jitter *= 10.0;
  }
  if (llt_.info() != Eigen::Success) throw std::runtime_error("GP covariance is not positive definite");
  alpha_ = llt_.solve(ys);
}

std::pair<double, double> GaussianProcess::predict(const Eigen::VectorXd& x_unit) const {
  const Eigen::Index n = x_.rows();
  Eigen::VectorXd k(n);
  for (Eigen::Index i = 0; i < n; ++i) k(i) = kernel(x_.row(i).transpose(), x_unit);
  const double mean = k.dot(alpha_);
  const Eigen::VectorXd v = llt_.matrixL().solve(k);
  const double var = std::max(0.0, 1.0 - v.squaredNorm());
  return {y_mean_ + y_scale_ * mean, y_scale_ * std::sqrt(var)};
}

double expected_improvement(double mean, double sd, double best, double xi) {
  const double gain = best - mean - xi;
  if (sd <= 1e-15) return std::max(0.0, gain);
  const double z = gain / sd;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return gain * cdf + sd * pdf;
}

void BoConfig::validate() const {
  if (budget < 1 || initial < 1 || initial > budget) throw std::invalid_argument("BO needs 1 <= initial <= budget");
  if (candidates < 1) throw std::invalid_argument("BO needs at least one candidate per iteration");
}

BoResult bayes_opt(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& lo,
                   const Eigen::VectorXd& hi, const BoConfig& cfg, Rng& rng,
                   const std::vector<Eigen::VectorXd>& seed_points) {
  cfg.validate();
  const Eigen::Index d = lo.size();
  if (hi.size() != d || ((hi - lo).array() <= 0).any()) throw std::invalid_argument("invalid BO box");
  const Eigen::VectorXd span = hi - lo;
  BoResult res;
  res.best_value = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd xs(cfg.budget, d);
  Eigen::VectorXd ys(cfg.budget);
  auto transform = [&](double v) { return cfg.log_objective ? std::log(std::max(v, 1e-300)) : v; };

  auto evaluate = [&](int it, const Eigen::VectorXd& unit, bool seed) {
    const Eigen::VectorXd x = lo + span.cwiseProduct(unit);
    double v = f(x);
    if (!std::isfinite(v)) v = std::numeric_limits<double>::max();
    xs.row(it) = unit.transpose();
    ys(it) = transform(v);
    res.log.push_back({it, x, v, seed});
    if (v < res.best_value) {
      res.best_value = v;
      res.best_x = x;
      res.best_iteration = it;
    }
  };

  int it = 0;
  for (const auto& p : seed_points) {
    if (it >= cfg.initial) break;
    if (p.size() != d) throw std::invalid_argument("seed point has the wrong dimension");
    evaluate(it++, ((p - lo).array() / span.array()).cwiseMax(0.0).cwiseMin(1.0).matrix(), true);
  }
  for (; it < cfg.initial; ++it) {
    Eigen::VectorXd u(d);
    for (Eigen::Index j = 0; j < d; ++j) u(j) = rng.uniform();
    evaluate(it, u, true);
  }
  GaussianProcess gp;
  for (; it < cfg.budget; ++it) {
    gp.fit(xs.topRows(it), ys.head(it));
    const double best = ys.head(it).minCoeff();
    const Eigen::VectorXd incumbent = xs.row(res.best_iteration).transpose();
    Eigen::VectorXd best_u = incumbent;
    double best_ei = -1.0;
    const int local = std::max(1, cfg.candidates / 4);
    for (int c = 0; c < cfg.candidates + local; ++c) {
      Eigen::VectorXd u(d);
      for (Eigen::Index j = 0; j < d; ++j) {
        u(j) = c < cfg.candidates ? rng.uniform() : std::clamp(incumbent(j) + 0.05 * rng.normal(), 0.0, 1.0);
      }
      const auto [m, s] = gp.predict(u);
      const double ei = expected_improvement(m, s, best, cfg.xi);
      if (ei > best_ei) {
        best_ei = ei;
        best_u = u;
      }
    }
    evaluate(it, best_u, false);
  }
  return res;
}

ClosedLoopResult run_closed_loop(const GainVector& gains, const Plant& plant, const SuspensionDesign& design,
                                 const NoiseRoadConfig& road, double dt, std::size_t steps, Rng& rng) {
  const GainMatrix K = build_K(gains);
  const RewardWeights w;
  const DrivingCondition drive{road.speed, 0.0, 0.0};
  State x = State::Zero();
  ClosedLoopResult r;
  double sum_c2 = 0.0;
  double sum_u = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    WheelDisturbance wd;
    for (int i = 0; i < 4; ++i) wd.z_r(i) = rng.normal(0.0, road.z_std);
    for (int i = 0; i < 4; ++i) wd.zdot_r(i) = rng.normal(0.0, road.zdot_std);
    const Action u = -K * observe(x);
    const State xd = derivative<double>(x, u, drive, wd, plant, design);
    const double c = step_reward<double>(x, xd, u, w).comfort;
    x = rk4_step<double>(x, u, drive, wd, plant, design, dt);
    if (diverged(x) || !std::isfinite(c)) {
      r.diverged = true;
      break;
    }
    sum_c2 += c * c;
    sum_u += u.cwiseAbs().sum();
    ++r.steps;
  }
  if (r.steps > 0) {
    r.rms_comfort = std::sqrt(sum_c2 / static_cast<double>(r.steps));
    r.mean_abs_u = sum_u / (4.0 * static_cast<double>(r.steps));
  }
  return r;
}

void WarmStartConfig::validate() const {
  bounds.validate();
  bo.validate();
  if (eval_steps < 1 || !(divergence_penalty > 0)) throw std::invalid_argument("invalid warm-start evaluation");
  if (pretrain_episodes < 1 || pretrain_episode_len < 1 || pretrain_steps < 0 || pretrain_minibatch < 1 ||
      !(pretrain_lr > 0) || !(holdout_fraction >= 0 && holdout_fraction < 1)) {
    throw std::invalid_argument("invalid pretraining schedule");
  }
}

WarmStartResult tune_gains(const WarmStartConfig& cfg, const Plant& plant, const SuspensionDesign& design,
                           const NoiseRoadConfig& road, double dt, std::uint64_t eval_seed, Rng& rng) {
  cfg.validate();
  const auto steps = static_cast<std::size_t>(cfg.eval_steps);
  // Every candidate sees the same road noise.
  auto objective = [&](const Eigen::VectorXd& k) {
    Rng eval(eval_seed);
    const ClosedLoopResult r = run_closed_loop(GainVector(k), plant, design, road, dt, steps, eval);
    return r.diverged ? cfg.divergence_penalty : r.rms_comfort;
  };
  WarmStartResult out;
  out.zero_gain_objective = objective(Eigen::VectorXd::Zero(5));
  if (cfg.skip_bo) {
    out.gains = reference_gains();
    out.objective = objective(out.gains);
    return out;
  }
  out.bo = bayes_opt(objective, cfg.bounds.lo, cfg.bounds.hi, cfg.bo, rng, {Eigen::VectorXd::Zero(5)});
  out.gains = out.bo.best_x;
  out.objective = out.bo.best_value;
  return out;
}

PretrainData warmstart_dataset(const GainVector& gains, const Plant& plant, const DesignBounds& bounds,
                               const NoiseRoadConfig& road, double dt, int episodes, int episode_len, Rng& rng) {
  const GainMatrix K = build_K(gains);
  const DrivingCondition drive{road.speed, 0.0, 0.0};
  const auto n = static_cast<Eigen::Index>(episodes) * episode_len;
  PretrainData d;
  d.obs.resize(n, kObsDim);
  d.design.resize(n, 2);
  d.actions.resize(n, kActionDim);
  Eigen::Index row = 0;
  for (int e = 0; e < episodes; ++e) {
    const SuspensionDesign p{rng.uniform(bounds.k_min, bounds.k_max), rng.uniform(bounds.c_min, bounds.c_max)};
    State x = State::Zero();
    for (int k = 0; k < episode_len; ++k) {
      WheelDisturbance wd;
      for (int i = 0; i < 4; ++i) wd.z_r(i) = rng.normal(0.0, road.z_std);
      for (int i = 0; i < 4; ++i) wd.zdot_r(i) = rng.normal(0.0, road.zdot_std);
      const Observation y = observe(x);
      const Action u = -K * y;
      d.obs.row(row) = y.transpose();
      d.design(row, 0) = p.k_s;
      d.design(row, 1) = p.c_s;
      d.actions.row(row) = u.transpose();
      ++row;
      x = rk4_step<double>(x, u, drive, wd, plant, p, dt);
      if (diverged(x)) throw std::runtime_error("warm-start controller diverged while collecting pretraining data");
    }
  }
  return d;
}

Observation observation_scale(const ad::Matrix& obs) {
  if (obs.rows() == 0) return Observation::Ones();
  const Eigen::RowVectorXd mean = obs.colwise().mean();
  Observation s = ((obs.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(obs.rows()))
                      .cwiseSqrt()
                      .transpose();
  return s.cwiseMax(1e-6);
}

ad::Matrix network_input_with_designs(const Agent& agent, const ad::Matrix& obs, const ad::Matrix& design) {
  ad::Matrix in(obs.rows(), kDesignDim + kObsDim);
  in.col(0) = design.col(0) / agent.bounds().k_mid();
  in.col(1) = design.col(1) / agent.bounds().c_mid();
  in.rightCols(kObsDim) = obs * agent.obs_scale().cwiseInverse().asDiagonal();
  return in;
}

PretrainReport pretrain_mean(Agent& agent, const PretrainData& data, const WarmStartConfig& cfg, Rng& rng) {
  const Eigen::Index n = data.obs.rows();
  if (n == 0) throw std::invalid_argument("pretraining needs a nonempty dataset");
  const auto holdout = static_cast<Eigen::Index>(std::floor(cfg.holdout_fraction * static_cast<double>(n)));
  const Eigen::Index n_train = n - holdout;
  const ad::Matrix inputs = network_input_with_designs(agent, data.obs, data.design);
  const ad::Matrix targets = data.actions / agent.action_scale();

  Adam opt(AdamConfig{cfg.pretrain_lr});
  auto params = agent.mean_net().parameters();
  PretrainReport rep;
  const Eigen::Index mb = std::min<Eigen::Index>(cfg.pretrain_minibatch, n_train);
  for (int step = 0; step < cfg.pretrain_steps; ++step) {
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(mb));
    for (auto& r : rows) r = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n_train)));
    ad::Tape tape;
    const ad::Var x = tape.constant(inputs(rows, Eigen::all));
    const ad::Var t = tape.constant(targets(rows, Eigen::all));
    const ad::Var loss = ad::mean(ad::square(ad::sub(agent.mean_net().forward(tape, x), t)));
    ad::zero_grad(params);
    tape.backward(loss);
    if (!opt.step(params)) throw std::runtime_error("non-finite gradient during policy pretraining");
    ++rep.steps;
  }
  const ad::Matrix fit_train = agent.mean_net().forward(inputs.topRows(n_train));
  rep.train_mse = (fit_train - targets.topRows(n_train)).squaredNorm() / static_cast<double>(n_train * kActionDim);
  if (holdout > 0) {
    const ad::Matrix fit = agent.mean_net().forward(inputs.bottomRows(holdout));
    const double err = (fit - targets.bottomRows(holdout)).norm();
    const double ref = targets.bottomRows(holdout).norm();
    rep.holdout_rel_rmse = ref > 0 ? err / ref : err;
  }
  return rep;
}

void write_bo_csv(const std::filesystem::path& path, const BoResult& r) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.precision(17);
  os << "iteration,seed_point,objective";
  const Eigen::Index d = r.log.empty() ? 0 : r.log.front().x.size();
  for (Eigen::Index j = 0; j < d; ++j) os << ",k" << j;
  os << '\n';
  for (const auto& e : r.log) {
    os << e.iteration << ',' << e.seed_point << ',' << e.value;
    for (Eigen::Index j = 0; j < e.x.size(); ++j) os << ',' << e.x(j);
    os << '\n';
  }
}

}  // namespace twinccd
