#pragma once

// Ride-comfort index, the step reward, and the quantile-width penalty used
// once a discrepancy model is in the loop.

#include <Eigen/Dense>

#include <cmath>

#include "twinccd/vehicle.hpp"

namespace twinccd {

struct RewardWeights {
  double w1 = 10.0;  // heave acceleration
  double w2 = 1.0;   // pitch acceleration
  double w3 = 0.5;   // roll acceleration
  double c1 = 1.0 / 0.00004;  // pitch angle
  double c2 = 1.0 / 0.00003;  // roll angle
  double c3 = 0.0001;         // control effort
  double lambda_u = 1.0;      // quantile-width penalty

  void validate() const;
};

template <typename Scalar>
using Vector3T = Eigen::Matrix<Scalar, 3, 1>;

// sqrt with a zero derivative at the origin instead of an infinite one.
template <typename Scalar>
Scalar guarded_sqrt(const Scalar& v) {
  using std::sqrt;
  if (v <= 0.0) return Scalar(0.0);
  return sqrt(v);
}

template <typename Scalar>
struct RewardTermsT {
  Scalar comfort;
  Scalar cost;  // comfort + angle penalties + control effort
  Scalar reward() const { return -cost; }
};
using RewardTerms = RewardTermsT<double>;

// accel = (zddot_s, alphaddot, betaddot).
template <typename Scalar>
RewardTermsT<Scalar> comfort_and_reward(const Vector3T<Scalar>& accel, const Scalar& alpha, const Scalar& beta,
                                        const Action& u, const RewardWeights& w) {
  const Scalar a = w.w1 * accel(0);
  const Scalar b = w.w2 * accel(1);
  const Scalar c = w.w3 * accel(2);
  RewardTermsT<Scalar> t;
  t.comfort = guarded_sqrt<Scalar>(a * a + b * b + c * c);
  t.cost = t.comfort + w.c1 * alpha * alpha + w.c2 * beta * beta + w.c3 * u.squaredNorm();
  return t;
}

// Reward of taking u in state x: accelerations from the model derivative
// at (x, u), plus an optional additive acceleration correction.
template <typename Scalar>
RewardTermsT<Scalar> step_reward(const StateT<Scalar>& x, const StateT<Scalar>& xdot, const Action& u,
                                 const RewardWeights& w,
                                 const Eigen::Vector3d& accel_correction = Eigen::Vector3d::Zero()) {
  Vector3T<Scalar> acc;
  acc(0) = xdot(idx::zdot_s) + accel_correction(0);
  acc(1) = xdot(idx::alphadot) + accel_correction(1);
  acc(2) = xdot(idx::betadot) + accel_correction(2);
  return comfort_and_reward<Scalar>(acc, x(idx::alpha), x(idx::beta), u, w);
}

// Uncertainty magnitudes derived from a quantile band of the next
// observation. Velocity widths become acceleration widths through one step
// (width / dt) and angle widths through one integration step (width * dt).
struct UncertaintyWidths {
  double heave_accel = 0.0;
  double pitch_accel = 0.0;
  double roll_accel = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
};

UncertaintyWidths widths_from_band(const Observation& band_width, double dt);

// J = sqrt((w1 da)^2 + (w2 dpitch'')^2 + (w3 droll'')^2) + c1 dpitch^2 + c2 droll^2.
double uncertainty_penalty(const UncertaintyWidths& u, const RewardWeights& w);

}  // namespace twinccd
