#include "twinccd/reward.hpp"

#include <stdexcept>

namespace twinccd {

void RewardWeights::validate() const {
  for (double v : {w1, w2, w3, c1, c2, c3, lambda_u}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("reward weights must be finite and non-negative");
  }
}

UncertaintyWidths widths_from_band(const Observation& band_width, double dt) {
  UncertaintyWidths u;
  u.heave_accel = band_width(0) / dt;
  u.pitch_accel = band_width(1) / dt;
  u.roll_accel = band_width(2) / dt;
  u.pitch = band_width(1) * dt;
  u.roll = band_width(2) * dt;
  return u;
}

double uncertainty_penalty(const UncertaintyWidths& u, const RewardWeights& w) {
  const double a = w.w1 * u.heave_accel;
  const double b = w.w2 * u.pitch_accel;
  const double c = w.w3 * u.roll_accel;
  return std::sqrt(a * a + b * b + c * c) + w.c1 * u.pitch * u.pitch + w.c2 * u.roll * u.roll;
}

}  // namespace twinccd
