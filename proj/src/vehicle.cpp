#include "twinccd/vehicle.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace twinccd {

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw std::invalid_argument(std::string(name) + " must be strictly positive, got " + std::to_string(v));
  }
}

}  // namespace

void VehicleParams::validate() const {
  require_positive(m_s, "m_s");
  require_positive(I_alpha, "I_alpha");
  require_positive(I_beta, "I_beta");
  for (int i = 0; i < 4; ++i) {
    require_positive(m_u(i), "m_u");
    require_positive(k_t(i), "k_t");
  }
  require_positive(c_t, "c_t");
  require_positive(l_f, "l_f");
  require_positive(l_r, "l_r");
  require_positive(l, "l");
  require_positive(h_cg, "h_cg");
}

SuspensionDesign DesignBounds::clamp(const SuspensionDesign& d) const {
  return {std::clamp(d.k_s, k_min, k_max), std::clamp(d.c_s, c_min, c_max)};
}

void DesignBounds::validate() const {
  require_positive(k_min, "design k_min");
  require_positive(c_min, "design c_min");
  if (!(k_max > k_min) || !(c_max > c_min)) throw std::invalid_argument("design bounds must satisfy min < max");
}

void RealSystemPerturbation::validate() const {
  require_positive(mass_inertia_scale, "mass_inertia_scale");
  for (int i = 0; i < 4; ++i) {
    require_positive(m_u(i), "perturbed m_u");
    require_positive(k_t_scale(i), "k_t_scale");
  }
  if (k_nl_ratio < 0.0 || c_nl_ratio < 0.0) throw std::invalid_argument("nonlinear ratios must be non-negative");
}

VehicleParams RealSystemPerturbation::apply(const VehicleParams& nominal) const {
  VehicleParams p = nominal;
  p.m_u = m_u;
  p.h_cg = nominal.h_cg + h_cg_delta;
  p.k_t = nominal.k_t.cwiseProduct(k_t_scale);
  p.m_s = nominal.m_s * mass_inertia_scale;
  p.I_alpha = nominal.I_alpha * mass_inertia_scale;
  p.I_beta = nominal.I_beta * mass_inertia_scale;
  p.validate();
  return p;
}

const ObservationMatrix& observation_matrix() {
  static const ObservationMatrix C = [] {
    ObservationMatrix m = ObservationMatrix::Zero();
    m(0, idx::zdot_s) = 1.0;
    m(1, idx::alphadot) = 1.0;
    m(2, idx::betadot) = 1.0;
    for (int i = 0; i < 4; ++i) {
      m(3 + i, idx::z_u + i) = 1.0;
      m(7 + i, idx::z_s) = 1.0;
      m(7 + i, idx::z_u + i) = -1.0;
    }
    return m;
  }();
  return C;
}

LinearModel linearize(const VehicleParams& p, const SuspensionDesign& d) {
  // The nominal model is affine in (x, u, road) when a = delta = 0, so unit
  // probes recover the columns exactly.
  const Plant plant = Plant::nominal(p);
  const DrivingCondition still{};
  LinearModel lm;
  const State zero = State::Zero();
  for (int j = 0; j < kStateDim; ++j) {
    State e = State::Zero();
    e(j) = 1.0;
    lm.A.col(j) = derivative<double>(e, Action::Zero(), still, {}, plant, d);
  }
  for (int j = 0; j < kActionDim; ++j) {
    Action u = Action::Zero();
    u(j) = 1.0;
    lm.B.col(j) = derivative<double>(zero, u, still, {}, plant, d);
  }
  for (int j = 0; j < 8; ++j) {
    WheelDisturbance w;
    if (j < 4) w.z_r(j) = 1.0;
    else w.zdot_r(j - 4) = 1.0;
    lm.E.col(j) = derivative<double>(zero, Action::Zero(), still, w, plant, d);
  }
  return lm;
}

}  // namespace twinccd
