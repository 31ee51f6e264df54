#pragma once

// Seven-degree-of-freedom full-vehicle model with active suspension.
//
// State layout (14): z_s, alpha, beta, z_u1..z_u4, then their rates.
// Observation layout (11): zdot_s, alphadot, betadot, z_u1..z_u4,
// z_s - z_u1 .. z_s - z_u4.
// Wheel order everywhere: 1 = front-left, 2 = front-right, 3 = rear-left,
// 4 = rear-right.
//
// The dynamics are templated on the scalar type so the same code runs on
// doubles and on forward-mode derivative scalars (Eigen::AutoDiffScalar),
// which is how gradients of rollouts with respect to the suspension design
// are obtained.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <utility>

namespace twinccd {

inline constexpr int kStateDim = 14;
inline constexpr int kObsDim = 11;
inline constexpr int kActionDim = 4;
inline constexpr int kDesignDim = 2;

template <typename Scalar>
using StateT = Eigen::Matrix<Scalar, kStateDim, 1>;
template <typename Scalar>
using Vector4T = Eigen::Matrix<Scalar, 4, 1>;

using State = StateT<double>;
using Observation = Eigen::Matrix<double, kObsDim, 1>;
using Action = Eigen::Vector4d;
using Wheel4 = Eigen::Vector4d;
using ObservationMatrix = Eigen::Matrix<double, kObsDim, kStateDim>;

// Index helpers into the state vector.
namespace idx {
inline constexpr int z_s = 0;
inline constexpr int alpha = 1;
inline constexpr int beta = 2;
inline constexpr int z_u = 3;  // z_u1..z_u4 at 3..6
inline constexpr int zdot_s = 7;
inline constexpr int alphadot = 8;
inline constexpr int betadot = 9;
inline constexpr int zdot_u = 10;  // 10..13
}  // namespace idx

struct VehicleParams {
  double m_s = 1500.0;
  double I_alpha = 2500.0;
  double I_beta = 500.0;
  Wheel4 m_u = Wheel4::Constant(50.0);
  Wheel4 k_t = Wheel4::Constant(2.0e5);
  double c_t = 150.0;
  double l_f = 1.35;
  double l_r = 1.35;
  double l = 0.75;
  double h_cg = 0.55;

  static VehicleParams nominal() { return {}; }

  // Throws std::invalid_argument when a field is not strictly positive.
  void validate() const;

  // Longitudinal lever arms d_x (front negative) and lateral arms d_y.
  Wheel4 lever_x() const { return {-l_f, -l_f, l_r, l_r}; }
  Wheel4 lever_y() const { return {l / 2, -l / 2, l / 2, -l / 2}; }
};

// Co-designed spring and damper, shared by all four corners.
template <typename Scalar = double>
struct SuspensionDesignT {
  Scalar k_s;
  Scalar c_s;
};
using SuspensionDesign = SuspensionDesignT<double>;

struct DesignBounds {
  double k_min = 5000.0;
  double k_max = 60000.0;
  double c_min = 500.0;
  double c_max = 6000.0;

  double k_mid() const { return 0.5 * (k_min + k_max); }
  double c_mid() const { return 0.5 * (c_min + c_max); }
  bool contains(const SuspensionDesign& d) const {
    return d.k_s >= k_min && d.k_s <= k_max && d.c_s >= c_min && d.c_s <= c_max;
  }
  SuspensionDesign clamp(const SuspensionDesign& d) const;
  void validate() const;
};

// Deviations that turn the nominal digital model into the emulated physical
// vehicle: nonlinear spring/damper, uneven unsprung masses, raised CG,
// per-wheel tire stiffness and heavier body.
struct RealSystemPerturbation {
  double k_nl_ratio = 0.1;  // k_nl = ratio * k_s
  double c_nl_ratio = 0.1;  // c_nl = ratio * c_s
  Wheel4 m_u{60.0, 50.0, 45.0, 50.0};
  double h_cg_delta = 0.05;
  Wheel4 k_t_scale{0.9, 1.2, 1.1, 0.9};
  double mass_inertia_scale = 1.1;

  void validate() const;
  VehicleParams apply(const VehicleParams& nominal) const;
};

// Coefficients of the extra cubic-spring / quadratic-damper terms.
template <typename Scalar>
struct NonlinearTerms {
  Scalar k_nl;
  Scalar c_nl;
};

// A concrete plant: physical parameters plus, for the emulated real system,
// the nonlinear suspension ratios.
struct Plant {
  VehicleParams params;
  std::optional<RealSystemPerturbation> perturbation;

  static Plant nominal(const VehicleParams& p = VehicleParams::nominal()) { return {p, std::nullopt}; }
  static Plant real(const VehicleParams& nominal_params,
                    const RealSystemPerturbation& pert = RealSystemPerturbation{}) {
    return {pert.apply(nominal_params), pert};
  }
  bool is_real() const { return perturbation.has_value(); }
};

struct DrivingCondition {
  double v = 0.0;
  double a = 0.0;
  double delta = 0.0;
};

struct WheelDisturbance {
  Wheel4 z_r = Wheel4::Zero();
  Wheel4 zdot_r = Wheel4::Zero();
};

// Body displacement at each corner caused by pitch and roll, and its rate.
template <typename Scalar>
std::pair<Vector4T<Scalar>, Vector4T<Scalar>> geometric_offsets(const StateT<Scalar>& x,
                                                                 const VehicleParams& p) {
  const Scalar& a = x(idx::alpha);
  const Scalar& b = x(idx::beta);
  const Scalar& ad = x(idx::alphadot);
  const Scalar& bd = x(idx::betadot);
  const Wheel4 dx = p.lever_x();
  const Wheel4 dy = p.lever_y();
  Vector4T<Scalar> delta;
  Vector4T<Scalar> rate;
  for (int i = 0; i < 4; ++i) {
    delta(i) = dx(i) * a + dy(i) * b;
    rate(i) = dx(i) * ad + dy(i) * bd;
  }
  return {delta, rate};
}

template <typename Scalar>
Scalar suspension_force(const SuspensionDesignT<Scalar>& d, const Scalar& rel_disp,
                        const Scalar& rel_vel,
                        const std::optional<NonlinearTerms<Scalar>>& nonlinear = std::nullopt) {
  using std::abs;
  Scalar f = d.k_s * rel_disp + d.c_s * rel_vel;
  if (nonlinear) {
    f += nonlinear->k_nl * rel_disp * rel_disp * rel_disp + nonlinear->c_nl * abs(rel_vel) * rel_vel;
  }
  return f;
}

// wheel is zero-based (0..3).
template <typename Scalar>
Scalar tire_force(const VehicleParams& p, int wheel, const WheelDisturbance& road,
                  const StateT<Scalar>& x) {
  return p.k_t(wheel) * (road.z_r(wheel) - x(idx::z_u + wheel)) +
         p.c_t * (road.zdot_r(wheel) - x(idx::zdot_u + wheel));
}

// Pitch moment from longitudinal acceleration, roll moment from cornering.
inline std::pair<double, double> coupling_moments(const VehicleParams& p, const DrivingCondition& drive) {
  const double m_alpha = p.m_s * p.h_cg * drive.a;
  const double m_beta = p.m_s * p.h_cg * drive.v * drive.v * std::tan(drive.delta) / (p.l_f + p.l_r);
  return {m_alpha, m_beta};
}

template <typename Scalar>
StateT<Scalar> derivative(const StateT<Scalar>& x, const Action& u, const DrivingCondition& drive,
                          const WheelDisturbance& road, const Plant& plant,
                          const SuspensionDesignT<Scalar>& design) {
  const VehicleParams& p = plant.params;
  const auto [delta, delta_rate] = geometric_offsets<Scalar>(x, p);
  std::optional<NonlinearTerms<Scalar>> nl;
  if (plant.perturbation) {
    nl = NonlinearTerms<Scalar>{plant.perturbation->k_nl_ratio * design.k_s,
                                plant.perturbation->c_nl_ratio * design.c_s};
  }
  const Wheel4 dx = p.lever_x();
  const Wheel4 dy = p.lever_y();
  const auto [m_alpha, m_beta] = coupling_moments(p, drive);

  StateT<Scalar> xd;
  Scalar heave(0.0);
  Scalar pitch(m_alpha);
  Scalar roll(m_beta);
  for (int i = 0; i < 4; ++i) {
    const Scalar rel_disp = x(idx::z_u + i) - x(idx::z_s) - delta(i);
    const Scalar rel_vel = x(idx::zdot_u + i) - x(idx::zdot_s) - delta_rate(i);
    const Scalar fs = suspension_force<Scalar>(design, rel_disp, rel_vel, nl);
    const Scalar ft = tire_force<Scalar>(p, i, road, x);
    const Scalar body = fs + u(i);
    heave += body;
    pitch += body * dx(i);
    roll += body * dy(i);
    xd(idx::zdot_u + i) = (ft - fs - u(i)) / p.m_u(i);
  }
  for (int i = 0; i < 7; ++i) xd(i) = x(i + 7);
  xd(idx::zdot_s) = heave / p.m_s;
  xd(idx::alphadot) = pitch / p.I_alpha;
  xd(idx::betadot) = roll / p.I_beta;
  return xd;
}

// Classical RK4 with drive and road held over the step.
template <typename Scalar>
StateT<Scalar> rk4_step(const StateT<Scalar>& x, const Action& u, const DrivingCondition& drive,
                        const WheelDisturbance& road, const Plant& plant,
                        const SuspensionDesignT<Scalar>& design, double dt) {
  const StateT<Scalar> k1 = derivative<Scalar>(x, u, drive, road, plant, design);
  const StateT<Scalar> k2 = derivative<Scalar>(StateT<Scalar>(x + (0.5 * dt) * k1), u, drive, road, plant, design);
  const StateT<Scalar> k3 = derivative<Scalar>(StateT<Scalar>(x + (0.5 * dt) * k2), u, drive, road, plant, design);
  const StateT<Scalar> k4 = derivative<Scalar>(StateT<Scalar>(x + dt * k3), u, drive, road, plant, design);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

const ObservationMatrix& observation_matrix();

template <typename Derived>
Observation observe(const Eigen::MatrixBase<Derived>& x) {
  Observation y;
  y(0) = x(idx::zdot_s);
  y(1) = x(idx::alphadot);
  y(2) = x(idx::betadot);
  for (int i = 0; i < 4; ++i) {
    y(3 + i) = x(idx::z_u + i);
    y(7 + i) = x(idx::z_s) - x(idx::z_u + i);
  }
  return y;
}

inline constexpr double kDivergenceLimit = 1e6;

// True when any component is non-finite or beyond the divergence limit.
template <typename Derived>
bool diverged(const Eigen::MatrixBase<Derived>& x, double limit = kDivergenceLimit) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x(i);
    if (!std::isfinite(v) || std::abs(v) > limit) return true;
  }
  return false;
}

// Optional symmetric actuator saturation; disabled by default.
struct ActuatorLimit {
  bool enabled = false;
  double limit = 5000.0;
  Action apply(const Action& u) const {
    return enabled ? Action(u.cwiseMax(-limit).cwiseMin(limit)) : u;
  }
};

// Linearisation of the nominal model about the zero state:
// xdot = A x + B u + E [z_r; zdot_r] for a = delta = 0.
struct LinearModel {
  Eigen::Matrix<double, kStateDim, kStateDim> A;
  Eigen::Matrix<double, kStateDim, kActionDim> B;
  Eigen::Matrix<double, kStateDim, 8> E;
};
LinearModel linearize(const VehicleParams& p, const SuspensionDesign& d);

}  // namespace twinccd
