#include "twinccd/profile.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "twinccd/savgol.hpp"

namespace twinccd {

namespace {

// Trapezoid of height `amp` starting at `start`, lasting `duration`
// (ramps included).
double trapezoid(double t, double start, double duration, double amp, double ramp) {
  const double up = (t - start) / ramp;
  const double down = (start + duration - t) / ramp;
  return amp * std::clamp(std::min(up, down), 0.0, 1.0);
}

}  // namespace

std::string_view to_string(DriverStyle s) { return s == DriverStyle::mild ? "mild" : "aggressive"; }

DriverStyle parse_driver_style(std::string_view s) {
  if (s == "mild") return DriverStyle::mild;
  if (s == "aggressive") return DriverStyle::aggressive;
  throw std::invalid_argument("unknown driver style '" + std::string(s) + "' (expected mild|aggressive)");
}

ProfileConfig ProfileConfig::defaults(DriverStyle style) {
  ProfileConfig c;
  if (style == DriverStyle::mild) {
    c.accel = 2.0;
    c.cruise_speed = 12.0;
    c.steering_period = 40.0;
    // Infrequent, smooth: a long gentle left and a shorter gentle right.
    c.maneuvers = {{0.0, 9.0, 0.05, 1.5}, {22.0, 5.0, -0.03, 1.5}};
  } else {
    c.accel = 6.0;
    c.cruise_speed = 20.0;
    c.steering_period = 14.0;
    // Frequent, sharp alternating turns.
    c.maneuvers = {{0.0, 1.2, 0.165, 0.2}, {4.0, 1.0, -0.12, 0.2}, {7.0, 0.8, 0.15, 0.2}, {10.0, 1.0, -0.10, 0.2}};
  }
  return c;
}

void ProfileConfig::validate() const {
  if (!(dt > 0) || !(duration > 0)) throw std::invalid_argument("profile duration and dt must be positive");
  if (!(accel > 0) || !(cruise_speed > 0)) throw std::invalid_argument("profile accel and cruise speed must be positive");
  if (!(accel_ramp > 0) || !(steering_period > 0)) throw std::invalid_argument("profile ramps/period must be positive");
  for (const auto& m : maneuvers) {
    if (!(m.ramp > 0) || m.duration < 2 * m.ramp) throw std::invalid_argument("steering maneuver shorter than its ramps");
  }
  const double pulse = cruise_speed / accel + accel_ramp;
  if (launch_time + 2 * pulse + stop_margin > duration) throw std::invalid_argument("profile too short for its phases");
}

std::size_t ProfileConfig::steps() const { return static_cast<std::size_t>(std::llround(duration / dt)); }

DrivingProfile build_driving_profile(DriverStyle style, const ProfileConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.steps();
  DrivingProfile p;
  p.style = style;
  p.dt = cfg.dt;
  p.raw_accel = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  p.raw_steering = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));

  // A trapezoid with ramp r and total length T has area amp * (T - r), so
  // T = v / a + r reaches the cruise speed exactly.
  const double pulse = cfg.cruise_speed / cfg.accel + cfg.accel_ramp;
  const double brake_start = cfg.duration - cfg.stop_margin - pulse;
  const double steer_end = brake_start - cfg.steering_period;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * cfg.dt;
    const auto i = static_cast<Eigen::Index>(k);
    p.raw_accel(i) = trapezoid(t, cfg.launch_time, pulse, cfg.accel, cfg.accel_ramp) -
                     trapezoid(t, brake_start, pulse, cfg.accel, cfg.accel_ramp);
    if (t >= cfg.steering_start && t < steer_end) {
      const double phase_origin =
          cfg.steering_start + std::floor((t - cfg.steering_start) / cfg.steering_period) * cfg.steering_period;
      double d = 0.0;
      for (const auto& m : cfg.maneuvers) d += trapezoid(t, phase_origin + m.start, m.duration, m.amplitude, m.ramp);
      p.raw_steering(i) = d;
    }
  }
  const SavitzkyGolay sg(cfg.sg_window, cfg.sg_order);
  p.accel = sg.apply(p.raw_accel);
  p.steering = sg.apply(p.raw_steering);
  return p;
}

VehicleTrajectory integrate_trajectory(const DrivingProfile& profile, const VehicleParams& params, double x0,
                                       double y0, double psi0, double v0) {
  const auto n = static_cast<Eigen::Index>(profile.size());
  const double dt = profile.dt;
  const double wheelbase = params.l_f + params.l_r;
  VehicleTrajectory tr;
  tr.x.resize(n);
  tr.y.resize(n);
  tr.v.resize(n);
  tr.psi.resize(n);
  tr.psidot.resize(n);
  double x = x0, y = y0, psi = psi0, v = std::max(0.0, v0);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double w = v * std::tan(profile.steering(k)) / wheelbase;
    tr.x(k) = x;
    tr.y(k) = y;
    tr.v(k) = v;
    tr.psi(k) = psi;
    tr.psidot(k) = w;
    const double turn = w * dt;
    if (std::abs(turn) > 1e-12) {
      const double r = v / w;
      x += r * (std::sin(psi + turn) - std::sin(psi));
      y -= r * (std::cos(psi + turn) - std::cos(psi));
    } else {
      x += v * dt * std::cos(psi);
      y += v * dt * std::sin(psi);
    }
    psi += turn;
    v = std::max(0.0, v + profile.accel(k) * dt);
  }
  return tr;
}

std::array<Eigen::Vector2d, 4> wheel_positions(double x, double y, double psi, const VehicleParams& params) {
  // body frame: x forward, y to the left
  const std::array<Eigen::Vector2d, 4> offsets = {Eigen::Vector2d(params.l_f, params.l / 2),
                                                  Eigen::Vector2d(params.l_f, -params.l / 2),
                                                  Eigen::Vector2d(-params.l_r, params.l / 2),
                                                  Eigen::Vector2d(-params.l_r, -params.l / 2)};
  const double c = std::cos(psi);
  const double s = std::sin(psi);
  std::array<Eigen::Vector2d, 4> out;
  for (int i = 0; i < 4; ++i) {
    const auto& o = offsets[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)] = {x + o.x() * c - o.y() * s, y + o.x() * s + o.y() * c};
  }
  return out;
}

WheelDisturbance wheel_disturbance(const RoadSurface& surface, double x, double y, double psi, double v,
                                   const VehicleParams& params) {
  WheelDisturbance w;
  const auto pos = wheel_positions(x, y, psi, params);
  const double vx = v * std::cos(psi);
  const double vy = v * std::sin(psi);
  for (int i = 0; i < 4; ++i) {
    const auto& p = pos[static_cast<std::size_t>(i)];
    const ElevationSample s = surface.sample(p.x(), p.y());
    w.z_r(i) = s.z;
    w.zdot_r(i) = s.dz_dx * vx + s.dz_dy * vy;
  }
  return w;
}

DisturbanceSeries build_disturbance_series(const DrivingProfile& profile, const VehicleTrajectory& traj,
                                           const RoadSurface& surface, const VehicleParams& params) {
  if (traj.size() != profile.size()) throw std::invalid_argument("trajectory and profile lengths differ");
  DisturbanceSeries s;
  s.dt = profile.dt;
  s.drive.resize(profile.size());
  s.road.resize(profile.size());
  for (std::size_t k = 0; k < profile.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    s.drive[k] = {traj.v(i), profile.accel(i), profile.steering(i)};
    s.road[k] = wheel_disturbance(surface, traj.x(i), traj.y(i), traj.psi(i), traj.v(i), params);
  }
  return s;
}

void write_profile_csv(const std::filesystem::path& path, const DrivingProfile& profile,
                       const VehicleTrajectory& traj) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.precision(17);
  os << "t,a,delta,x,y,v,psi,psidot\n";
  for (std::size_t k = 0; k < profile.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    os << static_cast<double>(k) * profile.dt << ',' << profile.accel(i) << ',' << profile.steering(i) << ','
       << traj.x(i) << ',' << traj.y(i) << ',' << traj.v(i) << ',' << traj.psi(i) << ',' << traj.psidot(i) << '\n';
  }
}

}  // namespace twinccd
