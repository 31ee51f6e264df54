#pragma once

// Driver profiles, the vehicle path they produce, and the per-wheel road
// inputs sampled along that path.

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "twinccd/road.hpp"
#include "twinccd/vehicle.hpp"

namespace twinccd {

enum class DriverStyle { mild, aggressive };

std::string_view to_string(DriverStyle s);
DriverStyle parse_driver_style(std::string_view s);

// One trapezoidal steering pulse inside a repeating period. `duration`
// includes both ramps.
struct SteeringManeuver {
  double start = 0.0;
  double duration = 1.0;
  double amplitude = 0.0;
  double ramp = 0.2;
};

struct ProfileConfig {
  double duration = 1200.0;
  double dt = 0.01;
  double accel = 2.0;          // m/s^2, also the braking magnitude
  double cruise_speed = 12.0;  // m/s
  double accel_ramp = 1.0;     // s, jerk-limited ramp of the acceleration pulse
  double launch_time = 1.0;    // s at rest before accelerating
  double stop_margin = 5.0;    // s at rest after braking ends
  double steering_start = 10.0;
  double steering_period = 40.0;
  std::vector<SteeringManeuver> maneuvers;
  int sg_window = 51;
  int sg_order = 3;
  // Start pose of the centre of gravity on the road surface.
  double x0 = 1150.0;
  double y0 = 670.0;
  double psi0 = 0.0;

  static ProfileConfig defaults(DriverStyle style);
  void validate() const;
  std::size_t steps() const;
};

struct DrivingProfile {
  DriverStyle style = DriverStyle::mild;
  double dt = 0.01;
  Eigen::VectorXd accel;
  Eigen::VectorXd steering;
  Eigen::VectorXd raw_accel;
  Eigen::VectorXd raw_steering;
  std::size_t size() const { return static_cast<std::size_t>(accel.size()); }
};

struct VehicleTrajectory {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd v;
  Eigen::VectorXd psi;
  Eigen::VectorXd psidot;
  std::size_t size() const { return static_cast<std::size_t>(x.size()); }
};

DrivingProfile build_driving_profile(DriverStyle style, const ProfileConfig& cfg);
inline DrivingProfile build_driving_profile(DriverStyle style) {
  return build_driving_profile(style, ProfileConfig::defaults(style));
}

// Kinematic bicycle: v integrates a (clamped at 0), psidot = v tan(delta) / (l_f + l_r),
// position advanced along the exact arc for constant (v, psidot) over a step.
VehicleTrajectory integrate_trajectory(const DrivingProfile& profile, const VehicleParams& params, double x0,
                                       double y0, double psi0, double v0 = 0.0);

// Contact points FL, FR, RL, RR in world coordinates.
std::array<Eigen::Vector2d, 4> wheel_positions(double x, double y, double psi, const VehicleParams& params);

WheelDisturbance wheel_disturbance(const RoadSurface& surface, double x, double y, double psi, double v,
                                   const VehicleParams& params);

// Per-step driving condition and wheel inputs for a whole profile, ready
// for simulation.
struct DisturbanceSeries {
  double dt = 0.01;
  std::vector<DrivingCondition> drive;
  std::vector<WheelDisturbance> road;
  std::size_t size() const { return drive.size(); }
};

DisturbanceSeries build_disturbance_series(const DrivingProfile& profile, const VehicleTrajectory& traj,
                                           const RoadSurface& surface, const VehicleParams& params);

void write_profile_csv(const std::filesystem::path& path, const DrivingProfile& profile,
                       const VehicleTrajectory& traj);

}  // namespace twinccd
