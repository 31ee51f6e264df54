#pragma once

// The single run configuration document. Every tunable of the other modules
// appears here under a fixed key; loading rejects unknown keys and invalid
// values. Two presets: "paper" (full schedule) and "desk" (reduced epochs).

#include <filesystem>
#include <string>

#include <json.hpp>

#include "twinccd/discrepancy.hpp"
#include "twinccd/env.hpp"
#include "twinccd/nn.hpp"
#include "twinccd/ppo.hpp"
#include "twinccd/profile.hpp"
#include "twinccd/reward.hpp"
#include "twinccd/road.hpp"
#include "twinccd/vehicle.hpp"
#include "twinccd/warmstart.hpp"

namespace twinccd {

struct RoadConfig {
  SpectralConfig spectral;
  double extent_x = 2000.0;
  double extent_y = 2000.0;
  double resolution = 1.0;
  bool hill_enabled = true;
  HillConfig hill;
};

struct RunConfig {
  std::string preset = "paper";
  std::uint64_t seed = 42;
  // Seed of the fixed noise sequence used to score gains during BO.
  std::uint64_t bo_eval_seed = 2024;
  double dt = 0.01;

  VehicleParams vehicle;
  SuspensionDesign initial_design{27692.0, 1906.5};
  DesignBounds design_bounds;
  bool perturbation_enabled = true;
  RealSystemPerturbation perturbation;
  ActuatorLimit actuator_limit;
  RewardWeights reward;
  NoiseRoadConfig noise_road;
  RoadConfig road;
  ProfileConfig mild = ProfileConfig::defaults(DriverStyle::mild);
  ProfileConfig aggressive = ProfileConfig::defaults(DriverStyle::aggressive);

  AgentConfig agent;
  WarmStartConfig warmstart;
  PpoConfig step1;
  PpoConfig finetune;  // pi1 -> pi2 on the real plant, design frozen
  PpoConfig step3;
  QuantileModelConfig quantile;
  std::size_t error_reset = 0;
  // Profile training rollouts: false restarts every rollout at the profile
  // start, true continues along the profile with the state carried over.
  bool continue_profile = false;
  // Steps of the driver profile used for deployment / evaluation; 0 = all.
  std::size_t deploy_steps = 0;

  static RunConfig paper();
  static RunConfig desk();
  static RunConfig preset_named(const std::string& name);

  const ProfileConfig& profile(DriverStyle s) const { return s == DriverStyle::mild ? mild : aggressive; }
  Plant nominal_plant() const { return Plant::nominal(vehicle); }
  Plant real_plant() const;
  // road.spectral.seed when nonzero, else derived from the master seed.
  std::uint64_t road_seed() const { return road.spectral.seed != 0 ? road.spectral.seed : derive_seed(seed, "road"); }

  // Throws std::invalid_argument describing the first bad field.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Starts from the preset named by "preset" (default "paper") and overrides
// the keys present. Unknown keys and type errors throw std::invalid_argument.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

// fnv1a64 over the compact dump of to_json, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

}  // namespace twinccd
