#include "twinccd/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

namespace twinccd {

namespace {

using nlohmann::json;

// One field list per struct, walked by a writer and by a reader.
struct Writer {
  json& out;
  template <typename T>
  void operator()(const char* key, const T& v) { out[key] = encode(v); }
  template <typename T, typename F>
  void nested(const char* key, const T& v, F&& fields) {
    json sub = json::object();
    Writer w{sub};
    fields(w, const_cast<T&>(v));
    out[key] = sub;
  }

  static json encode(double v) { return v; }
  static json encode(int v) { return v; }
  static json encode(bool v) { return v; }
  static json encode(std::uint64_t v) { return v; }
  static json encode(const std::string& v) { return v; }
  static json encode(const Wheel4& v) { return {v(0), v(1), v(2), v(3)}; }
  static json encode(const GainVector& v) { return {v(0), v(1), v(2), v(3), v(4)}; }
  static json encode(const std::vector<int>& v) { return v; }
  static json encode(const std::array<double, 3>& v) { return v; }
  static json encode(const std::vector<SteeringManeuver>& v) {
    json a = json::array();
    for (const auto& m : v) a.push_back({{"start", m.start}, {"duration", m.duration}, {"amplitude", m.amplitude}, {"ramp", m.ramp}});
    return a;
  }
};

struct Reader {
  const json& in;
  std::string path;
  std::set<std::string> seen{};

  template <typename T>
  void operator()(const char* key, T& v) {
    seen.insert(key);
    if (!in.contains(key)) return;
    try {
      decode(in.at(key), v);
    } catch (const json::exception& e) {
      throw std::invalid_argument("config key " + path + key + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config key " + path + key + ": " + e.what());
    }
  }
  template <typename T, typename F>
  void nested(const char* key, T& v, F&& fields) {
    seen.insert(key);
    if (!in.contains(key)) return;
    const json& sub = in.at(key);
    if (!sub.is_object()) throw std::invalid_argument("config key " + path + key + " must be an object");
    Reader r{sub, path + key + "."};
    fields(r, v);
    r.finish();
  }
  void finish() const {
    for (const auto& [k, _] : in.items()) {
      if (!seen.count(k)) throw std::invalid_argument("unknown config key " + path + k);
    }
  }

  static void decode(const json& j, double& v) {
    if (!j.is_number()) throw std::invalid_argument("expected a number");
    v = j.get<double>();
  }
  static void decode(const json& j, int& v) {
    if (!j.is_number_integer()) throw std::invalid_argument("expected an integer");
    v = j.get<int>();
  }
  static void decode(const json& j, bool& v) {
    if (!j.is_boolean()) throw std::invalid_argument("expected a boolean");
    v = j.get<bool>();
  }
  static void decode(const json& j, std::uint64_t& v) {
    // a signed integer type is fine as long as the value is not negative
    if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0)) {
      throw std::invalid_argument("expected a non-negative integer");
    }
    v = j.get<std::uint64_t>();
  }
  static void decode(const json& j, std::string& v) {
    if (!j.is_string()) throw std::invalid_argument("expected a string");
    v = j.get<std::string>();
  }
  template <int N>
  static void decode_fixed(const json& j, Eigen::Matrix<double, N, 1>& v) {
    if (!j.is_array() || j.size() != N) throw std::invalid_argument("expected an array of " + std::to_string(N) + " numbers");
    for (int i = 0; i < N; ++i) decode(j[static_cast<std::size_t>(i)], v(i));
  }
  static void decode(const json& j, Wheel4& v) { decode_fixed<4>(j, v); }
  static void decode(const json& j, GainVector& v) { decode_fixed<5>(j, v); }
  static void decode(const json& j, std::vector<int>& v) {
    if (!j.is_array()) throw std::invalid_argument("expected an array of integers");
    v.clear();
    for (const auto& e : j) {
      int x = 0;
      decode(e, x);
      v.push_back(x);
    }
  }
  static void decode(const json& j, std::array<double, 3>& v) {
    if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected an array of 3 numbers");
    for (std::size_t i = 0; i < 3; ++i) decode(j[i], v[i]);
  }
  static void decode(const json& j, std::vector<SteeringManeuver>& v) {
    if (!j.is_array()) throw std::invalid_argument("expected an array of maneuvers");
    v.clear();
    for (const auto& e : j) {
      SteeringManeuver m;
      Reader r{e, "maneuver."};
      if (!e.is_object()) throw std::invalid_argument("maneuver must be an object");
      r("start", m.start);
      r("duration", m.duration);
      r("amplitude", m.amplitude);
      r("ramp", m.ramp);
      r.finish();
      v.push_back(m);
    }
  }
};

// size_t fields travel as uint64.
template <typename V>
void size_field(V& v, const char* key, std::size_t& x) {
  std::uint64_t u = x;
  v(key, u);
  x = static_cast<std::size_t>(u);
}

template <typename V>
void vehicle_fields(V& v, VehicleParams& p) {
  v("m_s", p.m_s);
  v("I_alpha", p.I_alpha);
  v("I_beta", p.I_beta);
  v("m_u", p.m_u);
  v("k_t", p.k_t);
  v("c_t", p.c_t);
  v("l_f", p.l_f);
  v("l_r", p.l_r);
  v("l", p.l);
  v("h_cg", p.h_cg);
}

template <typename V>
void design_fields(V& v, SuspensionDesign& d) {
  v("k_s", d.k_s);
  v("c_s", d.c_s);
}

template <typename V>
void bounds_fields(V& v, DesignBounds& b) {
  v("k_min", b.k_min);
  v("k_max", b.k_max);
  v("c_min", b.c_min);
  v("c_max", b.c_max);
}

template <typename V>
void perturbation_fields(V& v, RealSystemPerturbation& p) {
  v("k_nl_ratio", p.k_nl_ratio);
  v("c_nl_ratio", p.c_nl_ratio);
  v("m_u", p.m_u);
  v("h_cg_delta", p.h_cg_delta);
  v("k_t_scale", p.k_t_scale);
  v("mass_inertia_scale", p.mass_inertia_scale);
}

template <typename V>
void limit_fields(V& v, ActuatorLimit& a) {
  v("enabled", a.enabled);
  v("limit", a.limit);
}

template <typename V>
void reward_fields(V& v, RewardWeights& w) {
  v("w1", w.w1);
  v("w2", w.w2);
  v("w3", w.w3);
  v("c1", w.c1);
  v("c2", w.c2);
  v("c3", w.c3);
  v("lambda_u", w.lambda_u);
}

template <typename V>
void noise_fields(V& v, NoiseRoadConfig& n) {
  v("speed", n.speed);
  v("z_std", n.z_std);
  v("zdot_std", n.zdot_std);
}

template <typename V>
void road_fields(V& v, RoadConfig& r) {
  v.nested("spectral", r.spectral, [](auto& w, SpectralConfig& s) {
    w("S0", s.S0);
    w("n0", s.n0);
    w("omega", s.omega);
    w("epsilon", s.epsilon);
    w("seed", s.seed);
    w("target_std", s.target_std);
  });
  v("extent_x", r.extent_x);
  v("extent_y", r.extent_y);
  v("resolution", r.resolution);
  v("hill_enabled", r.hill_enabled);
  v.nested("hill", r.hill, [](auto& w, HillConfig& h) {
    w("amplitude", h.amplitude);
    w("x0", h.x0);
    w("length", h.length);
  });
}

template <typename V>
void profile_fields(V& v, ProfileConfig& p) {
  v("duration", p.duration);
  v("dt", p.dt);
  v("accel", p.accel);
  v("cruise_speed", p.cruise_speed);
  v("accel_ramp", p.accel_ramp);
  v("launch_time", p.launch_time);
  v("stop_margin", p.stop_margin);
  v("steering_start", p.steering_start);
  v("steering_period", p.steering_period);
  v("maneuvers", p.maneuvers);
  v("sg_window", p.sg_window);
  v("sg_order", p.sg_order);
  v("x0", p.x0);
  v("y0", p.y0);
  v("psi0", p.psi0);
}

template <typename V>
void agent_fields(V& v, AgentConfig& a) {
  v("policy_hidden", a.policy.hidden);
  v("value_hidden", a.value.hidden);
  v("action_scale", a.action_scale);
  v("std_init_weight", a.std_init_weight);
  v("std_init_bias", a.std_init_bias);
}

template <typename V>
void warmstart_fields(V& v, WarmStartConfig& w) {
  v("gain_lo", w.bounds.lo);
  v("gain_hi", w.bounds.hi);
  v.nested("bo", w.bo, [](auto& x, BoConfig& b) {
    x("budget", b.budget);
    x("initial", b.initial);
    x("candidates", b.candidates);
    x("xi", b.xi);
    x("log_objective", b.log_objective);
  });
  v("eval_steps", w.eval_steps);
  v("divergence_penalty", w.divergence_penalty);
  v("skip_bo", w.skip_bo);
  v("pretrain_episodes", w.pretrain_episodes);
  v("pretrain_episode_len", w.pretrain_episode_len);
  v("pretrain_steps", w.pretrain_steps);
  v("pretrain_minibatch", w.pretrain_minibatch);
  v("pretrain_lr", w.pretrain_lr);
  v("holdout_fraction", w.holdout_fraction);
}

template <typename V>
void ppo_fields(V& v, PpoConfig& p) {
  v("gamma", p.gamma);
  v("lambda_gae", p.lambda_gae);
  v("clip_eps", p.clip_eps);
  v("c_v", p.c_v);
  v("rollout_len", p.rollout_len);
  v("opt_epochs", p.opt_epochs);
  v("minibatch", p.minibatch);
  v("max_epochs", p.max_epochs);
  v("patience", p.patience);
  v("lr_net", p.lr_net);
  v("lr_design", p.lr_design);
  v("train_design", p.train_design);
  v("dyn_coef", p.dyn_coef);
  v("dyn_horizon", p.dyn_horizon);
  v("divergence_abort_fraction", p.divergence_abort_fraction);
  v("min_epochs_for_abort", p.min_epochs_for_abort);
  v("return_best", p.return_best);
}

template <typename V>
void quantile_fields(V& v, QuantileModelConfig& q) {
  v("hidden", q.hidden);
  v("taus", q.taus);
  v("epochs", q.epochs);
  v("minibatch", q.minibatch);
  v("lr", q.lr);
  v("lr_final_fraction", q.lr_final_fraction);
}

template <typename V>
void run_fields(V& v, RunConfig& c) {
  v("preset", c.preset);
  v("seed", c.seed);
  v("bo_eval_seed", c.bo_eval_seed);
  v("dt", c.dt);
  v.nested("vehicle", c.vehicle, [](auto& w, auto& x) { vehicle_fields(w, x); });
  v.nested("initial_design", c.initial_design, [](auto& w, auto& x) { design_fields(w, x); });
  v.nested("design_bounds", c.design_bounds, [](auto& w, auto& x) { bounds_fields(w, x); });
  v("perturbation_enabled", c.perturbation_enabled);
  v.nested("perturbation", c.perturbation, [](auto& w, auto& x) { perturbation_fields(w, x); });
  v.nested("actuator_limit", c.actuator_limit, [](auto& w, auto& x) { limit_fields(w, x); });
  v.nested("reward", c.reward, [](auto& w, auto& x) { reward_fields(w, x); });
  v.nested("noise_road", c.noise_road, [](auto& w, auto& x) { noise_fields(w, x); });
  v.nested("road", c.road, [](auto& w, auto& x) { road_fields(w, x); });
  v.nested("profile_mild", c.mild, [](auto& w, auto& x) { profile_fields(w, x); });
  v.nested("profile_aggressive", c.aggressive, [](auto& w, auto& x) { profile_fields(w, x); });
  v.nested("agent", c.agent, [](auto& w, auto& x) { agent_fields(w, x); });
  v.nested("warmstart", c.warmstart, [](auto& w, auto& x) { warmstart_fields(w, x); });
  v.nested("step1", c.step1, [](auto& w, auto& x) { ppo_fields(w, x); });
  v.nested("finetune", c.finetune, [](auto& w, auto& x) { ppo_fields(w, x); });
  v.nested("step3", c.step3, [](auto& w, auto& x) { ppo_fields(w, x); });
  v.nested("quantile", c.quantile, [](auto& w, auto& x) { quantile_fields(w, x); });
  size_field(v, "error_reset", c.error_reset);
  v("continue_profile", c.continue_profile);
  size_field(v, "deploy_steps", c.deploy_steps);
}

}  // namespace

RunConfig RunConfig::paper() {
  RunConfig c;
  c.preset = "paper";
  c.finetune.max_epochs = 50;
  c.finetune.patience = 50;
  c.finetune.train_design = false;
  c.finetune.return_best = false;
  return c;
}

RunConfig RunConfig::desk() {
  RunConfig c = paper();
  c.preset = "desk";
  c.step1.max_epochs = 100;
  c.step1.patience = 100;
  c.step3.max_epochs = 100;
  c.step3.patience = 100;
  return c;
}

RunConfig RunConfig::preset_named(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw std::invalid_argument("unknown preset '" + name + "' (expected paper or desk)");
}

Plant RunConfig::real_plant() const {
  return perturbation_enabled ? Plant::real(vehicle, perturbation) : Plant::nominal(vehicle);
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("invalid config: " + what);
  };
  require(preset == "paper" || preset == "desk", "preset must be paper or desk");
  require(dt > 0.0, "dt must be positive");
  vehicle.validate();
  design_bounds.validate();
  require(design_bounds.contains(initial_design), "initial_design outside design_bounds");
  perturbation.validate();
  require(actuator_limit.limit > 0.0, "actuator_limit.limit must be positive");
  reward.validate();
  require(noise_road.speed >= 0.0 && noise_road.z_std >= 0.0 && noise_road.zdot_std >= 0.0,
          "noise_road entries must be non-negative");
  road.spectral.validate();
  require(road.extent_x > 0.0 && road.extent_y > 0.0 && road.resolution > 0.0, "road extent and resolution must be positive");
  if (road.hill_enabled) road.hill.validate();
  mild.validate();
  aggressive.validate();
  require(mild.dt == dt && aggressive.dt == dt, "profile dt must equal dt");
  for (const auto* m : {&agent.policy, &agent.value}) {
    require(!m->hidden.empty(), "agent hidden layers must be non-empty");
    for (int h : m->hidden) require(h > 0, "agent hidden widths must be positive");
  }
  require(agent.action_scale > 0.0, "agent.action_scale must be positive");
  warmstart.validate();
  step1.validate();
  finetune.validate();
  step3.validate();
  quantile.validate();
}

nlohmann::json to_json(const RunConfig& cfg) {
  json out = json::object();
  Writer w{out};
  run_fields(w, const_cast<RunConfig&>(cfg));
  return out;
}

RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config document must be a JSON object");
  std::string preset = "paper";
  if (j.contains("preset")) {
    if (!j["preset"].is_string()) throw std::invalid_argument("config key preset: expected a string");
    preset = j["preset"].get<std::string>();
  }
  RunConfig c = RunConfig::preset_named(preset);
  Reader r{j, ""};
  run_fields(r, c);
  r.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw std::invalid_argument("cannot parse " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << to_json(cfg).dump(2) << '\n';
}

std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(cfg).dump())));
  return buf;
}

}  // namespace twinccd
