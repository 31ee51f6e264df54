#include "twinccd/pipeline.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "twinccd/checkpoint.hpp"

namespace twinccd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json design_json(const SuspensionDesign& d) { return {{"k_s", d.k_s}, {"c_s", d.c_s}}; }

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("missing artifact: " + path.string());
  return json::parse(is);
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json record_json(const TrainingRecord& r, const Agent& a) {
  return {{"epochs", r.epochs.size()},
          {"best_return", r.best_return},
          {"best_epoch", r.best_epoch},
          {"stop_reason", r.stop_reason},
          {"design", design_json(a.design())},
          {"value_scale", a.value_scale()}};
}

json metrics_json(const EvalMetrics& m) {
  return {{"rms_accel", m.rms_accel}, {"mean_abs_u", m.mean_abs_u}, {"steps", m.steps}, {"diverged", m.diverged}};
}

// Epoch progress every `every` epochs.
EpochCallback progress(const RunContext& ctx, const std::string& tag, int every = 10) {
  return [&ctx, tag, every](const EpochLog& e) {
    if (e.epoch % every != 0) return;
    std::ostringstream s;
    s << tag << " epoch " << e.epoch << " return " << e.episode_return << " best " << e.best_return << " k_s "
      << e.k_s << " c_s " << e.c_s << " mean|u| " << e.mean_abs_u;
    ctx.say(s.str());
  };
}

std::size_t deploy_len(const RunContext& ctx, const DisturbanceSeries& s) {
  return ctx.cfg.deploy_steps == 0 ? s.size() : std::min(ctx.cfg.deploy_steps, s.size());
}

Agent load_agent_any(const RunContext& ctx, const fs::path& path, const std::string& kind) {
  const Checkpoint ck = load_artifact(path, kind, ctx.hash);
  return agent_from_checkpoint(ck, ctx.cfg.agent, ctx.cfg.design_bounds);
}

void save_agent(const RunContext& ctx, const fs::path& path, const std::string& kind, const Agent& a,
                const json& extra = json::object()) {
  json m = extra;
  m["policy_hidden"] = a.config().policy.hidden;
  m["value_hidden"] = a.config().value.hidden;
  m["design"] = design_json(a.design());
  save_artifact(path, agent_checkpoint(a), kind, ctx.hash, m);
}

}  // namespace

RunContext::RunContext(RunConfig c, fs::path r) : cfg(std::move(c)), root(std::move(r)) {
  cfg.validate();
  hash = config_hash(cfg);
}

fs::path resolve_run_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("DTCCD_RUN_ROOT"); env && *env) return env;
  return "runs/default";
}

void init_run(const RunContext& ctx, bool overwrite) {
  const fs::path snap = ctx.path("config.json");
  if (fs::exists(snap) && !overwrite) {
    const RunConfig old = load_config(snap);
    if (config_hash(old) != ctx.hash) {
      throw std::invalid_argument("run root " + ctx.root.string() +
                                  " holds a different config (hash mismatch); use --overwrite or another root");
    }
  }
  save_config(snap, ctx.cfg);
}

std::shared_ptr<const RoadSurface> build_road(const RunContext& ctx) {
  const auto& rc = ctx.cfg.road;
  const json section = to_json(ctx.cfg)["road"];
  const std::string road_hash = hex64(fnv1a64(section.dump() + std::to_string(ctx.cfg.road_seed()) + "/r" +
                                                 std::to_string(kSurfaceGeneratorRevision)));
  const fs::path bin = ctx.path("road/surface.bin");
  const fs::path meta = ctx.path("road/surface.json");
  if (fs::exists(bin) && fs::exists(meta)) {
    const json m = read_json(meta);
    if (m.value("road_hash", std::string{}) == road_hash) {
      return std::make_shared<const RoadSurface>(RoadSurface::read_binary(bin));
    }
  }
  ctx.say("generating road surface");
  SpectralConfig spectral = rc.spectral;
  spectral.seed = ctx.cfg.road_seed();
  RoadSurface s = generate_surface(spectral, rc.extent_x, rc.extent_y, rc.resolution);
  if (rc.hill_enabled) s = add_hill(s, rc.hill);
  fs::create_directories(bin.parent_path());
  s.write_binary(bin);
  write_json(meta, {{"road_hash", road_hash},
                    {"generator_revision", kSurfaceGeneratorRevision},
                    {"road", section},
                    {"nx", s.nx()},
                    {"ny", s.ny()},
                    {"calibration", s.calibration()},
                    {"std", std::sqrt((s.grid().array() - s.grid().mean()).square().mean())}});
  return std::make_shared<const RoadSurface>(std::move(s));
}

std::shared_ptr<const DisturbanceSeries> build_series(const RunContext& ctx, DriverStyle d, const RoadSurface& road,
                                                      bool write_csv) {
  const ProfileConfig& pc = ctx.cfg.profile(d);
  const DrivingProfile profile = build_driving_profile(d, pc);
  const VehicleTrajectory traj = integrate_trajectory(profile, ctx.cfg.vehicle, pc.x0, pc.y0, pc.psi0);
  if (write_csv) {
    fs::create_directories(ctx.driver_dir(d));
    write_profile_csv(ctx.driver_dir(d) / "profile.csv", profile, traj);
  }
  return std::make_shared<const DisturbanceSeries>(build_disturbance_series(profile, traj, road, ctx.cfg.vehicle));
}

Step0Result run_step0(const RunContext& ctx) {
  const RunConfig& c = ctx.cfg;
  Rng rng = ctx.rng("step0");
  fs::create_directories(ctx.path("step0"));
  const Plant nominal = c.nominal_plant();

  ctx.say(c.warmstart.skip_bo ? "step0: reference gains (BO skipped)" : "step0: tuning gains");
  const WarmStartResult ws = tune_gains(c.warmstart, nominal, c.initial_design, c.noise_road, c.dt, c.bo_eval_seed, rng);
  if (!c.warmstart.skip_bo) {
    bool any_ok = false;
    for (const auto& e : ws.bo.log) any_ok = any_ok || e.value < c.warmstart.divergence_penalty;
    if (!any_ok) throw TrainingAbort("step0: every BO evaluation diverged");
    write_bo_csv(ctx.path("step0/bo_log.csv"), ws.bo);
  }

  ctx.say("step0: pretraining the policy mean");
  Agent agent(c.agent, c.design_bounds, c.initial_design, rng);
  const PretrainData data = warmstart_dataset(ws.gains, nominal, c.design_bounds, c.noise_road, c.dt,
                                              c.warmstart.pretrain_episodes, c.warmstart.pretrain_episode_len, rng);
  agent.set_obs_scale(observation_scale(data.obs));
  const PretrainReport pre = pretrain_mean(agent, data, c.warmstart, rng);
  agent.set_design(c.initial_design);

  save_agent(ctx, ctx.path("step0/warmstart.ckpt"), "warmstart", agent);
  std::vector<double> gains(ws.gains.data(), ws.gains.data() + ws.gains.size());
  std::vector<double> scale(agent.obs_scale().data(), agent.obs_scale().data() + kObsDim);
  write_json(ctx.path("step0/pretrain.json"), {{"gains", gains},
                                               {"objective", ws.objective},
                                               {"zero_gain_objective", ws.zero_gain_objective},
                                               {"bo_skipped", c.warmstart.skip_bo},
                                               {"pretrain_train_mse", pre.train_mse},
                                               {"pretrain_holdout_rel_rmse", pre.holdout_rel_rmse},
                                               {"pretrain_steps", pre.steps},
                                               {"obs_scale", scale}});
  return {ws.gains, ws.objective, ws.zero_gain_objective, pre};
}

Step1Result run_step1(const RunContext& ctx) {
  const RunConfig& c = ctx.cfg;
  const Agent init = load_agent_any(ctx, ctx.path("step0/warmstart.ckpt"), "warmstart");
  Rng rng = ctx.rng("step1");
  fs::create_directories(ctx.path("step1"));
  NoiseRoadEnv env(c.nominal_plant(), init.design(), c.reward, c.dt, c.noise_road);
  env.actuator_limit() = c.actuator_limit;
  ctx.say("step1: first co-design on the nominal model");
  TrainResult tr = train_ccd(init, env, c.step1, rng, progress(ctx, "step1"));
  save_agent(ctx, ctx.path("step1/pi1.ckpt"), "pi1", tr.agent);
  write_training_csv(ctx.path("step1/train_log.csv"), tr.record);
  json rec = record_json(tr.record, tr.agent);
  rec["initial_design"] = design_json(c.initial_design);
  write_json(ctx.path("step1/record.json"), rec);
  return {tr.agent.design(), tr.record};
}

void run_deploy(const RunContext& ctx, DriverStyle d) {
  const RunConfig& c = ctx.cfg;
  const std::string name(to_string(d));
  const Agent pi1 = load_agent_any(ctx, ctx.path("step1/pi1.ckpt"), "pi1");
  const auto road = build_road(ctx);
  const auto series = build_series(ctx, d, *road);
  Rng rng = ctx.rng("step2." + name);
  fs::create_directories(ctx.driver_dir(d) / "step2");

  ProfileEnv env(c.real_plant(), pi1.design(), c.reward, series);
  env.actuator_limit() = c.actuator_limit;
  env.set_segment_length(static_cast<std::size_t>(c.finetune.rollout_len));
  env.set_continue(c.continue_profile);
  ctx.say("step2 " + name + ": fine-tuning pi1 on the real plant");
  PpoConfig ft = c.finetune;
  ft.train_design = false;
  TrainResult tr = train_ccd(pi1, env, ft, rng, progress(ctx, "step2 " + name));
  const fs::path dir = ctx.driver_dir(d) / "step2";
  save_agent(ctx, dir / "pi2.ckpt", "pi2", tr.agent, {{"driver", name}});
  write_training_csv(dir / "finetune_log.csv", tr.record);
  write_json(dir / "finetune.json", record_json(tr.record, tr.agent));
}

Step2Result run_fit_discrepancy(const RunContext& ctx, DriverStyle d) {
  const RunConfig& c = ctx.cfg;
  const std::string name(to_string(d));
  const fs::path dir = ctx.driver_dir(d) / "step2";
  const Agent pi2 = load_agent_any(ctx, dir / "pi2.ckpt", "pi2");
  const auto road = build_road(ctx);
  const auto series = build_series(ctx, d, *road, false);
  Rng rng = ctx.rng("discrepancy." + name);

  ctx.say("step2 " + name + ": collecting model errors");
  const ActuatorLimit limit = c.actuator_limit;
  const PolicyFn policy = [&](const Observation& y) { return limit.apply(pi2.mean_action(y)); };
  const std::size_t n = deploy_len(ctx, *series);
  const ErrorDataset data = collect_errors(c.real_plant(), c.nominal_plant(), pi2.design(), policy, *series, n);
  if (data.truncated) {
    throw TrainingAbort("step2 " + name + ": real plant diverged under pi2 after " + std::to_string(data.size()) +
                        " of " + std::to_string(n) + " steps");
  }
  write_error_csv(dir / "errors.csv", data);

  ctx.say("step2 " + name + ": fitting the quantile model on " + std::to_string(data.size()) + " rows");
  const DatasetSplit split = split_blocks(data);
  QuantileModel model(c.quantile, rng);
  const QuantileFitReport fit = model.fit(split.x_train, split.y_train, split.x_val, split.y_val, rng);
  save_artifact(dir / "quantile.ckpt", quantile_checkpoint(model), "quantile", ctx.hash,
                {{"driver", name}, {"hidden", c.quantile.hidden}, {"taus", c.quantile.taus}});
  write_json(dir / "quantile.json", {{"rows", data.size()},
                                     {"train_rows", split.x_train.rows()},
                                     {"val_rows", split.x_val.rows()},
                                     {"epochs", fit.epochs},
                                     {"train_loss", fit.train_loss},
                                     {"val_pinball", fit.val_pinball},
                                     {"val_rmse_median", fit.val_rmse_median},
                                     {"val_coverage", fit.val_coverage}});
  return {fit, data.size()};
}

Step2Result run_step2(const RunContext& ctx, DriverStyle d) {
  run_deploy(ctx, d);
  return run_fit_discrepancy(ctx, d);
}

EvalMetrics evaluate(const Agent& agent, const SuspensionDesign& design, const Plant& plant,
                     const DisturbanceSeries& series, std::size_t steps, const fs::path& csv) {
  auto shared = std::make_shared<const DisturbanceSeries>(series);
  ProfileEnv env(plant, design, RewardWeights{}, shared);
  env.rewind();
  Agent a = agent;
  a.set_design(design);
  steps = std::min(steps == 0 ? series.size() : steps, series.size());

  std::ofstream os;
  if (!csv.empty()) {
    if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
    os.open(csv);
    if (!os) throw std::runtime_error("cannot write " + csv.string());
    os << "t,z_s,alpha,beta,zdot_s,zdd_s,alphadd,betadd,u1,u2,u3,u4,comfort\n";
  }
  Rng unused(0);
  EvalMetrics m;
  double sum_a2 = 0.0;
  double sum_u = 0.0;
  char line[512];
  for (std::size_t k = 0; k < steps; ++k) {
    const Action u = a.mean_action(env.observation());
    const StepResult r = env.step(u, unused);
    const Action applied = env.actuator_limit().apply(u);
    if (r.diverged) {
      m.diverged = true;
      break;
    }
    sum_a2 += r.body_accel(0) * r.body_accel(0);
    sum_u += applied.cwiseAbs().sum();
    ++m.steps;
    if (os.is_open()) {
      const State& x = env.state();
      std::snprintf(line, sizeof(line), "%.4f,%.10e,%.10e,%.10e,%.10e,%.12e,%.10e,%.10e,%.12e,%.12e,%.12e,%.12e,%.10e\n",
                    static_cast<double>(k + 1) * series.dt, x(idx::z_s), x(idx::alpha), x(idx::beta), x(idx::zdot_s),
                    r.body_accel(0), r.body_accel(1), r.body_accel(2), applied(0), applied(1), applied(2), applied(3),
                    r.terms.comfort);
      os << line;
    }
  }
  if (m.steps > 0) {
    m.rms_accel = std::sqrt(sum_a2 / static_cast<double>(m.steps));
    m.mean_abs_u = sum_u / (4.0 * static_cast<double>(m.steps));
  }
  return m;
}

EvalMetrics metrics_from_csv(const fs::path& csv) {
  std::ifstream is(csv);
  if (!is) throw std::invalid_argument("missing trajectory: " + csv.string());
  std::string line;
  std::getline(is, line);
  EvalMetrics m;
  double sum_a2 = 0.0;
  double sum_u = 0.0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 13) throw std::invalid_argument("malformed trajectory row in " + csv.string());
    sum_a2 += v[5] * v[5];
    sum_u += std::abs(v[8]) + std::abs(v[9]) + std::abs(v[10]) + std::abs(v[11]);
    ++m.steps;
  }
  if (m.steps > 0) {
    m.rms_accel = std::sqrt(sum_a2 / static_cast<double>(m.steps));
    m.mean_abs_u = sum_u / (4.0 * static_cast<double>(m.steps));
  }
  return m;
}

Step3Result run_step3(const RunContext& ctx, DriverStyle d) {
  const RunConfig& c = ctx.cfg;
  const std::string name(to_string(d));
  const fs::path dir2 = ctx.driver_dir(d) / "step2";
  const fs::path dir = ctx.driver_dir(d) / "step3";
  const Agent pi1 = load_agent_any(ctx, ctx.path("step1/pi1.ckpt"), "pi1");
  const Agent pi2 = load_agent_any(ctx, dir2 / "pi2.ckpt", "pi2");
  auto model = std::make_shared<const QuantileModel>(
      quantile_from_checkpoint(load_artifact(dir2 / "quantile.ckpt", "quantile", ctx.hash), c.quantile));
  const auto road = build_road(ctx);
  const auto series = build_series(ctx, d, *road, false);
  Rng rng = ctx.rng("step3." + name);
  fs::create_directories(dir);

  UpdatedModelEnv env(c.nominal_plant(), pi2.design(), c.reward, series, model, c.error_reset);
  env.actuator_limit() = c.actuator_limit;
  env.set_segment_length(static_cast<std::size_t>(c.step3.rollout_len));
  env.set_continue(c.continue_profile);
  ctx.say("step3 " + name + ": second co-design on the updated model");
  TrainResult tr = train_ccd(pi2, env, c.step3, rng, progress(ctx, "step3 " + name));
  save_agent(ctx, dir / "pi3.ckpt", "pi3", tr.agent, {{"driver", name}});
  write_training_csv(dir / "train_log.csv", tr.record);

  ctx.say("step3 " + name + ": evaluating on the real plant");
  const Plant real = c.real_plant();
  const std::size_t n = deploy_len(ctx, *series);
  MetricReport rep;
  rep.before = evaluate(pi1, pi1.design(), real, *series, n, dir / "eval_before.csv");
  rep.after = evaluate(tr.agent, tr.agent.design(), real, *series, n, dir / "eval_after.csv");
  write_report_csv(dir / "report.csv", rep);

  json gen = {
      {"generation", 1},
      {"driver", name},
      {"design_initial", design_json(c.initial_design)},
      {"design_before", design_json(pi1.design())},
      {"design_after", design_json(tr.agent.design())},
      {"checkpoints", {{"pi1", "step1/pi1.ckpt"}, {"pi2", name + "/step2/pi2.ckpt"}, {"pi3", name + "/step3/pi3.ckpt"}}},
      {"discrepancy_model", name + "/step2/quantile.ckpt"},
      {"trajectories", {{"before", name + "/step3/eval_before.csv"}, {"after", name + "/step3/eval_after.csv"}}},
      {"metrics",
       {{"before", metrics_json(rep.before)},
        {"after", metrics_json(rep.after)},
        {"rms_accel_improvement_percent", improvement_percent(rep.before.rms_accel, rep.after.rms_accel)},
        {"mean_abs_u_improvement_percent", improvement_percent(rep.before.mean_abs_u, rep.after.mean_abs_u)}}},
      {"training", record_json(tr.record, tr.agent)},
      {"config_hash", ctx.hash},
      {"seeds",
       {{"master", c.seed},
        {"step0", derive_seed(c.seed, "step0")},
        {"step1", derive_seed(c.seed, "step1")},
        {"step2", derive_seed(c.seed, "step2." + name)},
        {"discrepancy", derive_seed(c.seed, "discrepancy." + name)},
        {"step3", derive_seed(c.seed, "step3." + name)},
        {"road", c.road_seed()},
        {"bo_eval", c.bo_eval_seed}}}};
  write_json(dir / "generation.json", gen);
  return {tr.agent.design(), tr.record, rep};
}

void write_report_csv(const fs::path& path, const MetricReport& r) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.precision(17);
  os << "metric,before,after,improvement_percent\n";
  os << "rms_accel," << r.before.rms_accel << ',' << r.after.rms_accel << ','
     << improvement_percent(r.before.rms_accel, r.after.rms_accel) << '\n';
  os << "mean_abs_u," << r.before.mean_abs_u << ',' << r.after.mean_abs_u << ','
     << improvement_percent(r.before.mean_abs_u, r.after.mean_abs_u) << '\n';
}

int write_run_report(const RunContext& ctx) {
  std::ostringstream body;
  body.precision(17);
  int rows = 0;
  for (DriverStyle d : {DriverStyle::mild, DriverStyle::aggressive}) {
    const fs::path g = ctx.driver_dir(d) / "step3" / "generation.json";
    if (!fs::exists(g)) continue;
    const json j = read_json(g);
    if (j.at("config_hash").get<std::string>() != ctx.hash) {
      throw std::invalid_argument("config hash mismatch for " + g.string());
    }
    for (const char* key : {"checkpoints", "trajectories"}) {
      for (const auto& [_, rel] : j.at(key).items()) {
        if (!fs::exists(ctx.path(rel.get<std::string>()))) {
          throw std::invalid_argument("generation record references a missing artifact: " +
                                      ctx.path(rel.get<std::string>()).string());
        }
      }
    }
    const json& m = j.at("metrics");
    for (const char* metric : {"rms_accel", "mean_abs_u"}) {
      const double b = m.at("before").at(metric).get<double>();
      const double a = m.at("after").at(metric).get<double>();
      body << to_string(d) << ',' << metric << ',' << b << ',' << a << ',' << improvement_percent(b, a) << '\n';
      ++rows;
    }
  }
  if (rows == 0) throw std::invalid_argument("no generation records under " + ctx.root.string());
  std::ofstream os(ctx.path("report.csv"));
  if (!os) throw std::runtime_error("cannot write " + ctx.path("report.csv").string());
  os << "driver,metric,before,after,improvement_percent\n" << body.str();
  return rows;
}

Agent load_agent(const RunContext& ctx, const fs::path& path, const std::string& kind) {
  return load_agent_any(ctx, path, kind);
}

}  // namespace twinccd
