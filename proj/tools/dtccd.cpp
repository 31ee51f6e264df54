// dtccd: command-line front end for the co-design pipeline.
//
// Exit codes: 0 success, 1 validation error (bad config, flags, missing
// artifacts), 2 runtime abort (divergence, I/O failure mid-run).

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "twinccd/checkpoint.hpp"
#include "twinccd/pipeline.hpp"

using namespace twinccd;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::string preset = "paper";
  std::string run_root;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool dry_run = false;
  bool overwrite = false;
  bool quiet = false;
  std::string driver = "both";
  std::string checkpoint;
  std::string plant = "real";
  std::string out;
  bool road_csv = false;
};

// key.path=value, value parsed as JSON when possible.
void apply_set(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("--set expects key.path=value, got " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part)) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunContext make_context(const Options& o) {
  json doc = json::object();
  if (!o.config_path.empty()) {
    std::ifstream is(o.config_path);
    if (!is) throw std::invalid_argument("config file not found: " + o.config_path);
    try {
      doc = json::parse(is);
    } catch (const json::exception& e) {
      throw std::invalid_argument("cannot parse " + o.config_path + ": " + e.what());
    }
  } else {
    doc["preset"] = o.preset;
  }
  for (const auto& s : o.sets) apply_set(doc, s);
  if (o.seed_given) doc["seed"] = o.seed;
  RunContext ctx(config_from_json(doc), resolve_run_root(o.run_root));
  if (!o.quiet) ctx.log = [](const std::string& s) { std::cerr << s << std::endl; };
  return ctx;
}

std::vector<DriverStyle> drivers(const Options& o) {
  if (o.driver == "both") return {DriverStyle::mild, DriverStyle::aggressive};
  return {parse_driver_style(o.driver)};
}

void print_plan(const RunContext& ctx, const std::string& cmd, const Options& o) {
  const RunConfig& c = ctx.cfg;
  std::cout << "command      " << cmd << '\n'
            << "run root     " << ctx.root.string() << '\n'
            << "preset       " << c.preset << '\n'
            << "config hash  " << ctx.hash << '\n'
            << "master seed  " << c.seed << '\n'
            << "road seed    " << c.road_seed() << '\n'
            << "drivers      " << o.driver << '\n'
            << "step1        " << c.step1.max_epochs << " epochs x " << c.step1.rollout_len << " steps, patience "
            << c.step1.patience << '\n'
            << "finetune     " << c.finetune.max_epochs << " epochs, design frozen\n"
            << "step3        " << c.step3.max_epochs << " epochs x " << c.step3.rollout_len << " steps, patience "
            << c.step3.patience << '\n'
            << "warm start   " << (c.warmstart.skip_bo ? "reference gains" : "BO " + std::to_string(c.warmstart.bo.budget))
            << '\n'
            << "perturbation " << (c.perturbation_enabled ? "on" : "off") << '\n';
}

void print_metrics(const std::string& label, const EvalMetrics& m) {
  std::printf("%s rms_accel %.9g mean_abs_u %.9g steps %zu diverged %d\n", label.c_str(), m.rms_accel, m.mean_abs_u,
              m.steps, m.diverged ? 1 : 0);
}

int run(const std::string& cmd, const Options& o) {
  RunContext ctx = make_context(o);
  if (o.dry_run) {
    print_plan(ctx, cmd, o);
    return 0;
  }
  if (cmd == "gen-profile") {
    for (DriverStyle d : drivers(o)) {
      const ProfileConfig& pc = ctx.cfg.profile(d);
      const DrivingProfile p = build_driving_profile(d, pc);
      const VehicleTrajectory t = integrate_trajectory(p, ctx.cfg.vehicle, pc.x0, pc.y0, pc.psi0);
      const fs::path path = o.out.empty() ? ctx.driver_dir(d) / "profile.csv" : fs::path(o.out);
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      write_profile_csv(path, p, t);
      std::printf("%s: %zu steps, top speed %.4f m/s, peak accel %.4f m/s^2 -> %s\n", std::string(to_string(d)).c_str(),
                  p.size(), t.v.maxCoeff(), p.accel.cwiseAbs().maxCoeff(), path.string().c_str());
    }
    return 0;
  }
  init_run(ctx, o.overwrite);
  if (cmd == "gen-road") {
    const auto s = build_road(ctx);
    if (o.road_csv) s->write_csv(ctx.path("road/surface.csv"));
    std::printf("surface %lldx%lld, seed %llu -> %s\n", static_cast<long long>(s->nx()), static_cast<long long>(s->ny()),
                static_cast<unsigned long long>(s->seed()), ctx.path("road/surface.bin").string().c_str());
  } else if (cmd == "warmstart") {
    const Step0Result r = run_step0(ctx);
    std::printf("gains [%.6g, %.6g, %.6g, %.6g, %.6g] objective %.9g (zero gains %.9g) pretrain holdout rel rmse %.4g\n",
                r.gains(0), r.gains(1), r.gains(2), r.gains(3), r.gains(4), r.objective, r.zero_gain_objective,
                r.pretrain.holdout_rel_rmse);
  } else if (cmd == "train-ccd1") {
    const Step1Result r = run_step1(ctx);
    std::printf("p1 k_s %.6f c_s %.6f best return %.9g at epoch %d (%s)\n", r.design.k_s, r.design.c_s,
                r.record.best_return, r.record.best_epoch, r.record.stop_reason.c_str());
  } else if (cmd == "deploy") {
    for (DriverStyle d : drivers(o)) run_deploy(ctx, d);
  } else if (cmd == "fit-discrepancy") {
    for (DriverStyle d : drivers(o)) {
      const Step2Result r = run_fit_discrepancy(ctx, d);
      std::printf("%s: %zu rows, val median rmse %.6g, coverage %.4f\n", std::string(to_string(d)).c_str(),
                  r.error_rows, r.fit.val_rmse_median, r.fit.val_coverage);
    }
  } else if (cmd == "train-ccd2") {
    for (DriverStyle d : drivers(o)) {
      const Step3Result r = run_step3(ctx, d);
      std::printf("%s: p2 k_s %.6f c_s %.6f\n", std::string(to_string(d)).c_str(), r.design.k_s, r.design.c_s);
      print_metrics("  before", r.report.before);
      print_metrics("  after ", r.report.after);
    }
  } else if (cmd == "evaluate") {
    if (o.checkpoint.empty()) throw std::invalid_argument("evaluate needs --checkpoint");
    const fs::path ck = o.checkpoint;
    if (!fs::exists(ck)) throw std::invalid_argument("checkpoint not found: " + ck.string());
    const std::string kind = read_manifest(ck).value("kind", std::string{});
    const Agent agent = load_agent(ctx, ck, kind);
    if (o.plant != "real" && o.plant != "nominal") throw std::invalid_argument("--plant must be real or nominal");
    const Plant plant = o.plant == "real" ? ctx.cfg.real_plant() : ctx.cfg.nominal_plant();
    const auto road = build_road(ctx);
    for (DriverStyle d : drivers(o)) {
      const auto series = build_series(ctx, d, *road, false);
      fs::path csv;
      if (!o.out.empty()) csv = drivers(o).size() == 1 ? fs::path(o.out) : fs::path(o.out + "." + std::string(to_string(d)) + ".csv");
      const std::size_t n = ctx.cfg.deploy_steps == 0 ? series->size() : ctx.cfg.deploy_steps;
      print_metrics(std::string(to_string(d)), evaluate(agent, agent.design(), plant, *series, n, csv));
    }
  } else if (cmd == "report") {
    const int rows = write_run_report(ctx);
    std::ifstream is(ctx.path("report.csv"));
    std::cout << is.rdbuf();
    std::fprintf(stderr, "%d rows -> %s\n", rows, ctx.path("report.csv").string().c_str());
  } else if (cmd == "run") {
    build_road(ctx);
    run_step0(ctx);
    run_step1(ctx);
    for (DriverStyle d : drivers(o)) {
      run_step2(ctx, d);
      run_step3(ctx, d);
    }
    write_run_report(ctx);
    std::ifstream is(ctx.path("report.csv"));
    std::cout << is.rdbuf();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Digital-twin control co-design of a full-vehicle active suspension"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config_path, "JSON run configuration");
  app.add_option("--preset", o.preset, "paper or desk (when no --config is given)");
  app.add_option("--run-root", o.run_root, "run directory (default $DTCCD_RUN_ROOT, else runs/default)");
  app.add_option("--set", o.sets, "config override key.path=value (repeatable)");
  app.add_option_function<std::uint64_t>(
      "--seed",
      [&](const std::uint64_t& s) {
        o.seed = s;
        o.seed_given = true;
      },
      "master seed");
  app.add_flag("--dry-run", o.dry_run, "validate the config and print the plan only");
  app.add_flag("--overwrite", o.overwrite, "replace a run root holding a different config");
  app.add_flag("-q,--quiet", o.quiet, "no progress output");
  app.fallthrough();

  const std::vector<std::pair<std::string, std::string>> cmds = {
      {"gen-road", "generate (or reuse) the road surface"},
      {"gen-profile", "write the driver profile and path CSV"},
      {"warmstart", "step 0: gain tuning and policy pretraining"},
      {"train-ccd1", "step 1: first co-design on the nominal model"},
      {"deploy", "step 2a: deploy pi1 on the real plant and fine-tune to pi2"},
      {"fit-discrepancy", "step 2b: collect model errors and fit the quantile model"},
      {"train-ccd2", "step 3: second co-design on the updated model, before/after evaluation"},
      {"evaluate", "evaluate a policy checkpoint along a driver profile"},
      {"report", "write the run-level before/after table"},
      {"run", "every step in order"}};
  for (const auto& [name, help] : cmds) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--driver", o.driver, "mild, aggressive or both")->check(CLI::IsMember({"mild", "aggressive", "both"}));
    if (name == "evaluate") {
      sub->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
      sub->add_option("--plant", o.plant, "real or nominal");
      sub->add_option("--out", o.out, "trajectory CSV");
    }
    if (name == "gen-profile") sub->add_option("--out", o.out, "CSV path");
    if (name == "gen-road") sub->add_flag("--csv", o.road_csv, "also export the grid as CSV");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (app.get_subcommands().empty()) std::cerr << app.help();
    return 1;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return run(cmd, o);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "aborted: " << e.what() << '\n';
    return 2;
  }
}
