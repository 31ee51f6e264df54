#pragma once

// Steps 0-3 of one generation, artifact layout under a run root, and the
// before/after metrics.
//
// <root>/config.json
// <root>/road/surface.bin
// <root>/step0/warmstart.ckpt  bo_log.csv  pretrain.json
// <root>/step1/pi1.ckpt  train_log.csv  record.json
// <root>/<driver>/profile.csv
// <root>/<driver>/step2/pi2.ckpt  finetune_log.csv  errors.csv  quantile.ckpt  quantile.json
// <root>/<driver>/step3/pi3.ckpt  train_log.csv  eval_before.csv  eval_after.csv  report.csv  generation.json
// <root>/report.csv

#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include <json.hpp>

#include "twinccd/config.hpp"

namespace twinccd {

struct RunContext {
  RunConfig cfg;
  std::filesystem::path root;
  std::string hash;
  // Progress lines; defaults to silence.
  std::function<void(const std::string&)> log;

  RunContext(RunConfig c, std::filesystem::path r);
  void say(const std::string& s) const {
    if (log) log(s);
  }
  Rng rng(const std::string& tag) const { return Rng(derive_seed(cfg.seed, tag)); }
  std::filesystem::path path(const std::filesystem::path& rel) const { return root / rel; }
  std::filesystem::path driver_dir(DriverStyle d) const { return root / std::string(to_string(d)); }
};

// Resolves the run root from an explicit value, else $DTCCD_RUN_ROOT, else "runs/default".
std::filesystem::path resolve_run_root(const std::string& flag);

// Writes the config snapshot. An existing snapshot with another hash is
// replaced only when `overwrite` is set.
void init_run(const RunContext& ctx, bool overwrite);

// Surface with the hill, cached under road/ and regenerated when the road
// section of the config changes.
std::shared_ptr<const RoadSurface> build_road(const RunContext& ctx);
std::shared_ptr<const DisturbanceSeries> build_series(const RunContext& ctx, DriverStyle d,
                                                      const RoadSurface& road, bool write_csv = true);

struct Step0Result {
  GainVector gains;
  double objective = 0.0;
  double zero_gain_objective = 0.0;
  PretrainReport pretrain;
};
Step0Result run_step0(const RunContext& ctx);

struct Step1Result {
  SuspensionDesign design;
  TrainingRecord record;
};
Step1Result run_step1(const RunContext& ctx);

struct Step2Result {
  QuantileFitReport fit;
  std::size_t error_rows = 0;
};
// Deployment and fine-tuning only (pi1 -> pi2).
void run_deploy(const RunContext& ctx, DriverStyle d);
// Error collection with pi2 and the quantile fit.
Step2Result run_fit_discrepancy(const RunContext& ctx, DriverStyle d);
Step2Result run_step2(const RunContext& ctx, DriverStyle d);

struct EvalMetrics {
  double rms_accel = 0.0;   // RMS of the heave acceleration, m/s^2
  double mean_abs_u = 0.0;  // mean |u| over actuators and steps, N
  std::size_t steps = 0;
  bool diverged = false;
};

struct MetricReport {
  EvalMetrics before;
  EvalMetrics after;
};

inline double improvement_percent(double before, double after) {
  return std::abs(before - after) / before * 100.0;
}

// Deterministic policy mean on `plant` along `series` from the zero state.
// Writes the per-step trajectory when `csv` is nonempty. Divergence stops
// the replay and is flagged.
EvalMetrics evaluate(const Agent& agent, const SuspensionDesign& design, const Plant& plant,
                     const DisturbanceSeries& series, std::size_t steps, const std::filesystem::path& csv = {});
// Recomputes the metrics from a trajectory CSV written by evaluate.
EvalMetrics metrics_from_csv(const std::filesystem::path& csv);

struct Step3Result {
  SuspensionDesign design;
  TrainingRecord record;
  MetricReport report;
};
Step3Result run_step3(const RunContext& ctx, DriverStyle d);

void write_report_csv(const std::filesystem::path& path, const MetricReport& r);
// Table of both drivers from their generation records; returns the rows written.
int write_run_report(const RunContext& ctx);

// Loads a checkpoint of the given kind written under this run's config.
Agent load_agent(const RunContext& ctx, const std::filesystem::path& path, const std::string& kind);

}  // namespace twinccd
