#pragma once

// Quantile model of the one-step error between the nominal digital model
// and the (emulated) physical vehicle, and the corrected transition model
// built on it.

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <functional>
#include <vector>

#include "twinccd/autodiff.hpp"
#include "twinccd/nn.hpp"
#include "twinccd/profile.hpp"
#include "twinccd/random.hpp"
#include "twinccd/vehicle.hpp"

namespace twinccd {

// e_k (11), y_k (11), u_k (4), a, v, delta.
inline constexpr int kFeatureDim = kObsDim + kObsDim + kActionDim + 3;
using Features = Eigen::Matrix<double, kFeatureDim, 1>;

Features make_features(const Observation& e, const Observation& y, const Action& u, const DrivingCondition& drive);

// Column-wise affine normalisation fitted on training data.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer identity(Eigen::Index dim);
  // Columns with (near) zero spread keep scale 1.
  static Standardizer fit(const ad::Matrix& data);
  ad::Matrix apply(const ad::Matrix& data) const;
  ad::Matrix invert(const ad::Matrix& data) const;
};

struct QuantileModelConfig {
  int input = kFeatureDim;
  int output = kObsDim;
  std::vector<int> hidden{64, 64};
  std::array<double, 3> taus{0.1, 0.5, 0.9};
  int epochs = 30;
  int minibatch = 256;
  double lr = 1e-3;
  // Linear decay to lr * lr_final_fraction by the last step; a constant
  // step leaves the quantile estimates jittering around their targets.
  double lr_final_fraction = 0.05;

  void validate() const;
};

// Batched prediction; rows are samples. lower <= median <= upper holds
// entrywise.
struct QuantileBand {
  ad::Matrix lower;
  ad::Matrix median;
  ad::Matrix upper;
};

struct QuantilePrediction {
  Observation lower;
  Observation median;
  Observation upper;
  Observation width() const { return upper - lower; }
};

struct QuantileFitReport {
  int epochs = 0;
  std::vector<double> train_loss;  // per epoch, summed over the three heads
  std::array<double, 3> val_pinball{};
  double val_rmse_median = 0.0;
  double val_coverage = 0.0;  // fraction of validation entries inside [lower, upper]
};

// Average pinball loss of residuals r = target - prediction.
double pinball_loss(const ad::Matrix& residual, double tau);
ad::Var pinball_loss(const ad::Var& prediction, const ad::Var& target, double tau);

class QuantileModel {
 public:
  QuantileModel() = default;
  QuantileModel(const QuantileModelConfig& cfg, Rng& rng);
  // Input-independent model: every head outputs a fixed vector.
  static QuantileModel constant(const QuantileModelConfig& cfg, const Eigen::VectorXd& lower,
                                const Eigen::VectorXd& median, const Eigen::VectorXd& upper);
  static QuantileModel zero(const QuantileModelConfig& cfg = {});

  QuantileFitReport fit(const ad::Matrix& x_train, const ad::Matrix& y_train, const ad::Matrix& x_val,
                        const ad::Matrix& y_val, Rng& rng);

  // Raw head outputs in target units, before the sorting guard.
  std::array<ad::Matrix, 3> predict_raw(const ad::Matrix& x) const;
  QuantileBand predict(const ad::Matrix& x) const;
  QuantilePrediction predict(const Features& x) const;

  const QuantileModelConfig& config() const { return cfg_; }
  Mlp& head(int i) { return heads_[static_cast<std::size_t>(i)]; }
  const Mlp& head(int i) const { return heads_[static_cast<std::size_t>(i)]; }
  Standardizer& input_scaler() { return x_scale_; }
  Standardizer& target_scaler() { return y_scale_; }
  const Standardizer& input_scaler() const { return x_scale_; }
  const Standardizer& target_scaler() const { return y_scale_; }

 private:
  QuantileModelConfig cfg_;
  std::array<Mlp, 3> heads_;
  Standardizer x_scale_;
  Standardizer y_scale_;
};

// Teacher-forced one-step errors: e_{k+1} = y_real_{k+1} - C rk4_nominal(x_real_k, u_k).
struct ErrorDataset {
  ad::Matrix features;  // n x 29
  ad::Matrix targets;   // n x 11
  bool truncated = false;
  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
};

struct DatasetSplit {
  ad::Matrix x_train, y_train, x_val, y_val;
};

// Contiguous blocks of block_len rows; every val_every-th block goes to
// validation (val_every = 5 gives an 80/20 split).
DatasetSplit split_blocks(const ErrorDataset& data, std::size_t block_len = 1000, std::size_t val_every = 5);

using PolicyFn = std::function<Action(const Observation&)>;

// Runs the real plant under `policy` from the zero state along `series`
// and records one error per step. Stops early (truncated = true) if either
// plant diverges.
ErrorDataset collect_errors(const Plant& real, const Plant& nominal, const SuspensionDesign& design,
                            const PolicyFn& policy, const DisturbanceSeries& series,
                            std::size_t max_steps = 0);

void write_error_csv(const std::filesystem::path& path, const ErrorDataset& data);
ErrorDataset read_error_csv(const std::filesystem::path& path);

struct UpdatedStep {
  State next;  // state carried forward (median branch)
  QuantilePrediction y;      // observation band at k+1
  QuantilePrediction error;  // predicted error band at k+1
};

// Nominal RK4 step corrected by the median error, mapped back to the state
// through the pseudo-inverse of C. C has rank 8 (the deflections follow from
// z_s and the wheel positions), so C * next is the median observation
// projected onto the range of C; it is exact when the error is consistent.
class UpdatedModel {
 public:
  UpdatedModel(Plant nominal, const QuantileModel* model);

  UpdatedStep step(const State& x, const Observation& e_k, const Action& u, const DrivingCondition& drive,
                   const WheelDisturbance& road, const SuspensionDesign& design, double dt) const;

  const Plant& plant() const { return nominal_; }
  const QuantileModel& model() const { return *model_; }
  const Eigen::Matrix<double, kStateDim, kObsDim>& c_pinv() const { return c_pinv_; }

 private:
  Plant nominal_;
  const QuantileModel* model_;
  Eigen::Matrix<double, kStateDim, kObsDim> c_pinv_;
};

}  // namespace twinccd
