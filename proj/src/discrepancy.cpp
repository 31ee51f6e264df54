#include "twinccd/discrepancy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

namespace twinccd {

Features make_features(const Observation& e, const Observation& y, const Action& u, const DrivingCondition& drive) {
  Features f;
  f.segment<kObsDim>(0) = e;
  f.segment<kObsDim>(kObsDim) = y;
  f.segment<kActionDim>(2 * kObsDim) = u;
  f(2 * kObsDim + kActionDim) = drive.a;
  f(2 * kObsDim + kActionDim + 1) = drive.v;
  f(2 * kObsDim + kActionDim + 2) = drive.delta;
  return f;
}

Standardizer Standardizer::identity(Eigen::Index dim) {
  return {Eigen::RowVectorXd::Zero(dim), Eigen::RowVectorXd::Ones(dim)};
}

Standardizer Standardizer::fit(const ad::Matrix& data) {
  if (data.rows() == 0) throw std::invalid_argument("cannot fit a standardizer on an empty matrix");
  Standardizer s;
  s.mean = data.colwise().mean();
  const ad::Matrix centered = data.rowwise() - s.mean;
  s.scale = (centered.colwise().squaredNorm() / static_cast<double>(data.rows())).cwiseSqrt();
  for (Eigen::Index j = 0; j < s.scale.size(); ++j) {
    if (!(s.scale(j) > 1e-12)) s.scale(j) = 1.0;
  }
  return s;
}

ad::Matrix Standardizer::apply(const ad::Matrix& data) const {
  return (data.rowwise() - mean).array().rowwise() / scale.array();
}

ad::Matrix Standardizer::invert(const ad::Matrix& data) const {
  return (data.array().rowwise() * scale.array()).matrix().rowwise() + mean;
}

void QuantileModelConfig::validate() const {
  if (input <= 0 || output <= 0) throw std::invalid_argument("quantile model widths must be positive");
  if (!(taus[0] < taus[1] && taus[1] < taus[2]) || taus[0] <= 0.0 || taus[2] >= 1.0) {
    throw std::invalid_argument("quantile levels must be increasing inside (0, 1)");
  }
  if (epochs < 0 || minibatch <= 0 || !(lr > 0) || !(lr_final_fraction > 0 && lr_final_fraction <= 1)) {
    throw std::invalid_argument("invalid quantile training schedule");
  }
}

double pinball_loss(const ad::Matrix& residual, double tau) {
  const ad::Matrix r = residual;
  return r.unaryExpr([tau](double v) { return std::max(tau * v, (tau - 1.0) * v); }).mean();
}

ad::Var pinball_loss(const ad::Var& prediction, const ad::Var& target, double tau) {
  const ad::Var r = ad::sub(target, prediction);
  return ad::mean(ad::maximum(ad::scale(r, tau), ad::scale(r, tau - 1.0)));
}

namespace {

MlpConfig head_config(const QuantileModelConfig& cfg) { return {cfg.input, cfg.hidden, cfg.output}; }

}  // namespace

QuantileModel::QuantileModel(const QuantileModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  for (auto& h : heads_) h = Mlp(head_config(cfg), rng);
  x_scale_ = Standardizer::identity(cfg.input);
  y_scale_ = Standardizer::identity(cfg.output);
}

QuantileModel QuantileModel::constant(const QuantileModelConfig& cfg, const Eigen::VectorXd& lower,
                                      const Eigen::VectorXd& median, const Eigen::VectorXd& upper) {
  cfg.validate();
  QuantileModel m;
  m.cfg_ = cfg;
  const std::array<const Eigen::VectorXd*, 3> outs{&lower, &median, &upper};
  for (std::size_t i = 0; i < 3; ++i) {
    if (outs[i]->size() != cfg.output) throw std::invalid_argument("constant quantile output has wrong width");
    m.heads_[i] = Mlp::constant(head_config(cfg), 0.0, 0.0);
    auto& last = m.heads_[i].bias(m.heads_[i].layers() - 1);
    last.value = outs[i]->transpose();
  }
  m.x_scale_ = Standardizer::identity(cfg.input);
  m.y_scale_ = Standardizer::identity(cfg.output);
  return m;
}

QuantileModel QuantileModel::zero(const QuantileModelConfig& cfg) {
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(cfg.output);
  return constant(cfg, z, z, z);
}

std::array<ad::Matrix, 3> QuantileModel::predict_raw(const ad::Matrix& x) const {
  const ad::Matrix xs = x_scale_.apply(x);
  std::array<ad::Matrix, 3> out;
  for (std::size_t i = 0; i < 3; ++i) out[i] = y_scale_.invert(heads_[i].forward(xs));
  return out;
}

QuantileBand QuantileModel::predict(const ad::Matrix& x) const {
  auto raw = predict_raw(x);
  QuantileBand b{raw[0], raw[1], raw[2]};
  for (Eigen::Index i = 0; i < b.lower.size(); ++i) {
    std::array<double, 3> v{b.lower(i), b.median(i), b.upper(i)};
    std::sort(v.begin(), v.end());
    b.lower(i) = v[0];
    b.median(i) = v[1];
    b.upper(i) = v[2];
  }
  return b;
}

QuantilePrediction QuantileModel::predict(const Features& x) const {
  if (cfg_.input != kFeatureDim || cfg_.output != kObsDim) {
    throw std::invalid_argument("single-sample prediction needs a 29 -> 11 model");
  }
  const QuantileBand b = predict(ad::Matrix(x.transpose()));
  return {b.lower.row(0).transpose(), b.median.row(0).transpose(), b.upper.row(0).transpose()};
}

QuantileFitReport QuantileModel::fit(const ad::Matrix& x_train, const ad::Matrix& y_train, const ad::Matrix& x_val,
                                     const ad::Matrix& y_val, Rng& rng) {
  if (x_train.rows() == 0) throw std::invalid_argument("quantile fit needs a nonempty training split");
  if (x_train.rows() != y_train.rows() || x_val.rows() != y_val.rows()) {
    throw std::invalid_argument("feature and target row counts differ");
  }
  if (x_train.cols() != cfg_.input || y_train.cols() != cfg_.output) {
    throw std::invalid_argument("dataset widths do not match the quantile model");
  }
  x_scale_ = Standardizer::fit(x_train);
  y_scale_ = Standardizer::fit(y_train);
  const ad::Matrix xs = x_scale_.apply(x_train);
  const ad::Matrix ys = y_scale_.apply(y_train);

  std::vector<ad::Parameter*> params;
  for (auto& h : heads_) {
    const auto p = h.parameters();
    params.insert(params.end(), p.begin(), p.end());
  }
  Adam opt(AdamConfig{cfg_.lr});
  QuantileFitReport report;
  const auto n = static_cast<std::size_t>(xs.rows());
  std::vector<std::size_t> order(n);
  const auto mb = static_cast<std::size_t>(cfg_.minibatch);
  const double total_steps = static_cast<double>(cfg_.epochs) * static_cast<double>((n + mb - 1) / mb);
  double done = 0.0;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += mb) {
      const std::size_t len = std::min(mb, n - start);
      ad::Matrix xb(static_cast<Eigen::Index>(len), xs.cols());
      ad::Matrix yb(static_cast<Eigen::Index>(len), ys.cols());
      for (std::size_t r = 0; r < len; ++r) {
        xb.row(static_cast<Eigen::Index>(r)) = xs.row(static_cast<Eigen::Index>(order[start + r]));
        yb.row(static_cast<Eigen::Index>(r)) = ys.row(static_cast<Eigen::Index>(order[start + r]));
      }
      ad::Tape tape;
      const ad::Var xin = tape.constant(std::move(xb));
      const ad::Var target = tape.constant(std::move(yb));
      ad::Var loss = tape.scalar(0.0);
      for (std::size_t h = 0; h < 3; ++h) {
        loss = ad::add(loss, pinball_loss(heads_[h].forward(tape, xin), target, cfg_.taus[h]));
      }
      ad::zero_grad(params);
      tape.backward(loss);
      const double frac = total_steps > 1 ? done / (total_steps - 1) : 0.0;
      opt.config().lr = cfg_.lr * (1.0 - frac * (1.0 - cfg_.lr_final_fraction));
      done += 1.0;
      if (!opt.step(params)) throw std::runtime_error("non-finite gradient while fitting the quantile model");
      total += loss.scalar();
      ++batches;
    }
    report.train_loss.push_back(total / static_cast<double>(batches));
  }
  report.epochs = cfg_.epochs;

  if (x_val.rows() > 0) {
    const auto raw = predict_raw(x_val);
    const QuantileBand band = predict(x_val);
    for (std::size_t h = 0; h < 3; ++h) {
      report.val_pinball[h] = pinball_loss(y_scale_.apply(y_val) - y_scale_.apply(raw[h]), cfg_.taus[h]);
    }
    report.val_rmse_median = std::sqrt((y_val - band.median).squaredNorm() / static_cast<double>(y_val.size()));
    const auto inside = ((y_val.array() >= band.lower.array()) && (y_val.array() <= band.upper.array())).count();
    report.val_coverage = static_cast<double>(inside) / static_cast<double>(y_val.size());
  }
  return report;
}

DatasetSplit split_blocks(const ErrorDataset& data, std::size_t block_len, std::size_t val_every) {
  if (block_len == 0 || val_every < 2) throw std::invalid_argument("invalid block split");
  std::vector<Eigen::Index> train, val;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t block = i / block_len;
    ((block % val_every) == val_every - 1 ? val : train).push_back(static_cast<Eigen::Index>(i));
  }
  DatasetSplit s;
  s.x_train = data.features(train, Eigen::all);
  s.y_train = data.targets(train, Eigen::all);
  s.x_val = data.features(val, Eigen::all);
  s.y_val = data.targets(val, Eigen::all);
  return s;
}

ErrorDataset collect_errors(const Plant& real, const Plant& nominal, const SuspensionDesign& design,
                            const PolicyFn& policy, const DisturbanceSeries& series, std::size_t max_steps) {
  std::size_t n = series.size();
  if (max_steps > 0) n = std::min(n, max_steps);
  // The last step has no successor observation.
  const std::size_t rows = n > 0 ? n - 1 : 0;
  ErrorDataset d;
  d.features.resize(static_cast<Eigen::Index>(rows), kFeatureDim);
  d.targets.resize(static_cast<Eigen::Index>(rows), kObsDim);
  State x = State::Zero();
  Observation e = Observation::Zero();
  std::size_t k = 0;
  for (; k < rows; ++k) {
    const Observation y = observe(x);
    const Action u = policy(y);
    const auto& drive = series.drive[k];
    const auto& road = series.road[k];
    const State x_next = rk4_step<double>(x, u, drive, road, real, design, series.dt);
    const State x_pred = rk4_step<double>(x, u, drive, road, nominal, design, series.dt);
    if (diverged(x_next) || diverged(x_pred) || diverged(u)) {
      d.truncated = true;
      break;
    }
    const Observation e_next = observe(x_next) - observe(x_pred);
    d.features.row(static_cast<Eigen::Index>(k)) = make_features(e, y, u, drive).transpose();
    d.targets.row(static_cast<Eigen::Index>(k)) = e_next.transpose();
    e = e_next;
    x = x_next;
  }
  if (d.truncated) {
    d.features.conservativeResize(static_cast<Eigen::Index>(k), kFeatureDim);
    d.targets.conservativeResize(static_cast<Eigen::Index>(k), kObsDim);
  }
  return d;
}

namespace {

const char* const kObsNames[kObsDim] = {"zdot_s", "alphadot", "betadot", "z_u1", "z_u2", "z_u3",
                                        "z_u4",   "defl1",    "defl2",   "defl3", "defl4"};

}  // namespace

void write_error_csv(const std::filesystem::path& path, const ErrorDataset& data) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.precision(17);
  for (int i = 0; i < kObsDim; ++i) os << "e_" << kObsNames[i] << ',';
  for (int i = 0; i < kObsDim; ++i) os << "y_" << kObsNames[i] << ',';
  for (int i = 0; i < kActionDim; ++i) os << "u" << i + 1 << ',';
  os << "a,v,delta";
  for (int i = 0; i < kObsDim; ++i) os << ",next_e_" << kObsNames[i];
  os << '\n';
  for (Eigen::Index r = 0; r < data.features.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.features.cols(); ++c) os << (c ? "," : "") << data.features(r, c);
    for (Eigen::Index c = 0; c < data.targets.cols(); ++c) os << ',' << data.targets(r, c);
    os << '\n';
  }
}

ErrorDataset read_error_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open error dataset " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != static_cast<std::size_t>(kFeatureDim + kObsDim)) {
      throw std::invalid_argument("malformed row in error dataset " + path.string());
    }
    rows.push_back(std::move(row));
  }
  ErrorDataset d;
  d.features.resize(static_cast<Eigen::Index>(rows.size()), kFeatureDim);
  d.targets.resize(static_cast<Eigen::Index>(rows.size()), kObsDim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int c = 0; c < kFeatureDim; ++c) d.features(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
    for (int c = 0; c < kObsDim; ++c) {
      d.targets(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(kFeatureDim + c)];
    }
  }
  return d;
}

UpdatedModel::UpdatedModel(Plant nominal, const QuantileModel* model) : nominal_(std::move(nominal)), model_(model) {
  if (model_ == nullptr) throw std::invalid_argument("updated model needs a quantile model");
  const auto& C = observation_matrix();
  c_pinv_ = C.completeOrthogonalDecomposition().pseudoInverse();
}

UpdatedStep UpdatedModel::step(const State& x, const Observation& e_k, const Action& u, const DrivingCondition& drive,
                               const WheelDisturbance& road, const SuspensionDesign& design, double dt) const {
  const State x_nom = rk4_step<double>(x, u, drive, road, nominal_, design, dt);
  const Observation y_nom = observe(x_nom);
  UpdatedStep s;
  s.error = model_->predict(make_features(e_k, observe(x), u, drive));
  s.y.lower = y_nom + s.error.lower;
  s.y.median = y_nom + s.error.median;
  s.y.upper = y_nom + s.error.upper;
  s.next = x_nom + c_pinv_ * s.error.median;
  return s;
}

}  // namespace twinccd
