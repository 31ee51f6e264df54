#pragma once

// Two-dimensional road surface: spectral roughness synthesis, hill
// superposition, and smooth elevation/gradient queries.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace twinccd {

// Roughness PSD Phi(nx, ny) = S0 * (n0 / sqrt(nx^2 + ny^2 + epsilon))^omega,
// nx and ny being the signed FFT bin numbers along each grid axis. S0 and
// n0 only set the overall level, which the std calibration replaces.
// Bumped whenever generate_surface changes its output for a given config;
// cached surfaces from another revision are regenerated.
inline constexpr int kSurfaceGeneratorRevision = 2;

struct SpectralConfig {
  double S0 = 1e-4;
  double n0 = 0.1;
  double omega = 2.5;
  double epsilon = 0.005;
  std::uint64_t seed = 0;
  // Amplitudes are scaled by one global factor chosen so the field's
  // standard deviation equals this value.
  double target_std = 0.045;

  void validate() const;
  double psd(double nx, double ny) const;
};

struct HillConfig {
  double amplitude = 0.05;
  double x0 = 1000.0;
  double length = 400.0;
  void validate() const;
  // Added elevation at longitudinal coordinate X; zero outside [x0, x0 + length].
  double elevation(double x) const;
};

struct ElevationSample {
  double z = 0.0;
  double dz_dx = 0.0;
  double dz_dy = 0.0;
};

// Elevation grid Z(i, j) at X = origin_x + i * spacing, Y = origin_y + j * spacing.
// Immutable once built; queries are thread-safe.
class RoadSurface {
 public:
  RoadSurface() = default;
  RoadSurface(Eigen::MatrixXd grid, double origin_x, double origin_y, double spacing,
              double calibration = 1.0, std::uint64_t seed = 0);

  Eigen::Index nx() const { return grid_.rows(); }
  Eigen::Index ny() const { return grid_.cols(); }
  double origin_x() const { return origin_x_; }
  double origin_y() const { return origin_y_; }
  double spacing() const { return spacing_; }
  double calibration() const { return calibration_; }
  std::uint64_t seed() const { return seed_; }
  double x_max() const { return origin_x_ + static_cast<double>(nx() - 1) * spacing_; }
  double y_max() const { return origin_y_ + static_cast<double>(ny() - 1) * spacing_; }
  bool contains(double x, double y) const;

  const Eigen::MatrixXd& grid() const { return grid_; }
  // Node gradients by central differences (one-sided at the border).
  const Eigen::MatrixXd& grad_x() const { return grad_x_; }
  const Eigen::MatrixXd& grad_y() const { return grad_y_; }

  // Catmull-Rom bicubic interpolation; gradients come from differentiating
  // the interpolant. Throws std::out_of_range outside the grid.
  ElevationSample sample(double x, double y) const;

  void write_binary(const std::filesystem::path& path) const;
  static RoadSurface read_binary(const std::filesystem::path& path);
  void write_csv(const std::filesystem::path& path) const;

 private:
  friend RoadSurface add_hill(const RoadSurface&, const HillConfig&);
  void refresh_gradients();
  double node(Eigen::Index i, Eigen::Index j) const;

  Eigen::MatrixXd grid_;
  Eigen::MatrixXd grad_x_;
  Eigen::MatrixXd grad_y_;
  double origin_x_ = 0.0;
  double origin_y_ = 0.0;
  double spacing_ = 1.0;
  double calibration_ = 1.0;
  std::uint64_t seed_ = 0;
};

// Random-phase spectral synthesis with a Hermitian-symmetric spectrum; DC is
// zero. extent_x/extent_y in metres; grid has extent/resolution nodes per axis.
RoadSurface generate_surface(const SpectralConfig& cfg, double extent_x, double extent_y,
                             double resolution);

// As above, also returning the largest |imag| seen after the inverse transform.
RoadSurface generate_surface(const SpectralConfig& cfg, double extent_x, double extent_y,
                             double resolution, double* max_imag_residual);

RoadSurface add_hill(const RoadSurface& surface, const HillConfig& hill);

// Radially averaged periodogram of a grid: returns (frequency, power) pairs
// for rings inside [f_lo, f_hi] cycles/m.
std::vector<std::pair<double, double>> radial_periodogram(const Eigen::MatrixXd& grid, double spacing,
                                                          double f_lo, double f_hi);

// Least-squares slope of log(power) against log(frequency).
double loglog_slope(const std::vector<std::pair<double, double>>& spectrum);

}  // namespace twinccd
