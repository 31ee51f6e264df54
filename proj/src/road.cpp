#include "twinccd/road.hpp"

#include <unsupported/Eigen/FFT>

#include <array>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "twinccd/random.hpp"

namespace twinccd {

namespace {

constexpr char kSurfaceMagic[8] = {'T', 'C', 'S', 'U', 'R', 'F', '0', '1'};
constexpr std::uint32_t kSurfaceVersion = 1;

using Complex = std::complex<double>;

// Signed FFT frequency index for bin k of n.
double signed_bin(Eigen::Index k, Eigen::Index n) {
  return static_cast<double>(k <= n / 2 ? k : k - n);
}

std::array<double, 4> catmull_rom(double t) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  return {0.5 * (-t3 + 2.0 * t2 - t), 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0), 0.5 * (-3.0 * t3 + 4.0 * t2 + t),
          0.5 * (t3 - t2)};
}

std::array<double, 4> catmull_rom_slope(double t) {
  const double t2 = t * t;
  return {0.5 * (-3.0 * t2 + 4.0 * t - 1.0), 0.5 * (9.0 * t2 - 10.0 * t), 0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
          0.5 * (3.0 * t2 - 2.0 * t)};
}

// Splits a coordinate into a base cell and fractional offset in [0, 1].
std::pair<Eigen::Index, double> locate(double u, Eigen::Index n) {
  auto i = static_cast<Eigen::Index>(std::floor(u));
  if (i >= n - 1) i = n - 2;
  if (i < 0) i = 0;
  return {i, u - static_cast<double>(i)};
}

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated surface file");
  return v;
}

}  // namespace

void SpectralConfig::validate() const {
  if (!(S0 > 0) || !(n0 > 0) || !(omega > 0) || !(epsilon > 0) || !(target_std > 0)) {
    throw std::invalid_argument("spectral config: S0, n0, omega, epsilon, target_std must be positive");
  }
}

double SpectralConfig::psd(double nx, double ny) const {
  return S0 * std::pow(n0 / std::sqrt(nx * nx + ny * ny + epsilon), omega);
}

void HillConfig::validate() const {
  if (!(length > 0)) throw std::invalid_argument("hill length must be positive");
}

double HillConfig::elevation(double x) const {
  if (x < x0 || x > x0 + length) return 0.0;
  return amplitude * std::sin(std::numbers::pi * (x - x0) / length);
}

RoadSurface::RoadSurface(Eigen::MatrixXd grid, double origin_x, double origin_y, double spacing,
                         double calibration, std::uint64_t seed)
    : grid_(std::move(grid)),
      origin_x_(origin_x),
      origin_y_(origin_y),
      spacing_(spacing),
      calibration_(calibration),
      seed_(seed) {
  if (!(spacing_ > 0)) throw std::invalid_argument("surface spacing must be positive");
  if (grid_.rows() < 4 || grid_.cols() < 4) throw std::invalid_argument("surface grid must be at least 4x4");
  refresh_gradients();
}

void RoadSurface::refresh_gradients() {
  const Eigen::Index n = nx();
  const Eigen::Index m = ny();
  grad_x_.resize(n, m);
  grad_y_.resize(n, m);
  const double h = spacing_;
  grad_x_.row(0) = (grid_.row(1) - grid_.row(0)) / h;
  grad_x_.row(n - 1) = (grid_.row(n - 1) - grid_.row(n - 2)) / h;
  grad_x_.middleRows(1, n - 2) = (grid_.bottomRows(n - 2) - grid_.topRows(n - 2)) / (2.0 * h);
  grad_y_.col(0) = (grid_.col(1) - grid_.col(0)) / h;
  grad_y_.col(m - 1) = (grid_.col(m - 1) - grid_.col(m - 2)) / h;
  grad_y_.middleCols(1, m - 2) = (grid_.rightCols(m - 2) - grid_.leftCols(m - 2)) / (2.0 * h);
}

bool RoadSurface::contains(double x, double y) const {
  return x >= origin_x_ && x <= x_max() && y >= origin_y_ && y <= y_max();
}

// Node value with linear extrapolation one node past each border, so the
// cubic stencil is defined everywhere and linear fields stay exact.
double RoadSurface::node(Eigen::Index i, Eigen::Index j) const {
  const Eigen::Index n = nx();
  const Eigen::Index m = ny();
  if (i < 0) return 2.0 * node(0, j) - node(1, j);
  if (i >= n) return 2.0 * node(n - 1, j) - node(n - 2, j);
  if (j < 0) return 2.0 * node(i, 0) - node(i, 1);
  if (j >= m) return 2.0 * node(i, m - 1) - node(i, m - 2);
  return grid_(i, j);
}

ElevationSample RoadSurface::sample(double x, double y) const {
  if (!contains(x, y)) {
    throw std::out_of_range("road query (" + std::to_string(x) + ", " + std::to_string(y) +
                            ") is outside the surface");
  }
  const auto [i, tx] = locate((x - origin_x_) / spacing_, nx());
  const auto [j, ty] = locate((y - origin_y_) / spacing_, ny());
  const auto wx = catmull_rom(tx);
  const auto wy = catmull_rom(ty);
  const auto dwx = catmull_rom_slope(tx);
  const auto dwy = catmull_rom_slope(ty);
  ElevationSample s;
  for (int a = 0; a < 4; ++a) {
    double col = 0.0;
    double col_dy = 0.0;
    for (int b = 0; b < 4; ++b) {
      const double f = node(i - 1 + a, j - 1 + b);
      col += wy[b] * f;
      col_dy += dwy[b] * f;
    }
    s.z += wx[a] * col;
    s.dz_dx += dwx[a] * col;
    s.dz_dy += wx[a] * col_dy;
  }
  s.dz_dx /= spacing_;
  s.dz_dy /= spacing_;
  return s;
}

void RoadSurface::write_binary(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kSurfaceMagic, sizeof(kSurfaceMagic));
  write_pod(os, kSurfaceVersion);
  write_pod(os, static_cast<std::uint64_t>(nx()));
  write_pod(os, static_cast<std::uint64_t>(ny()));
  write_pod(os, origin_x_);
  write_pod(os, origin_y_);
  write_pod(os, spacing_);
  write_pod(os, calibration_);
  write_pod(os, seed_);
  os.write(reinterpret_cast<const char*>(grid_.data()),
           static_cast<std::streamsize>(grid_.size() * sizeof(double)));
}

RoadSurface RoadSurface::read_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open surface file " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kSurfaceMagic, sizeof(magic)) != 0) {
    throw std::runtime_error(path.string() + " is not a surface file");
  }
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kSurfaceVersion) throw std::runtime_error("unsupported surface file version");
  const auto n = read_pod<std::uint64_t>(is);
  const auto m = read_pod<std::uint64_t>(is);
  const auto ox = read_pod<double>(is);
  const auto oy = read_pod<double>(is);
  const auto h = read_pod<double>(is);
  const auto cal = read_pod<double>(is);
  const auto seed = read_pod<std::uint64_t>(is);
  Eigen::MatrixXd grid(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  is.read(reinterpret_cast<char*>(grid.data()), static_cast<std::streamsize>(grid.size() * sizeof(double)));
  if (!is) throw std::runtime_error("truncated surface file");
  return RoadSurface(std::move(grid), ox, oy, h, cal, seed);
}

void RoadSurface::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.precision(17);
  os << "x,y,z,dz_dx,dz_dy\n";
  for (Eigen::Index i = 0; i < nx(); ++i) {
    for (Eigen::Index j = 0; j < ny(); ++j) {
      os << origin_x_ + static_cast<double>(i) * spacing_ << ',' << origin_y_ + static_cast<double>(j) * spacing_
         << ',' << grid_(i, j) << ',' << grad_x_(i, j) << ',' << grad_y_(i, j) << '\n';
    }
  }
}

RoadSurface generate_surface(const SpectralConfig& cfg, double extent_x, double extent_y, double resolution) {
  return generate_surface(cfg, extent_x, extent_y, resolution, nullptr);
}

RoadSurface generate_surface(const SpectralConfig& cfg, double extent_x, double extent_y, double resolution,
                             double* max_imag_residual) {
  cfg.validate();
  if (!(resolution > 0)) throw std::invalid_argument("resolution must be positive");
  const double cells_x = extent_x / resolution;
  const double cells_y = extent_y / resolution;
  if (std::abs(cells_x - std::round(cells_x)) > 1e-9 || std::abs(cells_y - std::round(cells_y)) > 1e-9) {
    throw std::invalid_argument("extent must be an integer multiple of the resolution");
  }
  const auto n = static_cast<Eigen::Index>(std::llround(cells_x));
  const auto m = static_cast<Eigen::Index>(std::llround(cells_y));
  if (n < 4 || m < 4) throw std::invalid_argument("surface must have at least 4 nodes per axis");

  // Amplitudes sqrt(Phi) with random phases. Each bin is paired with its
  // mirror (-k mod N); the canonical member of the pair draws the phase and
  // the mirror receives the conjugate. Self-mirrored bins get a real value
  // of random sign so their magnitude stays exact.
  Eigen::MatrixXcd spectrum = Eigen::MatrixXcd::Zero(n, m);
  Rng rng(cfg.seed);
  double power = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == 0 && j == 0) continue;
      const Eigen::Index mi = (n - i) % n;
      const Eigen::Index mj = (m - j) % m;
      const bool self = (mi == i && mj == j);
      const bool canonical = (j < mj) || (j == mj && i < mi);
      if (!self && !canonical) continue;
      // Frequencies are bin numbers (cycles per domain length), so epsilon
      // only regularises the zero bin. In cycles per metre it would put a
      // corner near sqrt(epsilon) and flatten every longer wavelength.
      const double amp = std::sqrt(cfg.psd(signed_bin(i, n), signed_bin(j, m)));
      if (self) {
        spectrum(i, j) = rng.uniform() < 0.5 ? amp : -amp;
        power += amp * amp;
      } else {
        const double phase = 2.0 * std::numbers::pi * rng.uniform();
        const Complex c = std::polar(amp, phase);
        spectrum(i, j) = c;
        spectrum(mi, mj) = std::conj(c);
        power += 2.0 * amp * amp;
      }
    }
  }

  // With deterministic magnitudes the field variance is sum|F|^2 / N^2
  // (Parseval, zero mean), so the calibration factor is exact.
  const double total = static_cast<double>(n) * static_cast<double>(m);
  const double unit_std = std::sqrt(power) / total;
  const double calibration = cfg.target_std / unit_std;
  spectrum *= calibration;

  Eigen::FFT<double> fft;
  std::vector<Complex> in;
  std::vector<Complex> out;
  for (Eigen::Index j = 0; j < m; ++j) {
    in.assign(spectrum.col(j).data(), spectrum.col(j).data() + n);
    fft.inv(out, in);
    for (Eigen::Index i = 0; i < n; ++i) spectrum(i, j) = out[static_cast<std::size_t>(i)];
  }
  in.resize(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) in[static_cast<std::size_t>(j)] = spectrum(i, j);
    fft.inv(out, in);
    for (Eigen::Index j = 0; j < m; ++j) spectrum(i, j) = out[static_cast<std::size_t>(j)];
  }
  if (max_imag_residual) *max_imag_residual = spectrum.imag().cwiseAbs().maxCoeff();
  Eigen::MatrixXd grid = spectrum.real();
  return RoadSurface(std::move(grid), 0.0, 0.0, resolution, calibration, cfg.seed);
}

RoadSurface add_hill(const RoadSurface& surface, const HillConfig& hill) {
  hill.validate();
  if (hill.x0 < surface.origin_x() || hill.x0 + hill.length > surface.x_max()) {
    throw std::invalid_argument("hill support lies outside the surface");
  }
  RoadSurface out = surface;
  for (Eigen::Index i = 0; i < out.nx(); ++i) {
    const double x = out.origin_x() + static_cast<double>(i) * out.spacing();
    const double dz = hill.elevation(x);
    if (dz != 0.0) out.grid_.row(i).array() += dz;
  }
  out.refresh_gradients();
  return out;
}

std::vector<std::pair<double, double>> radial_periodogram(const Eigen::MatrixXd& grid, double spacing, double f_lo,
                                                          double f_hi) {
  const Eigen::Index n = grid.rows();
  const Eigen::Index m = grid.cols();
  Eigen::MatrixXcd work = grid.cast<Complex>();
  Eigen::FFT<double> fft;
  std::vector<Complex> in;
  std::vector<Complex> out;
  for (Eigen::Index j = 0; j < m; ++j) {
    in.assign(work.col(j).data(), work.col(j).data() + n);
    fft.fwd(out, in);
    for (Eigen::Index i = 0; i < n; ++i) work(i, j) = out[static_cast<std::size_t>(i)];
  }
  in.resize(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) in[static_cast<std::size_t>(j)] = work(i, j);
    fft.fwd(out, in);
    for (Eigen::Index j = 0; j < m; ++j) work(i, j) = out[static_cast<std::size_t>(j)];
  }
  // Rings one frequency-bin wide.
  const double df = 1.0 / (static_cast<double>(std::max(n, m)) * spacing);
  const auto rings = static_cast<std::size_t>(std::ceil(f_hi / df)) + 1;
  std::vector<double> sum(rings, 0.0);
  std::vector<int> count(rings, 0);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double fx = signed_bin(i, n) / (static_cast<double>(n) * spacing);
      const double fy = signed_bin(j, m) / (static_cast<double>(m) * spacing);
      const double f = std::hypot(fx, fy);
      if (f < f_lo || f > f_hi) continue;
      const auto r = static_cast<std::size_t>(std::llround(f / df));
      if (r >= rings) continue;
      sum[r] += std::norm(work(i, j));
      ++count[r];
    }
  }
  std::vector<std::pair<double, double>> result;
  for (std::size_t r = 0; r < rings; ++r) {
    if (count[r] > 0) result.emplace_back(static_cast<double>(r) * df, sum[r] / count[r]);
  }
  return result;
}

double loglog_slope(const std::vector<std::pair<double, double>>& spectrum) {
  if (spectrum.size() < 2) throw std::invalid_argument("need at least two spectral points");
  Eigen::MatrixXd a(static_cast<Eigen::Index>(spectrum.size()), 2);
  Eigen::VectorXd b(a.rows());
  for (Eigen::Index k = 0; k < a.rows(); ++k) {
    const auto& [f, p] = spectrum[static_cast<std::size_t>(k)];
    a(k, 0) = std::log(f);
    a(k, 1) = 1.0;
    b(k) = std::log(p);
  }
  return a.colPivHouseholderQr().solve(b)(0);
}

}  // namespace twinccd
