#pragma once

// Reference implementations written straight from the model equations with
// plain arrays, independent of the library's templated code.

#include <array>
#include <cmath>

#include <Eigen/Dense>

namespace oracle {

struct Params {
  double m_s, I_a, I_b, c_t, l_f, l_r, l, h;
  std::array<double, 4> m_u, k_t;
  double k_s, c_s;
  double k_nl = 0.0, c_nl = 0.0;
};

inline Params nominal(double k_s, double c_s) {
  return {1500.0, 2500.0, 500.0, 150.0, 1.35, 1.35, 0.75, 0.55, {50, 50, 50, 50}, {2e5, 2e5, 2e5, 2e5}, k_s, c_s};
}

// Emulated physical vehicle: every perturbation spelled out by hand.
inline Params real(double k_s, double c_s) {
  Params p = nominal(k_s, c_s);
  p.m_u = {60, 50, 45, 50};
  p.k_t = {0.9 * 2e5, 1.2 * 2e5, 1.1 * 2e5, 0.9 * 2e5};
  p.h = 0.55 + 0.05;
  p.m_s = 1500.0 * 1.1;
  p.I_a = 2500.0 * 1.1;
  p.I_b = 500.0 * 1.1;
  p.k_nl = 0.1 * k_s;
  p.c_nl = 0.1 * c_s;
  return p;
}

// x = [zs, a, b, zu1..4, zs', a', b', zu1'..4'].
inline std::array<double, 14> xdot(const std::array<double, 14>& x, const std::array<double, 4>& u, double v,
                                   double acc, double delta, const std::array<double, 4>& zr,
                                   const std::array<double, 4>& zrd, const Params& p) {
  const double zs = x[0], al = x[1], be = x[2];
  const double zsd = x[7], ald = x[8], bed = x[9];
  // corner lever arms
  const double dxs[4] = {-p.l_f, -p.l_f, p.l_r, p.l_r};
  const double dys[4] = {p.l / 2, -p.l / 2, p.l / 2, -p.l / 2};
  const double M_a = p.m_s * p.h * acc;
  const double M_b = p.m_s * p.h * v * v * std::tan(delta) / (p.l_f + p.l_r);
  double F = 0, Ma = M_a, Mb = M_b;
  std::array<double, 14> out{};
  for (int i = 0; i < 4; ++i) {
    const double corner = zs + dxs[i] * al + dys[i] * be;
    const double corner_d = zsd + dxs[i] * ald + dys[i] * bed;
    const double s = x[3 + i] - corner;
    const double sd = x[10 + i] - corner_d;
    const double Fs = p.k_s * s + p.c_s * sd + p.k_nl * s * s * s + p.c_nl * std::fabs(sd) * sd;
    const double Ft = p.k_t[i] * (zr[i] - x[3 + i]) + p.c_t * (zrd[i] - x[10 + i]);
    F += Fs + u[i];
    Ma += (Fs + u[i]) * dxs[i];
    Mb += (Fs + u[i]) * dys[i];
    out[10 + i] = (Ft - Fs - u[i]) / p.m_u[i];
  }
  for (int i = 0; i < 7; ++i) out[i] = x[7 + i];
  out[7] = F / p.m_s;
  out[8] = Ma / p.I_a;
  out[9] = Mb / p.I_b;
  return out;
}

// exp(M) by scaling and squaring of a truncated Taylor series.
inline Eigen::MatrixXd expm(const Eigen::MatrixXd& M) {
  int s = 0;
  double norm = M.cwiseAbs().rowwise().sum().maxCoeff();
  while (norm > 0.05) {
    norm /= 2.0;
    ++s;
  }
  const Eigen::MatrixXd B = M / std::pow(2.0, s);
  Eigen::MatrixXd E = Eigen::MatrixXd::Identity(M.rows(), M.cols());
  Eigen::MatrixXd term = E;
  for (int k = 1; k <= 20; ++k) {
    term = term * B / static_cast<double>(k);
    E += term;
  }
  for (int i = 0; i < s; ++i) E = E * E;
  return E;
}

}  // namespace oracle
