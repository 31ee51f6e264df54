#include "twinccd/savgol.hpp"

#include <stdexcept>

namespace twinccd {

SavitzkyGolay::SavitzkyGolay(int window, int order) : window_(window), order_(order) {
  if (window < 3 || window % 2 == 0) throw std::invalid_argument("Savitzky-Golay window must be odd and >= 3");
  if (order < 0 || order >= window) throw std::invalid_argument("Savitzky-Golay order must be in [0, window)");
  const int half = window / 2;
  Eigen::MatrixXd vander(window, order + 1);
  for (int r = 0; r < window; ++r) {
    const double t = static_cast<double>(r - half);
    double p = 1.0;
    for (int c = 0; c <= order; ++c) {
      vander(r, c) = p;
      p *= t;
    }
  }
  // Hat matrix V (V^T V)^-1 V^T; its middle row is the smoothing kernel.
  const Eigen::MatrixXd pinv = vander.completeOrthogonalDecomposition().pseudoInverse();
  projector_ = vander * pinv;
  kernel_ = projector_.row(half).transpose();
}

Eigen::VectorXd SavitzkyGolay::apply(const Eigen::VectorXd& signal) const {
  const Eigen::Index n = signal.size();
  if (n < window_) throw std::invalid_argument("signal shorter than the Savitzky-Golay window");
  const int half = window_ / 2;
  Eigen::VectorXd out(n);
  for (Eigen::Index i = half; i < n - half; ++i) {
    out(i) = kernel_.dot(signal.segment(i - half, window_));
  }
  const Eigen::VectorXd head = projector_ * signal.head(window_);
  const Eigen::VectorXd tail = projector_ * signal.tail(window_);
  out.head(half) = head.head(half);
  out.tail(half) = tail.tail(half);
  return out;
}

}  // namespace twinccd
