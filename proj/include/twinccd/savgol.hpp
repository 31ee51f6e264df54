#pragma once

#include <Eigen/Dense>

namespace twinccd {

// Savitzky-Golay smoothing (zeroth derivative). Interior points use the
// central least-squares kernel; the first and last half-window points are
// taken from a polynomial fitted to the first/last full window, so
// polynomials up to `order` pass through unchanged everywhere.
class SavitzkyGolay {
 public:
  SavitzkyGolay(int window, int order);

  Eigen::VectorXd apply(const Eigen::VectorXd& signal) const;
  const Eigen::VectorXd& kernel() const { return kernel_; }
  int window() const { return window_; }
  int order() const { return order_; }

 private:
  int window_;
  int order_;
  Eigen::VectorXd kernel_;
  // Maps one window of samples to fitted values at every window position.
  Eigen::MatrixXd projector_;
};

}  // namespace twinccd
