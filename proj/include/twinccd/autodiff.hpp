#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records every operation in execution order, so the recording is a
// topological order of the graph and backward() is one reverse sweep that
// visits each node once. Values are Eigen::MatrixXd; batches are stored one
// sample per row. Trainable tensors live in Parameter objects owned by the
// caller; Tape::leaf() binds one into the graph and backward() accumulates
// into Parameter::grad.

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace twinccd::ad {

using Matrix = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) { zero_grad(); }
  void zero_grad() { grad = Matrix::Zero(value.rows(), value.cols()); }
};

void zero_grad(const std::vector<Parameter*>& params);
bool grads_finite(const std::vector<Parameter*>& params);

class Tape;

// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Receives the node's output gradient; must route it to the inputs with accumulate().
  using Backprop = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var scalar(double v);
  Var leaf(Parameter& param);

  // Records a node. `inputs` are the nodes it reads; backprop runs only if
  // at least one of them carries a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backprop backprop);

  // Reverse sweep from a 1x1 node; throws std::invalid_argument otherwise.
  void backward(const Var& output);

  void accumulate(const Var& v, const Matrix& g);
  bool needs_grad(const Var& v) const { return nodes_[static_cast<std::size_t>(v.id_)].needs_grad; }
  const Matrix& value(const Var& v) const { return nodes_[static_cast<std::size_t>(v.id_)].value; }
  // Gradient of the last backward() output with respect to v (zero-sized if none reached it).
  const Matrix& grad(const Var& v) const { return nodes_[static_cast<std::size_t>(v.id_)].grad; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backprop backprop;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::deque<Node> nodes_;
};

// Elementwise and linear-algebra operations. Binary elementwise ops require
// equal shapes, except add/sub which also broadcast a 1 x c row over n x c.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var shift(const Var& a, double s);
Var neg(const Var& a);
Var tanh(const Var& a);
Var softplus(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var row_sum(const Var& a);
Var concat_cols(const Var& a, const Var& b);
Var repeat_rows(const Var& row, Eigen::Index n);
// Gradient passes only where lo < a < hi.
Var clamp(const Var& a, double lo, double hi);
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);
// Elementwise 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise, d = a - b.
Var smooth_l1(const Var& a, const Var& b);
// Scalar node whose value and gradient with respect to `input` were computed
// elsewhere (for example by forward-mode differentiation of a simulation).
Var external(const Var& input, double value, const Matrix& gradient);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator-(const Var& a) { return neg(a); }

// Numerically stable softplus on plain matrices.
Matrix softplus(const Matrix& x);

}  // namespace twinccd::ad
