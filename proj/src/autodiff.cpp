#include "twinccd/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace twinccd::ad {

namespace {

void require_same_tape(const Var& a, const Var& b) {
  if (!a.valid() || a.tape() != b.tape()) throw std::invalid_argument("operands must live on the same tape");
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

bool row_broadcast(const Var& a, const Var& b) {
  return b.rows() == 1 && a.rows() != 1 && a.cols() == b.cols();
}

Matrix sigmoid(const Matrix& x) {
  return x.unaryExpr([](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

}  // namespace

void zero_grad(const std::vector<Parameter*>& params) {
  for (auto* p : params) p->zero_grad();
}

bool grads_finite(const std::vector<Parameter*>& params) {
  for (const auto* p : params) {
    if (!p->grad.allFinite()) return false;
  }
  return true;
}

const Matrix& Var::value() const { return tape_->value(*this); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::invalid_argument("scalar() on a non-scalar node");
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

Var Tape::leaf(Parameter& param) {
  nodes_.push_back(Node{param.value, {}, {}, &param, true});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backprop backprop) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape() != this) throw std::invalid_argument("input recorded on a different tape");
    needs = needs || needs_grad(in);
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backprop) : Backprop{}, nullptr, needs});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(v.id_)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& output) {
  if (output.tape() != this) throw std::invalid_argument("backward on a node from another tape");
  if (value(output).size() != 1) throw std::invalid_argument("backward requires a scalar (1x1) output");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  Node& out = nodes_[static_cast<std::size_t>(output.id_)];
  if (!out.needs_grad) return;
  out.grad = Matrix::Ones(1, 1);
  for (int i = output.id_; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param) {
      n.param->grad += n.grad;
    } else if (n.backprop) {
      n.backprop(*this, n.grad);
    }
  }
}

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (row_broadcast(a, b)) {
    Matrix v = a.value().rowwise() + b.value().row(0);
    return a.tape()->record(std::move(v), {a, b}, [a, b](Tape& t, const Matrix& g) {
      t.accumulate(a, g);
      t.accumulate(b, g.colwise().sum());
    });
  }
  require_same_shape(a, b, "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (row_broadcast(a, b)) {
    Matrix v = a.value().rowwise() - b.value().row(0);
    return a.tape()->record(std::move(v), {a, b}, [a, b](Tape& t, const Matrix& g) {
      t.accumulate(a, g);
      t.accumulate(b, -g.colwise().sum());
    });
  }
  require_same_shape(a, b, "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "mul");
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var div(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "div");
  return a.tape()->record(a.value().cwiseQuotient(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseQuotient(b.value()));
    if (t.needs_grad(b)) {
      t.accumulate(b, -(g.array() * a.value().array() / b.value().array().square()).matrix());
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  return a.tape()->record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var scale(const Var& a, double s) {
  return a.tape()->record(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var shift(const Var& a, double s) {
  Matrix v = a.value().array() + s;
  return a.tape()->record(std::move(v), {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var tanh(const Var& a) {
  Matrix y = a.value().array().tanh();
  Matrix dy = 1.0 - y.array().square();
  return a.tape()->record(std::move(y), {a},
                          [a, dy = std::move(dy)](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseProduct(dy)); });
}

Matrix softplus(const Matrix& x) {
  return x.unaryExpr([](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
}

Var softplus(const Var& a) {
  return a.tape()->record(softplus(a.value()), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(sigmoid(a.value())));
  });
}

Var exp(const Var& a) {
  Matrix y = a.value().array().exp();
  Matrix dy = y;
  return a.tape()->record(std::move(y), {a},
                          [a, dy = std::move(dy)](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseProduct(dy)); });
}

Var log(const Var& a) {
  return a.tape()->record(a.value().array().log().matrix(), {a},
                          [a](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseQuotient(a.value())); });
}

Var square(const Var& a) {
  return a.tape()->record(a.value().cwiseAbs2(), {a},
                          [a](Tape& t, const Matrix& g) { t.accumulate(a, 2.0 * g.cwiseProduct(a.value())); });
}

Var sum(const Var& a) {
  return a.tape()->record(Matrix::Constant(1, 1, a.value().sum()), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return a.tape()->record(Matrix::Constant(1, 1, a.value().sum() / n), {a}, [a, n](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
  });
}

Var row_sum(const Var& a) {
  return a.tape()->record(a.value().rowwise().sum(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.replicate(1, a.cols()));
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols: row counts differ");
  Matrix v(a.rows(), a.cols() + b.cols());
  v << a.value(), b.value();
  const Eigen::Index ca = a.cols();
  const Eigen::Index cb = b.cols();
  return a.tape()->record(std::move(v), {a, b}, [a, b, ca, cb](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g.leftCols(ca));
    if (t.needs_grad(b)) t.accumulate(b, g.rightCols(cb));
  });
}

Var repeat_rows(const Var& row, Eigen::Index n) {
  if (row.rows() != 1) throw std::invalid_argument("repeat_rows expects a single row");
  return row.tape()->record(row.value().replicate(n, 1), {row},
                            [row](Tape& t, const Matrix& g) { t.accumulate(row, g.colwise().sum()); });
}

Var clamp(const Var& a, double lo, double hi) {
  Matrix v = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape()->record(std::move(v), {a}, [a, lo, hi](Tape& t, const Matrix& g) {
    const Matrix& x = a.value();
    Matrix out = g;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (!(x(i) > lo && x(i) < hi)) out(i) = 0.0;
    }
    t.accumulate(a, out);
  });
}

Var minimum(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "minimum");
  Matrix v = a.value().cwiseMin(b.value());
  return a.tape()->record(std::move(v), {a, b}, [a, b](Tape& t, const Matrix& g) {
    const Matrix pick_a = (a.value().array() <= b.value().array()).cast<double>();
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(pick_a));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct((1.0 - pick_a.array()).matrix()));
  });
}

Var maximum(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "maximum");
  Matrix v = a.value().cwiseMax(b.value());
  return a.tape()->record(std::move(v), {a, b}, [a, b](Tape& t, const Matrix& g) {
    const Matrix pick_a = (a.value().array() >= b.value().array()).cast<double>();
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(pick_a));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct((1.0 - pick_a.array()).matrix()));
  });
}

Var smooth_l1(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "smooth_l1");
  const Matrix d = a.value() - b.value();
  Matrix v = d.unaryExpr([](double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; });
  Matrix slope = d.unaryExpr([](double x) { return std::abs(x) < 1.0 ? x : (x > 0 ? 1.0 : -1.0); });
  return a.tape()->record(std::move(v), {a, b}, [a, b, slope = std::move(slope)](Tape& t, const Matrix& g) {
    const Matrix gs = g.cwiseProduct(slope);
    t.accumulate(a, gs);
    t.accumulate(b, -gs);
  });
}

Var external(const Var& input, double value, const Matrix& gradient) {
  if (gradient.rows() != input.rows() || gradient.cols() != input.cols()) {
    throw std::invalid_argument("external: gradient shape must match its input");
  }
  return input.tape()->record(Matrix::Constant(1, 1, value), {input}, [input, gradient](Tape& t, const Matrix& g) {
    t.accumulate(input, gradient * g(0, 0));
  });
}

}  // namespace twinccd::ad
