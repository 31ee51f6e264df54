#include <doctest.h>

#include <cmath>
#include <functional>

#include "twinccd/autodiff.hpp"
#include "twinccd/nn.hpp"
#include "twinccd/random.hpp"

using namespace twinccd;
using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo, double hi) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.uniform(lo, hi);
  return m;
}

using Builder = std::function<Var(Tape&, std::vector<Var>&)>;

// Relative error between the tape gradient and central differences, worst
// over all parameters.
double gradient_error(std::vector<Parameter>& params, const Builder& f) {
  std::vector<Parameter*> ptrs;
  for (auto& p : params) ptrs.push_back(&p);
  ad::zero_grad(ptrs);
  {
    Tape tape;
    std::vector<Var> leaves;
    for (auto& p : params) leaves.push_back(tape.leaf(p));
    tape.backward(f(tape, leaves));
  }
  auto eval = [&] {
    Tape tape;
    std::vector<Var> leaves;
    for (auto& p : params) leaves.push_back(tape.leaf(p));
    return f(tape, leaves).scalar();
  };
  double worst = 0.0;
  for (auto& p : params) {
    Matrix fd(p.value.rows(), p.value.cols());
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double x0 = p.value(i);
      const double h = 1e-6 * std::max(1.0, std::abs(x0));
      p.value(i) = x0 + h;
      const double fp = eval();
      p.value(i) = x0 - h;
      const double fm = eval();
      p.value(i) = x0;
      fd(i) = (fp - fm) / (2 * h);
    }
    const double denom = std::max(fd.norm(), 1e-8);
    worst = std::max(worst, (p.grad - fd).norm() / denom);
  }
  return worst;
}

// Contract an arbitrary-shape node to a scalar with fixed random weights so
// every output entry matters.
Var contract(Tape& t, const Var& v, std::uint64_t seed) {
  Rng r(seed);
  return ad::sum(ad::mul(v, t.constant(random_matrix(r, v.rows(), v.cols(), -1.0, 1.0))));
}

}  // namespace

TEST_CASE("finite-difference agreement for every operation") {
  Rng rng(1);
  auto params = [&](double lo, double hi) {
    return std::vector<Parameter>{Parameter("a", random_matrix(rng, 3, 4, lo, hi)),
                                  Parameter("b", random_matrix(rng, 3, 4, lo, hi))};
  };
  struct Case {
    const char* name;
    double lo, hi;
    Builder f;
  };
  const std::vector<Case> cases = {
      {"add", -1, 1, [](Tape& t, auto& v) { return contract(t, v[0] + v[1], 2); }},
      {"sub", -1, 1, [](Tape& t, auto& v) { return contract(t, v[0] - v[1], 3); }},
      {"mul", -1, 1, [](Tape& t, auto& v) { return contract(t, ad::mul(v[0], v[1]), 4); }},
      {"div", 0.5, 2, [](Tape& t, auto& v) { return contract(t, ad::div(v[0], v[1]), 5); }},
      {"scale/shift/neg", -1, 1,
       [](Tape& t, auto& v) { return contract(t, -ad::shift(ad::scale(v[0], 2.5), 0.3), 6); }},
      {"tanh", -2, 2, [](Tape& t, auto& v) { return contract(t, ad::tanh(v[0]), 7); }},
      {"softplus", -3, 3, [](Tape& t, auto& v) { return contract(t, ad::softplus(v[1]), 8); }},
      {"exp", -1, 1, [](Tape& t, auto& v) { return contract(t, ad::exp(v[0]), 9); }},
      {"log", 0.2, 3, [](Tape& t, auto& v) { return contract(t, ad::log(v[0]), 10); }},
      {"square", -1, 1, [](Tape& t, auto& v) { return contract(t, ad::square(v[0]), 11); }},
      {"sum", -1, 1, [](Tape& t, auto& v) { return ad::sum(ad::mul(v[0], v[1])); }},
      {"mean", -1, 1, [](Tape& t, auto& v) { return ad::mean(ad::square(v[0])); }},
      {"row_sum", -1, 1, [](Tape& t, auto& v) { return contract(t, ad::row_sum(ad::mul(v[0], v[1])), 12); }},
      {"concat_cols", -1, 1, [](Tape& t, auto& v) { return contract(t, ad::concat_cols(v[0], ad::tanh(v[1])), 13); }},
      {"matmul", -1, 1,
       [](Tape& t, auto& v) {
         Rng r(14);
         const Var m = t.constant(random_matrix(r, 4, 2, -1, 1));
         return contract(t, ad::matmul(ad::matmul(v[0], m), ad::matmul(t.constant(random_matrix(r, 2, 3, -1, 1)), v[1])), 15);
       }},
      {"row broadcast", -1, 1,
       [](Tape& t, auto& v) {
         Rng r(16);
         const Var w = t.constant(random_matrix(r, 4, 4, -1, 1));
         const Var r1 = ad::matmul(t.constant(Matrix::Constant(1, 3, 1.0 / 3)), v[1]);  // 1 x 4
         return contract(t, ad::matmul(v[0] - r1, w) + ad::scale(ad::matmul(ad::tanh(r1), w), 2.0), 17);
       }},
      {"repeat_rows", -1, 1,
       [](Tape& t, auto& v) {
         const Var r1 = ad::matmul(t.constant(Matrix::Constant(1, 3, 0.5)), v[1]);
         return contract(t, ad::mul(ad::repeat_rows(r1, 3), v[0]), 18);
       }},
      // inputs kept away from the kinks
      {"clamp", -1, 1, [](Tape& t, auto& v) { return contract(t, ad::clamp(ad::scale(v[0], 3.0), -1.5, 1.5), 19); }},
      {"minimum", -1, 1,
       [](Tape& t, auto& v) { return contract(t, ad::minimum(v[0], ad::shift(v[1], 0.05)), 20); }},
      {"maximum", -1, 1,
       [](Tape& t, auto& v) { return contract(t, ad::maximum(v[0], ad::shift(v[1], 0.05)), 21); }},
      {"smooth_l1", -2, 2,
       [](Tape& t, auto& v) { return contract(t, ad::smooth_l1(v[0], ad::scale(v[1], 0.37)), 22); }},
  };
  for (const auto& c : cases) {
    auto p = params(c.lo, c.hi);
    if (std::string(c.name) == "clamp") {
      // nudge entries off the clamp edges
      for (auto& q : p)
        for (Eigen::Index i = 0; i < q.value.size(); ++i)
          if (std::abs(std::abs(q.value(i) * 3.0) - 1.5) < 1e-3) q.value(i) += 0.01;
    }
    const double err = gradient_error(p, c.f);
    INFO(std::string(c.name) << " relative error " << err);
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("external node routes a supplied gradient") {
  Parameter p("p", Matrix::Constant(1, 2, 0.5));
  Tape t;
  const Var leaf = t.leaf(p);
  Matrix g(1, 2);
  g << 3.0, -2.0;
  const Var e = ad::external(leaf, 7.0, g);
  CHECK(e.scalar() == 7.0);
  t.backward(ad::scale(e, 2.0));
  CHECK(p.grad(0, 0) == 6.0);
  CHECK(p.grad(0, 1) == -4.0);
  CHECK_THROWS_AS(ad::external(leaf, 1.0, Matrix::Zero(2, 2)), std::invalid_argument);
}

TEST_CASE("each node's backprop runs once, in reverse order") {
  Parameter p("p", Matrix::Constant(1, 1, 2.0));
  Tape t;
  const Var x = t.leaf(p);
  std::vector<int> order;
  auto counted = [&](const Var& in, int id) {
    return t.record(in.value(), {in}, [in, id, &order](Tape& tape, const Matrix& g) {
      order.push_back(id);
      tape.accumulate(in, g);
    });
  };
  // diamond: x -> a -> {b, c} -> d
  const Var a = counted(x, 0);
  const Var b = counted(a, 1);
  const Var c = counted(a, 2);
  const Var d = counted(b + c, 3);
  t.backward(d);
  REQUIRE(order.size() == 4);
  CHECK(order[0] == 3);
  CHECK(order[3] == 0);
  CHECK(p.grad(0, 0) == 2.0);
}

TEST_CASE("gradients accumulate until reset") {
  Parameter p("p", Matrix::Constant(2, 2, 1.0));
  for (int k = 0; k < 2; ++k) {
    Tape t;
    t.backward(ad::sum(ad::square(t.leaf(p))));
  }
  CHECK(p.grad.isApprox(Matrix::Constant(2, 2, 4.0)));
  ad::zero_grad({&p});
  CHECK(p.grad.isZero(0.0));
  Tape t;
  CHECK_THROWS_AS(t.backward(t.leaf(p)), std::invalid_argument);
  Tape other;
  CHECK_THROWS_AS(ad::add(t.leaf(p), other.leaf(p)), std::invalid_argument);
  CHECK_THROWS_AS(ad::mul(t.constant(Matrix::Zero(2, 3)), t.leaf(p)), std::invalid_argument);
}

TEST_CASE("constants carry no gradient") {
  Parameter p("p", Matrix::Constant(1, 1, 3.0));
  Tape t;
  const Var c = t.constant(Matrix::Constant(1, 1, 5.0));
  const Var out = ad::mul(c, t.leaf(p));
  CHECK_FALSE(t.needs_grad(c));
  t.backward(out);
  CHECK(t.grad(c).size() == 0);
  CHECK(p.grad(0, 0) == 5.0);
}

TEST_CASE("softplus is stable at large magnitudes") {
  Matrix x(1, 4);
  x << -800.0, -30.0, 30.0, 800.0;
  const Matrix s = ad::softplus(x);
  CHECK(s.allFinite());
  CHECK(s(0, 0) >= 0.0);
  CHECK(s(0, 3) == doctest::Approx(800.0));
  CHECK(s(0, 1) == doctest::Approx(std::exp(-30.0)).epsilon(1e-9));
}
