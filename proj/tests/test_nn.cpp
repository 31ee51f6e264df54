#include <doctest.h>

#include <cmath>
#include <numbers>

#include "twinccd/nn.hpp"

using namespace twinccd;
using ad::Matrix;

namespace {

AgentConfig small_agent() {
  AgentConfig c;
  c.policy.hidden = {4, 4};
  c.value.hidden = {4, 4};
  return c;
}

}  // namespace

TEST_CASE("MLP forward matches a hand-written pass") {
  Rng rng(2);
  const MlpConfig cfg{3, {5, 4}, 2};
  Mlp net(cfg, rng);
  CHECK(net.layers() == 3);
  Matrix x(2, 3);
  x << 0.1, -0.2, 0.3, 1.0, 0.5, -0.7;
  Matrix h = x;
  for (std::size_t l = 0; l < 3; ++l) {
    Matrix z = h * net.weight(l).value;
    for (Eigen::Index r = 0; r < z.rows(); ++r) z.row(r) += net.bias(l).value.row(0);
    h = l < 2 ? Matrix(z.array().tanh()) : z;
  }
  CHECK(net.forward(x).isApprox(h, 1e-14));
  ad::Tape t;
  CHECK(net.forward(t, t.constant(x)).value().isApprox(h, 1e-14));
  CHECK(net.hidden_activations(x).size() == 2);
  CHECK_THROWS_AS(net.forward(Matrix::Zero(1, 4)), std::invalid_argument);

  // init range 1/sqrt(fan_in)
  CHECK(net.weight(0).value.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(3.0));
  CHECK(net.weight(1).value.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(5.0));
}

TEST_CASE("architecture of the agent") {
  Rng rng(3);
  Agent a(AgentConfig{}, DesignBounds{}, {27692.0, 1906.5}, rng);
  CHECK(a.mean_net().config().input == 13);
  CHECK(a.mean_net().config().hidden == std::vector<int>{128, 128, 128});
  CHECK(a.mean_net().config().output == 4);
  CHECK(a.value_net().config().output == 1);
  // std net: zero weights, 0.01 biases, every layer
  for (std::size_t l = 0; l < a.std_net().layers(); ++l) {
    const auto& w = a.std_net().weight(l).value;
    const auto& b = a.std_net().bias(l).value;
    CHECK(w.isZero(0.0));
    CHECK((b.array() == 0.01).all());
  }
  CHECK(a.design().k_s == doctest::Approx(27692.0));
  CHECK(a.design().c_s == doctest::Approx(1906.5));
  CHECK(a.design_leaf().value(0, 0) == doctest::Approx(27692.0 / 32500.0));
  CHECK(a.design_leaf().value(0, 1) == doctest::Approx(1906.5 / 3250.0));
}

TEST_CASE("design leaf is projected into the bounds") {
  Rng rng(4);
  Agent a(small_agent(), DesignBounds{}, {27692.0, 1906.5}, rng);
  a.design_leaf().value(0, 0) = 10.0;
  a.design_leaf().value(0, 1) = -1.0;
  a.project_design();
  CHECK(a.design().k_s == doctest::Approx(60000.0));
  CHECK(a.design().c_s == doctest::Approx(500.0));
}

TEST_CASE("std stays positive for arbitrary weights") {
  Rng rng(5);
  Agent a(small_agent(), DesignBounds{}, {27692.0, 1906.5}, rng);
  for (auto* p : a.std_net().parameters())
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value(i) = rng.uniform(-50.0, 50.0);
  Matrix obs(64, kObsDim);
  for (Eigen::Index i = 0; i < obs.size(); ++i) obs(i) = rng.uniform(-10.0, 10.0);
  const PolicyOutput out = a.policy(obs);
  CHECK((out.std.array() > 0.0).all());
  CHECK(out.std.allFinite());
}

TEST_CASE("Gaussian log density") {
  Matrix x(1, 2), m(1, 2), s(1, 2);
  x << 0.3, -1.0;
  m << 0.0, 0.5;
  s << 2.0, 0.5;
  double want = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double z = (x(0, i) - m(0, i)) / s(0, i);
    want += -0.5 * z * z - std::log(s(0, i)) - 0.5 * std::log(2 * std::numbers::pi);
  }
  CHECK(gaussian_log_prob(x, m, s)(0) == doctest::Approx(want));
}

TEST_CASE("sampling is deterministic and consistent") {
  Rng init(6);
  const Agent a(small_agent(), DesignBounds{}, {27692.0, 1906.5}, init);
  Observation y;
  y << 0.1, -0.02, 0.03, 0.01, 0.0, -0.01, 0.02, 0.05, -0.03, 0.0, 0.01;
  Rng r1(10), r2(10);
  for (int k = 0; k < 20; ++k) {
    const ActionSample s1 = a.sample_action(y, r1);
    const ActionSample s2 = a.sample_action(y, r2);
    CHECK(s1.force == s2.force);
    CHECK(s1.log_prob == s2.log_prob);
    CHECK(s1.force.isApprox(s1.normalized * 100.0));
    const PolicyOutput p = a.policy(y.transpose());
    CHECK(s1.log_prob == doctest::Approx(gaussian_log_prob(s1.normalized.transpose(), p.mean, p.std)(0)));
  }
  CHECK(a.mean_action(y).isApprox(a.policy(y.transpose()).mean.row(0).transpose() * 100.0));

  // sample mean and spread
  Rng r3(11);
  Eigen::Vector4d sum = Eigen::Vector4d::Zero(), sq = Eigen::Vector4d::Zero();
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    const Eigen::Vector4d v = a.sample_action(y, r3).normalized;
    sum += v;
    sq += v.cwiseProduct(v);
  }
  const PolicyOutput p = a.policy(y.transpose());
  for (int i = 0; i < 4; ++i) {
    const double mu = sum(i) / n;
    const double sd = std::sqrt(sq(i) / n - mu * mu);
    CHECK(std::abs(mu - p.mean(0, i)) < 4.0 * p.std(0, i) / std::sqrt(n));
    CHECK(sd == doctest::Approx(p.std(0, i)).epsilon(0.03));
  }
}

TEST_CASE("observation scaling of the network input") {
  Rng rng(7);
  Agent a(small_agent(), DesignBounds{}, {30000.0, 2000.0}, rng);
  Observation s = Observation::Constant(2.0);
  a.set_obs_scale(s);
  Matrix obs = Matrix::Constant(3, kObsDim, 4.0);
  const Matrix in = a.network_input(obs);
  CHECK(in.rows() == 3);
  CHECK(in.cols() == 13);
  CHECK((in.rightCols(kObsDim).array() == 2.0).all());
  CHECK(in(2, 0) == doctest::Approx(30000.0 / 32500.0));
  ad::Tape t;
  const ad::Var leaf = t.leaf(a.design_leaf());
  CHECK(a.network_input(t, leaf, obs).value() == in);
}

TEST_CASE("Adam update against the textbook formula") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam opt(cfg);
  ad::Parameter p("p", Matrix::Constant(1, 2, 1.0));
  double m0 = 0, v0 = 0, m1 = 0, v1 = 0, x0 = 1.0, x1 = 1.0;
  for (int t = 1; t <= 5; ++t) {
    const double g0 = 2.0 * x0, g1 = -0.5 + 0.1 * t;
    p.grad(0, 0) = g0;
    p.grad(0, 1) = g1;
    REQUIRE(opt.step({&p}));
    m0 = 0.9 * m0 + 0.1 * g0;
    v0 = 0.999 * v0 + 0.001 * g0 * g0;
    m1 = 0.9 * m1 + 0.1 * g1;
    v1 = 0.999 * v1 + 0.001 * g1 * g1;
    const double b1 = 1 - std::pow(0.9, t), b2 = 1 - std::pow(0.999, t);
    x0 -= 0.1 * (m0 / b1) / (std::sqrt(v0 / b2) + 1e-8);
    x1 -= 0.1 * (m1 / b1) / (std::sqrt(v1 / b2) + 1e-8);
    CHECK(p.value(0, 0) == doctest::Approx(x0).epsilon(1e-12));
    CHECK(p.value(0, 1) == doctest::Approx(x1).epsilon(1e-12));
  }
  CHECK(opt.steps() == 5);
  p.grad(0, 0) = std::nan("");
  const Matrix before = p.value;
  CHECK_FALSE(opt.step({&p}));
  CHECK(p.value == before);
  CHECK(opt.steps() == 5);
}

TEST_CASE("same seed, same agent") {
  Rng a(8), b(8);
  const Agent x(small_agent(), DesignBounds{}, {27692.0, 1906.5}, a);
  const Agent y(small_agent(), DesignBounds{}, {27692.0, 1906.5}, b);
  CHECK(x.mean_net().parameters()[0]->value == y.mean_net().parameters()[0]->value);
  CHECK(x.value_net().parameters()[2]->value == y.value_net().parameters()[2]->value);
  CHECK(a == b);
}

TEST_CASE("rng streams") {
  CHECK(derive_seed(42, "road") == splitmix64(42 ^ fnv1a64("road")));
  CHECK(derive_seed(42, "road") != derive_seed(42, "bo"));
  CHECK(fnv1a64("") == 14695981039346656037ULL);
  // published splitmix64 test vector for seed 0
  CHECK(splitmix64(0) == 0xE220A8397B1DCDAFULL);
  Rng r(5);
  const std::string snap = r.serialize();
  const double first = r.uniform();
  r.deserialize(snap);
  CHECK(r.uniform() == first);
  double s = 0, s2 = 0;
  for (int i = 0; i < 100000; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / 1e5) < 0.02);
  CHECK(s2 / 1e5 == doctest::Approx(1.0).epsilon(0.02));
}
