#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "twinccd/checkpoint.hpp"
#include "twinccd/config.hpp"

using namespace twinccd;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

AgentConfig small() {
  AgentConfig c;
  c.policy.hidden = {6, 5};
  c.value.hidden = {7};
  return c;
}

}  // namespace

TEST_CASE("agent checkpoint round trip, optimizer and rng included") {
  TempDir dir("twinccd_test_ckpt");
  Rng rng(1);
  Agent a(small(), DesignBounds{}, {31234.5, 2222.25}, rng);
  a.set_value_scale(123.5);
  Observation s = Observation::LinSpaced(0.1, 1.1);
  a.set_obs_scale(s);
  Adam opt(AdamConfig{1e-3});
  for (auto* p : a.all_parameters()) p->grad.setConstant(0.5);
  auto ps = a.policy_parameters();
  opt.step(ps);

  const Checkpoint ck = agent_checkpoint(a, &opt, nullptr, &rng);
  ck.write(dir.path / "a.ckpt");
  const Checkpoint back = Checkpoint::read(dir.path / "a.ckpt");
  const Agent b = agent_from_checkpoint(back, small(), DesignBounds{});
  CHECK(b.design().k_s == a.design().k_s);
  CHECK(b.design().c_s == a.design().c_s);
  CHECK(b.value_scale() == 123.5);
  CHECK(b.obs_scale() == s);
  const auto pa = const_cast<Agent&>(a).all_parameters();
  const auto pb = const_cast<Agent&>(b).all_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);

  Adam restored;
  restore_optimizer(back, "adam_net", restored);
  CHECK(restored.steps() == opt.steps());
  REQUIRE(restored.first_moments().size() == opt.first_moments().size());
  CHECK(restored.first_moments()[0] == opt.first_moments()[0]);
  CHECK(restored.second_moments()[1] == opt.second_moments()[1]);

  Rng r2(0);
  r2.deserialize(back.blob("rng"));
  CHECK(r2 == rng);

  // wrong architecture is refused
  AgentConfig other = small();
  other.policy.hidden = {6, 6};
  CHECK_THROWS(agent_from_checkpoint(back, other, DesignBounds{}));
}

TEST_CASE("quantile model checkpoint round trip") {
  TempDir dir("twinccd_test_qckpt");
  Rng rng(2);
  QuantileModelConfig cfg;
  cfg.hidden = {5};
  QuantileModel m(cfg, rng);
  m.input_scaler().mean = Eigen::RowVectorXd::Constant(kFeatureDim, 0.3);
  m.input_scaler().scale = Eigen::RowVectorXd::Constant(kFeatureDim, 2.0);
  m.target_scaler() = Standardizer::identity(kObsDim);
  quantile_checkpoint(m).write(dir.path / "q.ckpt");
  const QuantileModel r = quantile_from_checkpoint(Checkpoint::read(dir.path / "q.ckpt"), cfg);
  const Features x = Features::LinSpaced(-1.0, 1.0);
  const QuantilePrediction p = m.predict(x), q = r.predict(x);
  CHECK(p.lower == q.lower);
  CHECK(p.median == q.median);
  CHECK(p.upper == q.upper);
}

TEST_CASE("artifacts: manifest, kind and hash checks, bad files") {
  TempDir dir("twinccd_test_artifact");
  Checkpoint ck;
  ck.tensors["m"] = Eigen::MatrixXd::Random(3, 2);
  ck.blobs["note"] = std::string("a\0b", 3);
  save_artifact(dir.path / "x.ckpt", ck, "thing", "abcd", {{"epoch", 7}});
  CHECK(fs::exists(manifest_path(dir.path / "x.ckpt")));
  const nlohmann::json man = read_manifest(dir.path / "x.ckpt");
  CHECK(man.at("kind") == "thing");
  CHECK(man.at("config_hash") == "abcd");
  CHECK(man.at("epoch") == 7);
  const Checkpoint back = load_artifact(dir.path / "x.ckpt", "thing", "abcd");
  CHECK(back.tensor("m") == ck.tensors["m"]);
  CHECK(back.blob("note") == ck.blobs["note"]);
  CHECK_THROWS(load_artifact(dir.path / "x.ckpt", "other"));
  CHECK_THROWS(load_artifact(dir.path / "x.ckpt", "thing", "ffff"));
  CHECK_THROWS(back.tensor("missing"));
  CHECK_THROWS(config_from_json({{"seed", -3}}));

  CHECK_THROWS_AS(Checkpoint::read(dir.path / "nope.ckpt"), std::invalid_argument);
  {
    std::ofstream os(dir.path / "trunc.ckpt", std::ios::binary);
    os << "TCCKPT01";
  }
  CHECK_THROWS_AS(Checkpoint::read(dir.path / "trunc.ckpt"), std::invalid_argument);
}

TEST_CASE("config: presets, overrides, unknown keys, hash") {
  const RunConfig paper = RunConfig::paper();
  const RunConfig desk = RunConfig::desk();
  CHECK(paper.preset == "paper");
  CHECK(desk.preset == "desk");
  CHECK(paper.seed == 42);
  CHECK(paper.dt == 0.01);
  CHECK(desk.step1.max_epochs >= 100);
  CHECK(desk.step1.rollout_len == 1000);
  CHECK(config_hash(paper) != config_hash(desk));
  CHECK(config_hash(paper).size() == 16);
  CHECK(config_hash(paper) == config_hash(RunConfig::paper()));

  // JSON round trip
  const RunConfig again = config_from_json(to_json(desk));
  CHECK(config_hash(again) == config_hash(desk));

  nlohmann::json j = {{"preset", "desk"}, {"seed", 7}};
  const RunConfig o = config_from_json(j);
  CHECK(o.seed == 7);
  CHECK(o.step1.max_epochs == desk.step1.max_epochs);

  CHECK_THROWS(config_from_json({{"sead", 7}}));
  CHECK_THROWS(config_from_json({{"step1", {{"max_epoch", 3}}}}));
  CHECK_THROWS(config_from_json({{"preset", "huge"}}));
  CHECK_THROWS(config_from_json({{"dt", -1.0}}));
  CHECK_THROWS(RunConfig::preset_named("nope"));

  TempDir dir("twinccd_test_config");
  save_config(dir.path / "c.json", o);
  CHECK(config_hash(load_config(dir.path / "c.json")) == config_hash(o));
  CHECK_THROWS(load_config(dir.path / "missing.json"));
}

TEST_CASE("road seed derivation") {
  RunConfig c = RunConfig::desk();
  c.road.spectral.seed = 0;
  CHECK(c.road_seed() == derive_seed(c.seed, "road"));
  c.road.spectral.seed = 99;
  CHECK(c.road_seed() == 99);
}
