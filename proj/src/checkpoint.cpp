#include "twinccd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace twinccd {

namespace {

constexpr char kMagic[8] = {'T', 'C', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::invalid_argument("truncated checkpoint " + path.string());
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, const std::filesystem::path& path) {
  const auto n = get<std::uint64_t>(is, path);
  if (n > (1ULL << 32)) throw std::invalid_argument("corrupt string length in " + path.string());
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::invalid_argument("truncated checkpoint " + path.string());
  return s;
}

void put_net(Checkpoint& ck, const std::string& prefix, const Mlp& net) {
  for (const auto* p : net.parameters()) ck.tensors[prefix + "." + p->name] = p->value;
}

void get_net(const Checkpoint& ck, const std::string& prefix, Mlp& net) {
  for (auto* p : net.parameters()) {
    const auto& t = ck.tensor(prefix + "." + p->name);
    if (t.rows() != p->value.rows() || t.cols() != p->value.cols()) {
      throw std::invalid_argument("checkpoint tensor " + prefix + "." + p->name + " does not match the architecture");
    }
    p->value = t;
    p->zero_grad();
  }
}

void put_adam(Checkpoint& ck, const std::string& prefix, const Adam& opt) {
  ck.tensors[prefix + ".steps"] = Eigen::MatrixXd::Constant(1, 1, static_cast<double>(opt.steps()));
  for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
    ck.tensors[prefix + ".m." + std::to_string(i)] = opt.first_moments()[i];
    ck.tensors[prefix + ".v." + std::to_string(i)] = opt.second_moments()[i];
  }
}

}  // namespace

const Eigen::MatrixXd& Checkpoint::tensor(const std::string& name) const {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw std::invalid_argument("checkpoint has no tensor '" + name + "'");
  return it->second;
}

const std::string& Checkpoint::blob(const std::string& name) const {
  const auto it = blobs.find(name);
  if (it == blobs.end()) throw std::invalid_argument("checkpoint has no blob '" + name + "'");
  return it->second;
}

void Checkpoint::write(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, tensors.size());
  for (const auto& [name, m] : tensors) {
    put_string(os, name);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
  put<std::uint64_t>(os, blobs.size());
  for (const auto& [name, b] : blobs) {
    put_string(os, name);
    put_string(os, b);
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint Checkpoint::read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::invalid_argument("checkpoint not found: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::invalid_argument("not a checkpoint file: " + path.string());
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw std::invalid_argument("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  Checkpoint ck;
  const auto nt = get<std::uint64_t>(is, path);
  for (std::uint64_t i = 0; i < nt; ++i) {
    std::string name = get_string(is, path);
    const auto rows = get<std::uint64_t>(is, path);
    const auto cols = get<std::uint64_t>(is, path);
    if (rows * cols > (1ULL << 31)) throw std::invalid_argument("corrupt tensor size in " + path.string());
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!is) throw std::invalid_argument("truncated checkpoint " + path.string());
    ck.tensors.emplace(std::move(name), std::move(m));
  }
  const auto nb = get<std::uint64_t>(is, path);
  for (std::uint64_t i = 0; i < nb; ++i) {
    std::string name = get_string(is, path);
    ck.blobs.emplace(std::move(name), get_string(is, path));
  }
  return ck;
}

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint) {
  std::filesystem::path p = checkpoint;
  p += ".json";
  return p;
}

void write_manifest(const std::filesystem::path& checkpoint, const nlohmann::json& manifest) {
  std::ofstream os(manifest_path(checkpoint));
  if (!os) throw std::runtime_error("cannot write manifest for " + checkpoint.string());
  os << manifest.dump(2) << '\n';
}

nlohmann::json read_manifest(const std::filesystem::path& checkpoint) {
  const auto p = manifest_path(checkpoint);
  std::ifstream is(p);
  if (!is) throw std::invalid_argument("manifest not found: " + p.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("malformed manifest " + p.string() + ": " + e.what());
  }
}

Checkpoint agent_checkpoint(const Agent& agent, const Adam* net_opt, const Adam* design_opt, const Rng* rng) {
  Checkpoint ck;
  put_net(ck, "mean", agent.mean_net());
  put_net(ck, "std", agent.std_net());
  put_net(ck, "value", agent.value_net());
  ck.tensors["design"] = agent.design_leaf().value;
  ck.tensors["obs_scale"] = agent.obs_scale();
  ck.tensors["value_scale"] = Eigen::MatrixXd::Constant(1, 1, agent.value_scale());
  ck.tensors["action_scale"] = Eigen::MatrixXd::Constant(1, 1, agent.action_scale());
  if (net_opt) put_adam(ck, "adam_net", *net_opt);
  if (design_opt) put_adam(ck, "adam_design", *design_opt);
  if (rng) ck.blobs["rng"] = rng->serialize();
  return ck;
}

Agent agent_from_checkpoint(const Checkpoint& ck, const AgentConfig& cfg, const DesignBounds& bounds) {
  if (std::abs(ck.tensor("action_scale")(0, 0) - cfg.action_scale) > 0.0) {
    throw std::invalid_argument("checkpoint action scale differs from the configured one");
  }
  Rng unused(0);
  const auto& d = ck.tensor("design");
  if (d.rows() != 1 || d.cols() != 2) throw std::invalid_argument("checkpoint design tensor must be 1x2");
  Agent agent(cfg, bounds, SuspensionDesign{d(0, 0) * bounds.k_mid(), d(0, 1) * bounds.c_mid()}, unused);
  get_net(ck, "mean", agent.mean_net());
  get_net(ck, "std", agent.std_net());
  get_net(ck, "value", agent.value_net());
  agent.design_leaf().value = d;
  const auto& s = ck.tensor("obs_scale");
  if (s.size() != kObsDim) throw std::invalid_argument("checkpoint obs_scale must have 11 entries");
  agent.set_obs_scale(Observation(Eigen::Map<const Observation>(s.data())));
  agent.set_value_scale(ck.tensor("value_scale")(0, 0));
  return agent;
}

void restore_optimizer(const Checkpoint& ck, const std::string& prefix, Adam& opt) {
  opt.set_steps(static_cast<long>(ck.tensor(prefix + ".steps")(0, 0)));
  opt.first_moments().clear();
  opt.second_moments().clear();
  for (std::size_t i = 0;; ++i) {
    const auto m = ck.tensors.find(prefix + ".m." + std::to_string(i));
    if (m == ck.tensors.end()) break;
    opt.first_moments().push_back(m->second);
    opt.second_moments().push_back(ck.tensor(prefix + ".v." + std::to_string(i)));
  }
}

Checkpoint quantile_checkpoint(const QuantileModel& model) {
  Checkpoint ck;
  for (int h = 0; h < 3; ++h) put_net(ck, "head" + std::to_string(h), model.head(h));
  ck.tensors["x_mean"] = model.input_scaler().mean;
  ck.tensors["x_scale"] = model.input_scaler().scale;
  ck.tensors["y_mean"] = model.target_scaler().mean;
  ck.tensors["y_scale"] = model.target_scaler().scale;
  Eigen::MatrixXd taus(1, 3);
  for (int i = 0; i < 3; ++i) taus(0, i) = model.config().taus[static_cast<std::size_t>(i)];
  ck.tensors["taus"] = taus;
  return ck;
}

QuantileModel quantile_from_checkpoint(const Checkpoint& ck, const QuantileModelConfig& cfg) {
  QuantileModel m = QuantileModel::zero(cfg);
  for (int h = 0; h < 3; ++h) get_net(ck, "head" + std::to_string(h), m.head(h));
  auto row = [&](const std::string& name) {
    const auto& t = ck.tensor(name);
    return Eigen::RowVectorXd(Eigen::Map<const Eigen::RowVectorXd>(t.data(), t.size()));
  };
  m.input_scaler() = {row("x_mean"), row("x_scale")};
  m.target_scaler() = {row("y_mean"), row("y_scale")};
  if (m.input_scaler().mean.size() != cfg.input || m.target_scaler().mean.size() != cfg.output) {
    throw std::invalid_argument("quantile checkpoint scalers do not match the configuration");
  }
  return m;
}

void save_artifact(const std::filesystem::path& path, const Checkpoint& ck, const std::string& kind,
                   const std::string& config_hash, const nlohmann::json& extra) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  ck.write(path);
  nlohmann::json m = extra;
  m["kind"] = kind;
  m["format"] = "TCCKPT01";
  m["version"] = kCheckpointVersion;
  m["config_hash"] = config_hash;
  nlohmann::json shapes = nlohmann::json::object();
  for (const auto& [name, t] : ck.tensors) shapes[name] = {t.rows(), t.cols()};
  m["tensors"] = shapes;
  write_manifest(path, m);
}

Checkpoint load_artifact(const std::filesystem::path& path, const std::string& kind, const std::string& expected_hash) {
  if (!std::filesystem::exists(path)) throw std::invalid_argument("checkpoint not found: " + path.string());
  const nlohmann::json m = read_manifest(path);
  if (m.value("kind", std::string{}) != kind) {
    throw std::invalid_argument(path.string() + " is not a " + kind + " checkpoint");
  }
  if (!expected_hash.empty() && m.value("config_hash", std::string{}) != expected_hash) {
    throw std::invalid_argument("config hash mismatch for " + path.string());
  }
  return Checkpoint::read(path);
}

}  // namespace twinccd
