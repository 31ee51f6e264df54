#pragma once

// Versioned binary checkpoints of named matrices and text blobs, with a JSON
// manifest alongside (architecture, config hash, summary fields).
//
// Binary layout (little-endian):
//   "TCCKPT01"  u32 version
//   u64 n_tensors, then per tensor: u64 name_len, name, u64 rows, u64 cols, rows*cols f64 (column-major)
//   u64 n_blobs,   then per blob:   u64 name_len, name, u64 len, bytes

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "twinccd/discrepancy.hpp"
#include "twinccd/nn.hpp"

namespace twinccd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, Eigen::MatrixXd> tensors;
  std::map<std::string, std::string> blobs;

  const Eigen::MatrixXd& tensor(const std::string& name) const;
  const std::string& blob(const std::string& name) const;

  void write(const std::filesystem::path& path) const;
  // Throws std::invalid_argument naming the path when it is missing or malformed.
  static Checkpoint read(const std::filesystem::path& path);
};

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint);
void write_manifest(const std::filesystem::path& checkpoint, const nlohmann::json& manifest);
nlohmann::json read_manifest(const std::filesystem::path& checkpoint);

// Agent state: networks, design, scales, optional optimizer moments and RNG.
Checkpoint agent_checkpoint(const Agent& agent, const Adam* net_opt = nullptr, const Adam* design_opt = nullptr,
                            const Rng* rng = nullptr);
Agent agent_from_checkpoint(const Checkpoint& ck, const AgentConfig& cfg, const DesignBounds& bounds);
void restore_optimizer(const Checkpoint& ck, const std::string& prefix, Adam& opt);

Checkpoint quantile_checkpoint(const QuantileModel& model);
QuantileModel quantile_from_checkpoint(const Checkpoint& ck, const QuantileModelConfig& cfg);

// Saves ck and a manifest carrying `kind`, the config hash and `extra`.
// When `expected_hash` is nonempty on load, a mismatch throws.
void save_artifact(const std::filesystem::path& path, const Checkpoint& ck, const std::string& kind,
                   const std::string& config_hash, const nlohmann::json& extra = nlohmann::json::object());
Checkpoint load_artifact(const std::filesystem::path& path, const std::string& kind,
                         const std::string& expected_hash = {});

}  // namespace twinccd
