#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "telme/dataset.hpp"
#include "telme/training.hpp"

namespace telme {

struct PathsConfig {
  std::string data_file = "data.jsonl";   // relative paths resolve against out_dir
  std::string checkpoint_dir = "checkpoints";
  std::string out_dir = "run";
};

/// Everything a command needs. The generator seed is derived from `seed`
/// (tag "data") unless the config pins data.seed explicitly.
struct RunConfig {
  std::uint64_t seed = 1;
  GeneratorConfig data;
  bool data_seed_pinned = false;
  TrainConfig train;
  PathsConfig paths;

  void validate() const;

  GeneratorConfig generator() const;
  TrainConfig training() const;

  std::filesystem::path out_dir() const { return paths.out_dir; }
  std::filesystem::path data_path() const;
  std::filesystem::path checkpoint_dir() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Strict: unknown keys and wrong types raise Parse errors naming the key path.
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& c, const std::filesystem::path& path);

/// Applies "a.b.c=value" overrides. The value is parsed as JSON when possible
/// and as a bare string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);
RunConfig with_overrides(const RunConfig& c, const std::vector<std::string>& assignments);

/// FNV-1a over the canonical serialization, excluding paths. Printed as 16
/// hex digits.
std::string config_hash(const RunConfig& c);

inline constexpr const char* kConfigEnvVar = "TELME_CONFIG";

}  // namespace telme
