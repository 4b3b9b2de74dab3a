#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hast/orchestrator.hpp"

namespace hast {

/// JSON form of a config. Keys mirror the ExperimentConfig field names;
/// config_from_json(config_to_json(c)) reproduces c exactly.
nlohmann::json config_to_json(const ExperimentConfig& config);
std::string config_to_json_string(const ExperimentConfig& config);

/// Strict: unknown keys and wrong types raise ConfigError naming the key.
/// Missing keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& doc);

/// Exit-code-2 class failures (missing file, parse error) raise ConfigError.
nlohmann::json load_config_json(const std::filesystem::path& path);

/// `key=value` with a dotted key (`protocol.tau=0.2`). Bare keys that are
/// not top-level fields are looked up under `protocol`. Values parse as
/// JSON when possible and fall back to a string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

struct PresetInfo {
  std::string name;
  std::string description;
};

const std::vector<PresetInfo>& preset_catalog();

/// Fully resolved config for a preset; everything random is drawn from `seed`.
ExperimentConfig make_preset(const std::string& name, std::uint64_t seed);

struct ConfigRequest {
  std::optional<std::string> preset;
  std::optional<std::filesystem::path> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> protocol;
  std::optional<std::string> output_dir;
  std::vector<std::string> overrides;
};

/// Preset or file, then flag overrides, then validation.
ExperimentConfig resolve_config(const ConfigRequest& request);

}  // namespace hast
