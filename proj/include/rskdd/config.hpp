#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "rskdd/settings.hpp"

namespace rskdd {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
/// Keys absent from j keep their defaults; unknown keys raise ConfigError.
void from_json(const nlohmann::json& j, RunConfig& c);

/// Reads a JSON config file. Throws ConfigError on unreadable or invalid input.
RunConfig load_run_config(const std::filesystem::path& path);
/// Applies "a.b.c=value" style overrides (value parsed as JSON, else string).
void apply_override(RunConfig& config, const std::string& assignment);
std::string dump_config(const RunConfig& config);

}  // namespace rskdd
