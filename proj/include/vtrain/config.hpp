#pragma once

// JSON run configuration shared by trainer and auditor.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "vtrain/protocol.hpp"

namespace vtrain {

/// Throws FormatError for missing or mistyped keys, DomainError for values
/// that fail TrainConfig::validate().
TrainConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const TrainConfig& cfg);

/// Throws IoError when the file cannot be read.
TrainConfig load_config(const std::filesystem::path& path);
void save_config(const TrainConfig& cfg, const std::filesystem::path& path);

}  // namespace vtrain
