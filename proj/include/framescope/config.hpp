#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "framescope/tuner.hpp"

namespace framescope {

// key = value per line, '#' comments. Keys are case-sensitive.
std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path);

// Applies recognized keys onto a TrainConfig; unknown keys raise ConfigError
// so typos do not silently train with defaults.
void apply_train_config(const std::map<std::string, std::string>& kv, TrainConfig& config);

}  // namespace framescope
