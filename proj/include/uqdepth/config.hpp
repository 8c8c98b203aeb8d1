#pragma once

// Flat `key = value` run configuration with `#` comments. Later assignments
// override earlier ones, so command-line overrides are applied by appending
// them after the file's entries.

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "uqdepth/metrics.hpp"
#include "uqdepth/trainer.hpp"

namespace uqd {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

struct RunConfig {
  TrainConfig train;
  std::string model_name = "desk";
  Log10Mode log10_mode = Log10Mode::Mae;
  Aggregation aggregation = Aggregation::Micro;
};

// `origin` prefixes error messages (file name or "--set").
KeyValues parse_key_values(std::string_view text, std::string_view origin = "config");
KeyValues read_key_values(const std::filesystem::path& path);

// Splits "key=value"; throws ConfigError when there is no '='.
std::pair<std::string, std::string> split_assignment(std::string_view text);

// Throws ConfigError on an unknown key or an unparsable value.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);
RunConfig make_run_config(const KeyValues& entries);

// Every key, one per line, in a form make_run_config parses back exactly.
std::string config_snapshot(const RunConfig& config);

std::vector<std::string> config_keys();

}  // namespace uqd
