#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "provp/grid.hpp"
#include "provp/trainer.hpp"

namespace provp {

/// A complete run description: data, encoder, bank, optimizer, prompts and
/// grid axes.
///
/// Text form is one `key = value` per line, `#` starts a comment. Lists are
/// comma separated. See `config_keys()` for the schema.
struct RunConfig {
  ExperimentSetup setup;
  TrainConfig train;
  GridAxes grid;
  std::size_t threads = 1;

  void validate() const;
};

struct ConfigKey {
  std::string_view name;
  std::string_view description;
};

const std::vector<ConfigKey>& config_keys();

/// Environment variable consulted for `key`: PROVP_ + upper-cased key with
/// dots replaced by underscores (grid.alphas -> PROVP_GRID_ALPHAS).
std::string env_name(std::string_view key);

/// Throws ConfigError for an unknown key or an unparsable value.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);

RunConfig parse_config(std::string_view text);

/// "default" (or an empty name) selects the built-in defaults; anything else
/// is a path to a config file.
RunConfig load_config(const std::string& name_or_path);

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Applies PROVP_* overrides for every known key.
void apply_env_overrides(RunConfig& config, const EnvLookup& lookup);
void apply_env_overrides(RunConfig& config);

/// Canonical text for `config`; parse_config(to_text(c)) reproduces it.
std::string to_text(const RunConfig& config);

}  // namespace provp
