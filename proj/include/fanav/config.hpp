#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fanav/expert.hpp"
#include "fanav/offrl.hpp"
#include "fanav/sim.hpp"

namespace fanav {

struct DataConfig {
  std::vector<std::string> worlds;  // collection worlds; empty = the evaluation worlds
  int transitions = 20000;
  double col_ratio = 0.1;
};

struct EvalSettings {
  int tasks = 50;
  int trials = 3;
  double jitter_pos = 0.1;
  double jitter_heading = 0.1;
  int threads = 0;
};

/// Every tunable of the pipeline. Relative paths are resolved against the
/// directory of the config file they came from.
struct RunConfig {
  std::uint64_t seed = 0;
  int n_seeds = 3;
  std::vector<std::string> worlds = {"worlds/senv1.world", "worlds/senv2.world",
                                     "worlds/senv3.world"};
  std::vector<std::string> methods = {"bc", "iql_so", "iql_dm", "iql_ca"};
  RobotSpec robot;
  EpisodeConfig episode;
  ExpertConfig expert;
  DataConfig data;
  TrainerConfig train;
  EvalSettings eval;
  std::filesystem::path base_dir = ".";

  void validate() const;
  std::filesystem::path resolve(const std::string& p) const;
  /// TOML-style dump of every key, parseable by parse_config.
  std::string echo() const;
  std::uint64_t digest() const;
};

struct ConfigKey {
  std::string name;  // "section.key" or bare top-level key
  std::string type;  // float | int | uint | string | int-list | string-list
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;  // value in config syntax
};

const std::vector<ConfigKey>& config_keys();

/// Applies `text` on top of `base`. Throws ConfigError naming the line on
/// syntax errors, unknown keys and bad values.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);

/// `key=value` override, as passed to `--set`.
void apply_override(RunConfig& cfg, const std::string& assignment);
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_key(const RunConfig& cfg, const std::string& key);

/// Seed precedence: explicit flag, then FANAV_SEED, then the config value.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_value);

}  // namespace fanav
