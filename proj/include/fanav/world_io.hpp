#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "fanav/sim.hpp"

namespace fanav {

/// Parses the world text format:
///
///     # comment
///     name senv1
///     bounds 10 10
///     rect x y w h
///     circle x y r
///
/// Errors carry the offending line number.
World parse_world(const std::string& text, const std::string& default_name = "world");
World load_world(const std::filesystem::path& path);

std::string format_world(const World& world);
void save_world(const std::filesystem::path& path, const World& world);

struct WorldGenConfig {
  std::string name = "world";
  double width = 10.0;
  double height = 10.0;
  double density = 0.1;  // target obstacle area / room area
  std::uint64_t seed = 0;
  double robot_radius = 0.2;
  double inflation = 0.2;  // planner clearance used for the connectivity probe
  int probe_pairs = 20;
  int max_attempts = 100;
};

/// Seeded procedural clutter. Every attempt is accepted only if the planner
/// connects `probe_pairs` random free-point pairs; after `max_attempts`
/// failures a ConfigError is raised.
World generate_world(const WorldGenConfig& cfg);

}  // namespace fanav
