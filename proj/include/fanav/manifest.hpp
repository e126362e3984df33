#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace fanav {

inline constexpr const char* kVersion = "0.1.0";

struct RunManifest {
  std::vector<std::string> command_line;
  std::uint64_t config_digest = 0;
  std::string version = kVersion;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::uint64_t>> inputs;  // path, content digest
  std::vector<std::string> outputs;
  std::string started;
  std::string finished;

  std::string json() const;
};

std::uint64_t file_digest(const std::filesystem::path& path);
std::string utc_timestamp();

/// Writes `dir/manifest.json` via a temporary file and rename.
void write_manifest(const std::filesystem::path& dir, const RunManifest& m);

}  // namespace fanav
