#include "fanav/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "fanav/error.hpp"
#include "fanav/rng.hpp"

namespace fanav {

namespace {

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string RunManifest::json() const {
  nlohmann::ordered_json j;
  j["command_line"] = command_line;
  j["config_digest"] = hex(config_digest);
  j["version"] = version;
  j["seed"] = seed;
  auto in = nlohmann::ordered_json::array();
  for (const auto& [path, d] : inputs) in.push_back({{"path", path}, {"digest", hex(d)}});
  j["inputs"] = in;
  j["outputs"] = outputs;
  j["started"] = started;
  j["finished"] = finished;
  return j.dump(2) + "\n";
}

std::uint64_t file_digest(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  const std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return fnv1a(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(buf.data()),
                                              buf.size()));
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const std::filesystem::path& dir, const RunManifest& m) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto path = dir / "manifest.json";
  const auto tmp = dir / "manifest.json.tmp";
  {
    std::ofstream o(tmp, std::ios::trunc);
    if (!o) throw IoError("cannot write " + tmp.string());
    o << m.json();
    if (!o) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move manifest into place at " + path.string());
}

}  // namespace fanav
