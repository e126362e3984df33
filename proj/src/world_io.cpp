#include "fanav/world_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "fanav/error.hpp"
#include "fanav/expert.hpp"
#include "fanav/rng.hpp"

namespace fanav {

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

}  // namespace

World parse_world(const std::string& text, const std::string& default_name) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::string name = default_name;
  double w = 0.0;
  double h = 0.0;
  bool have_bounds = false;
  std::vector<Shape> shapes;
  auto fail = [&](const std::string& msg) -> ConfigError {
    return ConfigError("world line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    std::vector<double> vals;
    std::string tok;
    std::vector<std::string> words;
    while (ls >> tok) words.push_back(tok);
    if (kind == "name") {
      if (words.size() != 1) throw fail("expected 'name <identifier>'");
      name = words[0];
      continue;
    }
    for (const auto& wd : words) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(wd, &used);
      } catch (const std::exception&) {
        throw fail("'" + wd + "' is not a number");
      }
      if (used != wd.size() || !std::isfinite(v)) throw fail("'" + wd + "' is not a number");
      vals.push_back(v);
    }
    if (kind == "bounds") {
      if (vals.size() != 2) throw fail("expected 'bounds w h'");
      if (have_bounds) throw fail("duplicate bounds");
      if (!(vals[0] > 0 && vals[1] > 0)) throw fail("bounds must be positive");
      w = vals[0];
      h = vals[1];
      have_bounds = true;
    } else if (kind == "rect") {
      if (vals.size() != 4) throw fail("expected 'rect x y w h'");
      if (!(vals[2] > 0 && vals[3] > 0)) throw fail("rect extent must be positive");
      shapes.emplace_back(RectShape{vals[0], vals[1], vals[2], vals[3]});
    } else if (kind == "circle") {
      if (vals.size() != 3) throw fail("expected 'circle x y r'");
      if (!(vals[2] > 0)) throw fail("circle radius must be positive");
      shapes.emplace_back(CircleShape{vals[0], vals[1], vals[2]});
    } else {
      throw fail("unknown directive '" + kind + "'");
    }
  }
  if (!have_bounds) throw ConfigError("world file has no 'bounds' line");
  return World(name, w, h, std::move(shapes));
}

World load_world(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open world file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_world(ss.str(), path.stem().string());
}

std::string format_world(const World& world) {
  std::ostringstream out;
  out << "name " << world.name() << "\n";
  out << "bounds " << num(world.width()) << " " << num(world.height()) << "\n";
  for (const auto& s : world.obstacles()) {
    if (const auto* r = std::get_if<RectShape>(&s)) {
      out << "rect " << num(r->x) << " " << num(r->y) << " " << num(r->w) << " " << num(r->h)
          << "\n";
    } else {
      const auto& c = std::get<CircleShape>(s);
      out << "circle " << num(c.cx) << " " << num(c.cy) << " " << num(c.r) << "\n";
    }
  }
  return out.str();
}

void save_world(const std::filesystem::path& path, const World& world) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write world file " + path.string());
  out << format_world(world);
  if (!out) throw IoError("write failed: " + path.string());
}

World generate_world(const WorldGenConfig& cfg) {
  if (!(cfg.density >= 0.0 && cfg.density <= 1.0)) {
    throw ConfigError("world density must lie in [0, 1]");
  }
  if (!(cfg.width > 0 && cfg.height > 0)) throw ConfigError("world size must be positive");
  if (cfg.density == 0.0) return World(cfg.name, round3(cfg.width), round3(cfg.height));

  const double area = cfg.width * cfg.height;
  const double clear = cfg.robot_radius + cfg.inflation;
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    std::mt19937_64 rng(derive_seed(cfg.seed, tag("world"), static_cast<std::uint64_t>(attempt)));
    std::uniform_real_distribution<double> ux(0.0, cfg.width);
    std::uniform_real_distribution<double> uy(0.0, cfg.height);
    std::uniform_real_distribution<double> uside(0.3, 1.2);
    std::uniform_real_distribution<double> urad(0.15, 0.5);
    std::bernoulli_distribution is_rect(0.6);
    std::vector<Shape> shapes;
    double covered = 0.0;
    while (covered < cfg.density * area) {
      if (is_rect(rng)) {
        const double w = round3(uside(rng));
        const double h = round3(uside(rng));
        const double x = round3(ux(rng) - 0.5 * w);
        const double y = round3(uy(rng) - 0.5 * h);
        shapes.emplace_back(RectShape{x, y, w, h});
        covered += w * h;
      } else {
        const double r = round3(urad(rng));
        shapes.emplace_back(CircleShape{round3(ux(rng)), round3(uy(rng)), r});
        covered += kPi * r * r;
      }
    }
    World world(cfg.name, round3(cfg.width), round3(cfg.height), std::move(shapes));

    // Connectivity probe between random free points.
    std::uniform_real_distribution<double> px(clear, cfg.width - clear);
    std::uniform_real_distribution<double> py(clear, cfg.height - clear);
    auto free_point = [&]() -> std::optional<Point> {
      for (int k = 0; k < 1000; ++k) {
        const Point p{px(rng), py(rng)};
        if (world.clearance(p) >= clear) return p;
      }
      return std::nullopt;
    };
    bool connected = true;
    for (int k = 0; k < cfg.probe_pairs && connected; ++k) {
      const auto a = free_point();
      const auto b = free_point();
      if (!a || !b) {
        connected = false;
        break;
      }
      try {
        plan_path(world, *a, *b, cfg.robot_radius, cfg.inflation);
      } catch (const NoPathError&) {
        connected = false;
      }
    }
    if (connected) return world;
  }
  throw ConfigError("world generation failed: free space not connected after " +
                    std::to_string(cfg.max_attempts) + " attempts (density " +
                    std::to_string(cfg.density) + ")");
}

}  // namespace fanav
