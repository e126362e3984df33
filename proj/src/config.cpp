#include "fanav/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "fanav/error.hpp"
#include "fanav/rng.hpp"

namespace fanav {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, r.ptr);
  // keep floats recognisable as such in the echo
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

double to_double(const std::string& raw) {
  const std::string s = trim(raw);
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty()) {
    throw ConfigError("expected a number, got '" + s + "'");
  }
  return v;
}

long long to_int(const std::string& raw) {
  const std::string s = trim(raw);
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty()) {
    throw ConfigError("expected an integer, got '" + s + "'");
  }
  return v;
}

std::uint64_t to_uint(const std::string& raw) {
  const std::string s = trim(raw);
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty()) {
    throw ConfigError("expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

std::string to_str(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  if (s.empty() || s.find_first_of("\"[], ") != std::string::npos) {
    throw ConfigError("expected a string, got '" + s + "'");
  }
  return s;
}

std::vector<std::string> to_list(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.size() < 2 || s.front() != '[' || s.back() != ']') {
    throw ConfigError("expected a list [a, b, ...], got '" + s + "'");
  }
  std::vector<std::string> out;
  const std::string body = trim(s.substr(1, s.size() - 2));
  if (body.empty()) return out;
  std::string item;
  std::istringstream in(body);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

template <typename T>
ConfigKey float_key(std::string name, T RunConfig::*sec, double T::*field) {
  return {std::move(name), "float",
          [=](const RunConfig& c) { return fmt_double(c.*sec.*field); },
          [=](RunConfig& c, const std::string& v) { c.*sec.*field = to_double(v); }};
}

template <typename T>
ConfigKey int_key(std::string name, T RunConfig::*sec, int T::*field) {
  return {std::move(name), "int",
          [=](const RunConfig& c) { return std::to_string(c.*sec.*field); },
          [=](RunConfig& c, const std::string& v) { c.*sec.*field = static_cast<int>(to_int(v)); }};
}

template <typename T>
ConfigKey uint_key(std::string name, T RunConfig::*sec, std::uint64_t T::*field) {
  return {std::move(name), "uint",
          [=](const RunConfig& c) { return std::to_string(c.*sec.*field); },
          [=](RunConfig& c, const std::string& v) { c.*sec.*field = to_uint(v); }};
}

template <typename T>
ConfigKey string_key(std::string name, T RunConfig::*sec, std::string T::*field) {
  return {std::move(name), "string",
          [=](const RunConfig& c) { return quote(c.*sec.*field); },
          [=](RunConfig& c, const std::string& v) { c.*sec.*field = to_str(v); }};
}

std::string join_quoted(const std::vector<std::string>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + quote(v[i]);
  return s + "]";
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;
  k.push_back({"seed", "uint", [](const RunConfig& c) { return std::to_string(c.seed); },
               [](RunConfig& c, const std::string& v) { c.seed = to_uint(v); }});
  k.push_back({"n_seeds", "int", [](const RunConfig& c) { return std::to_string(c.n_seeds); },
               [](RunConfig& c, const std::string& v) { c.n_seeds = static_cast<int>(to_int(v)); }});
  k.push_back({"worlds", "string-list", [](const RunConfig& c) { return join_quoted(c.worlds); },
               [](RunConfig& c, const std::string& v) {
                 c.worlds.clear();
                 for (const auto& s : to_list(v)) c.worlds.push_back(to_str(s));
               }});
  k.push_back({"methods", "string-list", [](const RunConfig& c) { return join_quoted(c.methods); },
               [](RunConfig& c, const std::string& v) {
                 c.methods.clear();
                 for (const auto& s : to_list(v)) {
                   c.methods.push_back(to_str(s));
                   parse_method(c.methods.back());
                 }
               }});

  using R = RobotSpec;
  k.push_back(float_key("robot.radius", &RunConfig::robot, &R::radius));
  k.push_back(float_key("robot.v_max", &RunConfig::robot, &R::v_max));
  k.push_back(float_key("robot.omega_max", &RunConfig::robot, &R::omega_max));
  k.push_back(float_key("robot.lidar_fov", &RunConfig::robot, &R::lidar_fov));
  k.push_back(int_key("robot.lidar_beam_count", &RunConfig::robot, &R::lidar_beam_count));
  k.push_back(float_key("robot.lidar_range_max", &RunConfig::robot, &R::lidar_range_max));
  k.push_back(float_key("robot.control_dt", &RunConfig::robot, &R::control_dt));

  using E = EpisodeConfig;
  k.push_back(float_key("episode.gamma", &RunConfig::episode, &E::gamma));
  k.push_back(int_key("episode.t_max", &RunConfig::episode, &E::t_max));
  k.push_back(float_key("episode.r_success", &RunConfig::episode, &E::r_success));
  k.push_back(float_key("episode.r_collision", &RunConfig::episode, &E::r_collision));
  k.push_back(float_key("episode.c1", &RunConfig::episode, &E::c1));
  k.push_back(float_key("episode.goal_radius", &RunConfig::episode, &E::goal_radius));

  using X = ExpertConfig;
  k.push_back(float_key("expert.lookahead", &RunConfig::expert, &X::lookahead));
  k.push_back(float_key("expert.gain_heading", &RunConfig::expert, &X::gain_heading));
  k.push_back(float_key("expert.speed_scale", &RunConfig::expert, &X::speed_scale));
  k.push_back(float_key("expert.noise_std_v", &RunConfig::expert, &X::noise_std_v));
  k.push_back(float_key("expert.noise_std_omega", &RunConfig::expert, &X::noise_std_omega));
  k.push_back(float_key("expert.noise_prob", &RunConfig::expert, &X::noise_prob));
  k.push_back(float_key("expert.noise_corr", &RunConfig::expert, &X::noise_corr));
  k.push_back(float_key("expert.inflation", &RunConfig::expert, &X::inflation));
  k.push_back(uint_key("expert.seed", &RunConfig::expert, &X::seed));

  k.push_back({"data.worlds", "string-list",
               [](const RunConfig& c) { return join_quoted(c.data.worlds); },
               [](RunConfig& c, const std::string& v) {
                 c.data.worlds.clear();
                 for (const auto& s : to_list(v)) c.data.worlds.push_back(to_str(s));
               }});
  k.push_back(int_key("data.transitions", &RunConfig::data, &DataConfig::transitions));
  k.push_back(float_key("data.col_ratio", &RunConfig::data, &DataConfig::col_ratio));

  using T = TrainerConfig;
  k.push_back({"train.method", "string",
               [](const RunConfig& c) { return quote(to_string(c.train.method)); },
               [](RunConfig& c, const std::string& v) { c.train.method = parse_method(to_str(v)); }});
  k.push_back(float_key("train.tau", &RunConfig::train, &T::tau));
  k.push_back(float_key("train.gamma", &RunConfig::train, &T::gamma));
  k.push_back(float_key("train.beta", &RunConfig::train, &T::beta));
  k.push_back(float_key("train.w_max", &RunConfig::train, &T::w_max));
  k.push_back(float_key("train.rho", &RunConfig::train, &T::rho));
  k.push_back(int_key("train.batch_size", &RunConfig::train, &T::batch_size));
  k.push_back(float_key("train.lr_v", &RunConfig::train, &T::lr_v));
  k.push_back(float_key("train.lr_q", &RunConfig::train, &T::lr_q));
  k.push_back(float_key("train.lr_pi", &RunConfig::train, &T::lr_pi));
  k.push_back(float_key("train.alpha", &RunConfig::train, &T::alpha));
  k.push_back(int_key("train.total_steps", &RunConfig::train, &T::total_steps));
  k.push_back(int_key("train.log_every", &RunConfig::train, &T::log_every));
  k.push_back(int_key("train.checkpoint_every", &RunConfig::train, &T::checkpoint_every));
  k.push_back(uint_key("train.seed", &RunConfig::train, &T::seed));
  k.push_back({"train.hidden", "int-list",
               [](const RunConfig& c) {
                 std::string s = "[";
                 for (std::size_t i = 0; i < c.train.hidden.size(); ++i) {
                   s += (i ? ", " : "") + std::to_string(c.train.hidden[i]);
                 }
                 return s + "]";
               },
               [](RunConfig& c, const std::string& v) {
                 c.train.hidden.clear();
                 for (const auto& s : to_list(v)) c.train.hidden.push_back(static_cast<int>(to_int(s)));
               }});
  k.push_back({"train.activation", "string",
               [](const RunConfig& c) { return quote(to_string(c.train.activation)); },
               [](RunConfig& c, const std::string& v) {
                 c.train.activation = parse_activation(to_str(v));
               }});
  k.push_back(int_key("train.n_critics", &RunConfig::train, &T::n_critics));
  k.push_back(float_key("train.policy_init_scale", &RunConfig::train, &T::policy_init_scale));
  k.push_back(float_key("train.log_std_min", &RunConfig::train, &T::log_std_min));
  k.push_back(float_key("train.log_std_max", &RunConfig::train, &T::log_std_max));

  k.push_back(int_key("eval.tasks", &RunConfig::eval, &EvalSettings::tasks));
  k.push_back(int_key("eval.trials", &RunConfig::eval, &EvalSettings::trials));
  k.push_back(float_key("eval.jitter_pos", &RunConfig::eval, &EvalSettings::jitter_pos));
  k.push_back(float_key("eval.jitter_heading", &RunConfig::eval, &EvalSettings::jitter_heading));
  k.push_back(int_key("eval.threads", &RunConfig::eval, &EvalSettings::threads));
  return k;
}

const ConfigKey& find_key(const std::string& name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return k;
  }
  throw ConfigError("unknown config key '" + name + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

void RunConfig::validate() const {
  robot.validate();
  episode.validate();
  expert.validate();
  train.validate();
  if (n_seeds < 1) throw ConfigError("n_seeds must be >= 1");
  if (worlds.empty()) throw ConfigError("at least one evaluation world is required");
  if (methods.empty()) throw ConfigError("at least one method is required");
  if (data.transitions < 1) throw ConfigError("data.transitions must be >= 1");
  if (!(data.col_ratio >= 0.0 && data.col_ratio < 1.0)) {
    throw ConfigError("data.col_ratio must lie in [0, 1)");
  }
  if (eval.tasks < 1) throw ConfigError("eval.tasks must be >= 1");
  if (eval.trials < 1) throw ConfigError("eval.trials must be >= 1");
  if (eval.jitter_pos < 0.0 || eval.jitter_heading < 0.0) {
    throw ConfigError("eval jitter must be >= 0");
  }
}

std::filesystem::path RunConfig::resolve(const std::string& p) const {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

std::string RunConfig::echo() const {
  std::string out;
  std::string section;
  for (const auto& k : config_keys()) {
    const auto dot = k.name.find('.');
    const std::string sec = dot == std::string::npos ? "" : k.name.substr(0, dot);
    const std::string key = dot == std::string::npos ? k.name : k.name.substr(dot + 1);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += key + " = " + k.get(*this) + "\n";
  }
  return out;
}

std::uint64_t RunConfig::digest() const { return fnv1a(echo()); }

RunConfig parse_config(const std::string& text, RunConfig cfg) {
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, line)) {
    ++lineno;
    // strip comments outside quotes
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.erase(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string full = section.empty() ? key : section + "." + key;
    if (const auto [it, fresh] = seen.emplace(full, lineno); !fresh) {
      throw ConfigError(where + "duplicate key '" + full + "' (first set on line " +
                        std::to_string(it->second) + ")");
    }
    const ConfigKey* k = nullptr;
    for (const auto& c : config_keys()) {
      if (c.name == full) k = &c;
    }
    if (!k) throw ConfigError(where + "unknown key '" + full + "'");
    try {
      k->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + full + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig base;
  base.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return parse_config(ss.str(), base);
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& k = find_key(key);
  try {
    k.set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string get_key(const RunConfig& cfg, const std::string& key) { return find_key(key).get(cfg); }

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  set_key(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_value) {
  if (flag) return *flag;
  if (const char* env = std::getenv("FANAV_SEED"); env && *env) {
    try {
      return to_uint(env);
    } catch (const ConfigError&) {
      throw ConfigError(std::string("FANAV_SEED is not a non-negative integer: '") + env + "'");
    }
  }
  return config_value;
}

}  // namespace fanav
