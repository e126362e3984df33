#include "fanav/eval.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <map>
#include <mutex>
#include <algorithm>
#include <random>
#include <sstream>
#include <thread>

#include "fanav/error.hpp"
#include "fanav/offrl.hpp"
#include "fanav/rng.hpp"

namespace fanav {

namespace {

double round4(double v) { return std::round(v * 1e4) / 1e4; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  unsigned hw = threads > 0 ? static_cast<unsigned>(threads) : std::thread::hardware_concurrency();
  hw = std::max(1u, std::min<unsigned>(hw, static_cast<unsigned>(n)));
  if (hw <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < hw; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lk(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace

// ---------------------------------------------------------------------------
// Suites

std::uint64_t TaskSuite::digest() const { return fnv1a(format_suite(*this)); }

TaskSuite make_suite(const World& world, const RobotSpec& spec, const EpisodeConfig& episode,
                     int n_tasks, double inflation, std::uint64_t seed) {
  if (n_tasks < 1) throw ConfigError("a suite needs at least one task");
  TaskSuite suite;
  suite.world_name = world.name();
  suite.episode = episode;
  suite.margin = inflation;
  for (int k = 0; k < n_tasks; ++k) {
    std::mt19937_64 rng(derive_seed(seed, tag("suite"), static_cast<std::uint64_t>(k)));
    for (;;) {
      Task t = sample_task(world, spec, inflation, rng);
      t.start = {round4(t.start.x), round4(t.start.y), round4(t.start.heading)};
      t.goal = {round4(t.goal.x), round4(t.goal.y)};
      // rounding may nudge a point into the clearance margin
      if (world.clearance(t.start.position()) >= spec.radius + inflation &&
          world.clearance(t.goal) >= spec.radius + inflation) {
        suite.tasks.push_back(t);
        break;
      }
    }
  }
  return suite;
}

std::string format_suite(const TaskSuite& s) {
  std::ostringstream o;
  o << "world " << s.world_name << "\n";
  const auto& e = s.episode;
  o << "episode " << fmt("%.6g", e.gamma) << " " << e.t_max << " " << fmt("%.6g", e.r_success) << " "
    << fmt("%.6g", e.r_collision) << " " << fmt("%.6g", e.c1) << " " << fmt("%.6g", e.goal_radius)
    << "\n";
  if (s.margin > 0.0) o << "margin " << fmt("%.4f", s.margin) << "\n";
  for (const auto& t : s.tasks) {
    o << "task " << fmt("%.4f", t.start.x) << " " << fmt("%.4f", t.start.y) << " "
      << fmt("%.4f", t.start.heading) << " " << fmt("%.4f", t.goal.x) << " "
      << fmt("%.4f", t.goal.y) << "\n";
  }
  return o.str();
}

TaskSuite parse_suite(const std::string& text) {
  TaskSuite s;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    auto fail = [&](const std::string& m) {
      return ConfigError("suite line " + std::to_string(lineno) + ": " + m);
    };
    if (kind == "world") {
      if (!(ls >> s.world_name)) throw fail("expected 'world <name>'");
    } else if (kind == "episode") {
      auto& e = s.episode;
      if (!(ls >> e.gamma >> e.t_max >> e.r_success >> e.r_collision >> e.c1 >> e.goal_radius)) {
        throw fail("expected 'episode gamma t_max r_success r_collision c1 goal_radius'");
      }
      e.validate();
    } else if (kind == "margin") {
      if (!(ls >> s.margin) || s.margin < 0.0) throw fail("expected 'margin <metres>'");
    } else if (kind == "task") {
      Task t;
      if (!(ls >> t.start.x >> t.start.y >> t.start.heading >> t.goal.x >> t.goal.y)) {
        throw fail("expected 'task sx sy sh gx gy'");
      }
      s.tasks.push_back(t);
    } else {
      throw fail("unknown directive '" + kind + "'");
    }
    std::string extra;
    if (ls >> extra) throw fail("unexpected trailing token '" + extra + "'");
  }
  return s;
}

void save_suite(const std::filesystem::path& path, const TaskSuite& suite) {
  std::ofstream o(path, std::ios::trunc);
  if (!o) throw IoError("cannot write suite " + path.string());
  o << format_suite(suite);
}

TaskSuite load_suite(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open suite " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_suite(ss.str());
}

// ---------------------------------------------------------------------------
// Controllers

PolicyController::PolicyController(std::shared_ptr<const GaussianPolicy<Real>> policy,
                                   StateEncoder encoder)
    : policy_(std::move(policy)), encoder_(encoder), x_(encoder.feature_dim(), 1) {
  if (policy_->layout.input_width() != encoder_.feature_dim()) {
    throw ShapeError("policy input width " + std::to_string(policy_->layout.input_width()) +
                     " does not match encoder width " + std::to_string(encoder_.feature_dim()));
  }
}

Action PolicyController::act(const NavState& state, const Pose&) {
  std::vector<float> f(static_cast<std::size_t>(encoder_.feature_dim()));
  encoder_.encode_into(state, f.data());
  for (int i = 0; i < encoder_.feature_dim(); ++i) x_(i, 0) = static_cast<Real>(f[static_cast<std::size_t>(i)]);
  const Matrix<Real> a = policy_->deterministic(x_);
  return {policy_->scale[0] * static_cast<double>(a(0, 0)),
          policy_->scale[1] * static_cast<double>(a(1, 0))};
}

ControllerFactory policy_factory(const Checkpoint& ck, const RobotSpec& spec) {
  const int beams = std::stoi(ck.meta_at("beam_count"));
  if (beams != spec.lidar_beam_count) {
    throw ShapeError("checkpoint expects " + std::to_string(beams) + " beams, robot has " +
                     std::to_string(spec.lidar_beam_count));
  }
  auto policy = std::make_shared<const GaussianPolicy<Real>>(policy_from_checkpoint<Real>(ck));
  // Features are normalized with the training world's scales.
  const StateEncoder enc(beams, std::stod(ck.meta_at("range_max")), std::stod(ck.meta_at("d_norm")),
                         std::stod(ck.meta_at("v_max")), std::stod(ck.meta_at("omega_max")));
  return [policy, enc] { return std::make_unique<PolicyController>(policy, enc); };
}

ExpertController::ExpertController(std::shared_ptr<const World> world, RobotSpec spec,
                                   ExpertConfig cfg)
    : world_(std::move(world)), spec_(spec), cfg_(cfg) {}

void ExpertController::reset(const Pose& start, Point goal) {
  // A jittered start may sit inside the inflation margin; shrink it until the
  // planner accepts the endpoints.
  for (double infl = cfg_.inflation;; infl *= 0.5) {
    try {
      path_ = plan_path(*world_, start.position(), goal, spec_.radius, infl < 1e-3 ? 0.0 : infl);
      return;
    } catch (const InvalidPoseError&) {
      if (infl < 1e-3) throw;
    }
  }
}

Action ExpertController::act(const NavState&, const Pose& pose) {
  return expert_action(pose, path_, cfg_, spec_);
}

// ---------------------------------------------------------------------------
// Rollouts

Rollout rollout(Controller& controller, std::shared_ptr<const World> world, const RobotSpec& spec,
                const EpisodeConfig& cfg, const Task& task) {
  NavEnv env(std::move(world), spec, cfg);
  Rollout r;
  NavState s = env.reset(task.start, task.goal);
  controller.reset(env.pose(), task.goal);
  r.poses.push_back(env.pose());
  while (!env.done()) {
    const Action a = clamp_action(controller.act(s, env.pose()), spec);
    auto out = env.step(a);
    r.actions.push_back(a);
    r.poses.push_back(env.pose());
    s = std::move(out.next_state);
  }
  r.outcome = env.terminal();
  return r;
}

Metrics metrics_from_outcomes(const std::vector<Terminal>& outcomes) {
  if (outcomes.empty()) throw ConfigError("no outcomes to summarize");
  std::size_t ns = 0, nc = 0, nt = 0;
  for (auto o : outcomes) {
    if (o == Terminal::success) ++ns;
    else if (o == Terminal::collision) ++nc;
    else if (o == Terminal::timeout) ++nt;
    else throw ProtocolError("episode ended without a terminal outcome");
  }
  const double n = static_cast<double>(outcomes.size());
  return {100.0 * static_cast<double>(ns) / n, 100.0 * static_cast<double>(nc) / n,
          100.0 * static_cast<double>(nt) / n};
}

namespace {

void summarize(EvalResult& r) {
  const double n = static_cast<double>(r.trials.size());
  Metrics m, sd;
  for (const auto& t : r.trials) {
    m.sr += t.metrics.sr / n;
    m.cr += t.metrics.cr / n;
    m.tr += t.metrics.tr / n;
  }
  for (const auto& t : r.trials) {
    sd.sr += (t.metrics.sr - m.sr) * (t.metrics.sr - m.sr) / n;
    sd.cr += (t.metrics.cr - m.cr) * (t.metrics.cr - m.cr) / n;
    sd.tr += (t.metrics.tr - m.tr) * (t.metrics.tr - m.tr) / n;
  }
  r.mean = m;
  r.stdev = {std::sqrt(sd.sr), std::sqrt(sd.cr), std::sqrt(sd.tr)};
}

Task jitter(const Task& t, const World& world, const RobotSpec& spec, double margin,
            const EvalConfig& cfg, std::uint64_t trial, std::uint64_t index) {
  if (cfg.jitter_pos <= 0.0 && cfg.jitter_heading <= 0.0) return t;
  std::mt19937_64 rng(derive_seed(cfg.seed, tag("jitter") ^ trial, index));
  std::uniform_real_distribution<double> dp(-cfg.jitter_pos, cfg.jitter_pos);
  std::uniform_real_distribution<double> dh(-cfg.jitter_heading, cfg.jitter_heading);
  for (int k = 0; k < 100; ++k) {
    Task j = t;
    j.start.x += dp(rng);
    j.start.y += dp(rng);
    j.start.heading = normalize_angle(j.start.heading + dh(rng));
    if (world.inside(j.start.position()) && world.clearance(j.start.position()) >= spec.radius + margin) {
      return j;
    }
  }
  return t;
}

}  // namespace

EvalResult evaluate_suite(const ControllerFactory& factory, std::shared_ptr<const World> world,
                          const RobotSpec& spec, const TaskSuite& suite, const EvalConfig& cfg,
                          const std::string& method) {
  if (suite.tasks.empty()) throw ConfigError("evaluation suite is empty");
  if (cfg.n_trials < 1) throw ConfigError("n_trials must be >= 1");
  EvalResult res;
  res.method = method;
  res.world_name = suite.world_name;
  res.suite_digest = suite.digest();
  const std::size_t n = suite.tasks.size();
  for (int trial = 0; trial < cfg.n_trials; ++trial) {
    TrialResult tr;
    tr.tasks.resize(n);
    tr.rollouts.resize(n);
    parallel_for(n, cfg.threads, [&](std::size_t k) {
      tr.tasks[k] = jitter(suite.tasks[k], *world, spec, suite.margin, cfg, static_cast<std::uint64_t>(trial), k);
      auto ctl = factory();
      tr.rollouts[k] = rollout(*ctl, world, spec, suite.episode, tr.tasks[k]);
    });
    std::vector<Terminal> outcomes;
    for (const auto& r : tr.rollouts) outcomes.push_back(r.outcome);
    tr.metrics = metrics_from_outcomes(outcomes);
    res.trials.push_back(std::move(tr));
  }
  summarize(res);
  return res;
}

// ---------------------------------------------------------------------------
// Export

std::string render_svg(const EvalResult& result, const World& world, int trial) {
  if (trial < 0 || trial >= static_cast<int>(result.trials.size())) {
    throw ConfigError("render_svg: no such trial");
  }
  const double s = 60.0;  // pixels per metre
  const double W = world.width() * s;
  const double H = world.height() * s;
  auto X = [&](double x) { return fmt("%.2f", x * s); };
  auto Y = [&](double y) { return fmt("%.2f", H - y * s); };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt("%.0f", W) << "\" height=\""
    << fmt("%.0f", H) << "\" viewBox=\"0 0 " << fmt("%.0f", W) << " " << fmt("%.0f", H) << "\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"" << fmt("%.2f", W) << "\" height=\"" << fmt("%.2f", H)
    << "\" fill=\"white\" stroke=\"black\" stroke-width=\"4\"/>\n";
  for (const auto& sh : world.obstacles()) {
    if (const auto* r = std::get_if<RectShape>(&sh)) {
      o << "<rect class=\"obstacle\" x=\"" << X(r->x) << "\" y=\"" << Y(r->y + r->h) << "\" width=\""
        << fmt("%.2f", r->w * s) << "\" height=\"" << fmt("%.2f", r->h * s) << "\" fill=\"#777\"/>\n";
    } else {
      const auto& c = std::get<CircleShape>(sh);
      o << "<circle class=\"obstacle\" cx=\"" << X(c.cx) << "\" cy=\"" << Y(c.cy) << "\" r=\""
        << fmt("%.2f", c.r * s) << "\" fill=\"#777\"/>\n";
    }
  }
  const auto& tr = result.trials[static_cast<std::size_t>(trial)];
  for (std::size_t k = 0; k < tr.rollouts.size(); ++k) {
    const auto& ro = tr.rollouts[k];
    o << "<polyline fill=\"none\" stroke=\"#3060c0\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < ro.poses.size(); ++i) {
      o << (i ? " " : "") << X(ro.poses[i].x) << "," << Y(ro.poses[i].y);
    }
    o << "\"/>\n";
  }
  for (std::size_t k = 0; k < tr.rollouts.size(); ++k) {
    const auto& ro = tr.rollouts[k];
    const auto& task = tr.tasks[k];
    const Pose end = ro.poses.back();
    o << "<circle class=\"start\" cx=\"" << X(task.start.x) << "\" cy=\"" << Y(task.start.y)
      << "\" r=\"5\" fill=\"blue\"/>\n";
    o << "<circle class=\"goal\" cx=\"" << X(task.goal.x) << "\" cy=\"" << Y(task.goal.y)
      << "\" r=\"5\" fill=\"gold\"/>\n";
    const double ex = end.x * s;
    const double ey = H - end.y * s;
    switch (ro.outcome) {
      case Terminal::success:
        o << "<circle class=\"success\" cx=\"" << X(end.x) << "\" cy=\"" << Y(end.y)
          << "\" r=\"4\" fill=\"hotpink\"/>\n";
        break;
      case Terminal::collision:
        o << "<path class=\"crash\" d=\"M" << fmt("%.2f", ex - 6) << "," << fmt("%.2f", ey - 6)
          << " L" << fmt("%.2f", ex + 6) << "," << fmt("%.2f", ey + 6) << " M" << fmt("%.2f", ex - 6)
          << "," << fmt("%.2f", ey + 6) << " L" << fmt("%.2f", ex + 6) << "," << fmt("%.2f", ey - 6)
          << "\" stroke=\"red\" stroke-width=\"2.5\"/>\n";
        break;
      case Terminal::timeout:
        o << "<polygon class=\"timeout\" points=\"" << fmt("%.2f", ex) << "," << fmt("%.2f", ey - 7)
          << " " << fmt("%.2f", ex - 6) << "," << fmt("%.2f", ey + 5) << " " << fmt("%.2f", ex + 6)
          << "," << fmt("%.2f", ey + 5) << "\" fill=\"red\"/>\n";
        break;
      case Terminal::none:
        break;
    }
  }
  o << "</svg>\n";
  return o.str();
}

void export_trajectories(const EvalResult& result, const World& world,
                         const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (std::size_t j = 0; j < result.trials.size(); ++j) {
    const auto& tr = result.trials[j];
    for (std::size_t k = 0; k < tr.rollouts.size(); ++k) {
      char name[64];
      std::snprintf(name, sizeof name, "traj_t%zu_k%03zu.csv", j, k);
      std::ofstream o(dir / name, std::ios::trunc);
      if (!o) throw IoError("cannot write " + (dir / name).string());
      o << "t,x,y,heading,v,omega\n";
      const auto& ro = tr.rollouts[k];
      for (std::size_t i = 0; i < ro.poses.size(); ++i) {
        const Action a = i == 0 ? Action{} : ro.actions[i - 1];
        o << i << "," << fmt("%.6f", ro.poses[i].x) << "," << fmt("%.6f", ro.poses[i].y) << ","
          << fmt("%.6f", ro.poses[i].heading) << "," << fmt("%.6f", a.v_cmd) << ","
          << fmt("%.6f", a.omega_cmd) << "\n";
      }
      if (!o) throw IoError("write failed: " + (dir / name).string());
    }
  }
  if (!result.trials.empty()) {
    std::ofstream o(dir / "overlay.svg", std::ios::trunc);
    if (!o) throw IoError("cannot write overlay.svg in " + dir.string());
    o << render_svg(result, world, 0);
  }
}

// ---------------------------------------------------------------------------
// JSON

std::string result_to_json(const EvalResult& r) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["world"] = r.world_name;
  j["suite_digest"] = std::to_string(r.suite_digest);
  j["mean"] = {{"sr", r.mean.sr}, {"cr", r.mean.cr}, {"tr", r.mean.tr}};
  j["std"] = {{"sr", r.stdev.sr}, {"cr", r.stdev.cr}, {"tr", r.stdev.tr}};
  auto trials = nlohmann::ordered_json::array();
  for (const auto& t : r.trials) {
    nlohmann::ordered_json jt;
    jt["sr"] = t.metrics.sr;
    jt["cr"] = t.metrics.cr;
    jt["tr"] = t.metrics.tr;
    auto outs = nlohmann::ordered_json::array();
    for (const auto& ro : t.rollouts) outs.push_back(to_string(ro.outcome));
    jt["outcomes"] = outs;
    trials.push_back(jt);
  }
  j["trials"] = trials;
  return j.dump(2) + "\n";
}

EvalResult result_from_json(const std::string& text) {
  EvalResult r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.method = j.at("method").get<std::string>();
    r.world_name = j.at("world").get<std::string>();
    r.suite_digest = std::stoull(j.at("suite_digest").get<std::string>());
    for (const auto& jt : j.at("trials")) {
      TrialResult t;
      std::vector<Terminal> outs;
      for (const auto& o : jt.at("outcomes")) {
        const auto s = o.get<std::string>();
        Rollout ro;
        if (s == "success") ro.outcome = Terminal::success;
        else if (s == "collision") ro.outcome = Terminal::collision;
        else if (s == "timeout") ro.outcome = Terminal::timeout;
        else throw ConfigError("unknown outcome '" + s + "' in result file");
        outs.push_back(ro.outcome);
        t.rollouts.push_back(std::move(ro));
      }
      t.metrics = metrics_from_outcomes(outs);
      r.trials.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed result file: ") + e.what());
  }
  summarize(r);
  return r;
}

// ---------------------------------------------------------------------------
// Comparison

EvalResult pool_trials(const std::vector<EvalResult>& parts) {
  if (parts.empty()) throw ConfigError("pool_trials: nothing to pool");
  EvalResult out;
  out.method = parts.front().method;
  out.world_name = parts.front().world_name;
  out.suite_digest = parts.front().suite_digest;
  for (const auto& p : parts) {
    if (p.method != out.method || p.world_name != out.world_name) {
      throw ProtocolError("pool_trials: results differ in method or world");
    }
    if (p.suite_digest != out.suite_digest) {
      throw ProtocolError("pool_trials: results for " + p.world_name + " used different suites");
    }
    out.trials.insert(out.trials.end(), p.trials.begin(), p.trials.end());
  }
  summarize(out);
  return out;
}

const ComparisonCell& ComparisonTable::at(const std::string& method, const std::string& world) const {
  const auto mi = std::find(methods.begin(), methods.end(), method);
  const auto wi = std::find(worlds.begin(), worlds.end(), world);
  if (mi == methods.end() || wi == worlds.end()) {
    throw ConfigError("comparison has no cell for " + method + "/" + world);
  }
  return cells[static_cast<std::size_t>(mi - methods.begin())][static_cast<std::size_t>(wi - worlds.begin())];
}

const ComparisonCell& ComparisonTable::overall(const std::string& method) const {
  const auto mi = std::find(methods.begin(), methods.end(), method);
  if (mi == methods.end()) throw ConfigError("comparison has no method " + method);
  return cells[static_cast<std::size_t>(mi - methods.begin())].back();
}

ComparisonTable compare(const std::vector<EvalResult>& results) {
  if (results.empty()) throw ConfigError("compare: no results");
  ComparisonTable t;
  std::map<std::string, std::uint64_t> suite_of;
  std::map<std::pair<std::string, std::string>, const EvalResult*> idx;
  for (const auto& r : results) {
    if (std::find(t.methods.begin(), t.methods.end(), r.method) == t.methods.end()) {
      t.methods.push_back(r.method);
    }
    if (std::find(t.worlds.begin(), t.worlds.end(), r.world_name) == t.worlds.end()) {
      t.worlds.push_back(r.world_name);
    }
    const auto [it, fresh] = suite_of.emplace(r.world_name, r.suite_digest);
    if (!fresh && it->second != r.suite_digest) {
      throw ProtocolError("results for world " + r.world_name + " were produced on different suites");
    }
    if (!idx.emplace(std::make_pair(r.method, r.world_name), &r).second) {
      throw ProtocolError("duplicate result for " + r.method + " on " + r.world_name);
    }
  }
  for (const auto& m : t.methods) {
    std::vector<ComparisonCell> row;
    std::size_t trials = 0;
    for (const auto& w : t.worlds) {
      const auto it = idx.find({m, w});
      if (it == idx.end()) throw ProtocolError("method " + m + " has no result on world " + w);
      const EvalResult& r = *it->second;
      if (trials == 0) trials = r.trials.size();
      if (r.trials.size() != trials) {
        throw ProtocolError("method " + m + " has differing trial counts across worlds");
      }
      row.push_back({r.mean, r.stdev});
    }
    // overall: average across worlds within each trial, then over trials
    EvalResult agg;
    for (std::size_t j = 0; j < trials; ++j) {
      TrialResult tr;
      for (const auto& w : t.worlds) {
        const auto& mt = idx.at({m, w})->trials[j].metrics;
        const double nw = static_cast<double>(t.worlds.size());
        tr.metrics.sr += mt.sr / nw;
        tr.metrics.cr += mt.cr / nw;
        tr.metrics.tr += mt.tr / nw;
      }
      agg.trials.push_back(std::move(tr));
    }
    summarize(agg);
    row.push_back({agg.mean, agg.stdev});
    t.cells.push_back(std::move(row));
  }
  return t;
}

std::string ComparisonTable::csv() const {
  std::ostringstream o;
  o << "method,world,sr_mean,sr_std,cr_mean,cr_std,tr_mean,tr_std\n";
  for (std::size_t m = 0; m < methods.size(); ++m) {
    for (std::size_t w = 0; w <= worlds.size(); ++w) {
      const auto& c = cells[m][w];
      o << methods[m] << "," << (w < worlds.size() ? worlds[w] : std::string("overall")) << ","
        << fmt("%.2f", c.mean.sr) << "," << fmt("%.2f", c.stdev.sr) << "," << fmt("%.2f", c.mean.cr)
        << "," << fmt("%.2f", c.stdev.cr) << "," << fmt("%.2f", c.mean.tr) << ","
        << fmt("%.2f", c.stdev.tr) << "\n";
    }
  }
  return o.str();
}

std::string ComparisonTable::text() const {
  std::ostringstream o;
  std::vector<std::string> cols = worlds;
  cols.push_back("Overall");
  const char* names[3] = {"Success Rate (%)", "Collision Rate (%)", "Timeout Rate (%)"};
  for (int metric = 0; metric < 3; ++metric) {
    o << names[metric] << "\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-10s", "Method");
    o << buf;
    for (const auto& c : cols) {
      std::snprintf(buf, sizeof buf, " %16s", c.c_str());
      o << buf;
    }
    o << "\n";
    for (std::size_t m = 0; m < methods.size(); ++m) {
      std::snprintf(buf, sizeof buf, "%-10s", methods[m].c_str());
      o << buf;
      for (std::size_t w = 0; w < cols.size(); ++w) {
        const auto& c = cells[m][w];
        const double mean = metric == 0 ? c.mean.sr : metric == 1 ? c.mean.cr : c.mean.tr;
        const double sd = metric == 0 ? c.stdev.sr : metric == 1 ? c.stdev.cr : c.stdev.tr;
        std::snprintf(buf, sizeof buf, " %7.2f +- %5.2f", mean, sd);
        o << buf;
      }
      o << "\n";
    }
    o << "\n";
  }
  return o.str();
}

}  // namespace fanav
