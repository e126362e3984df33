#include "fanav/expert.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <queue>
#include <sstream>

#include "fanav/error.hpp"
#include "fanav/rng.hpp"

namespace fanav {

double path_length(const Path& path) {
  double len = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) len += distance(path[i - 1], path[i]);
  return len;
}

namespace {

struct Grid {
  int nx = 0;
  int ny = 0;
  std::vector<std::uint8_t> blocked;

  bool free(int i, int j) const {
    return i >= 0 && j >= 0 && i < nx && j < ny && !blocked[static_cast<std::size_t>(j * nx + i)];
  }
  Point center(int i, int j) const {
    return {(i + 0.5) * kGridResolution, (j + 0.5) * kGridResolution};
  }
  std::pair<int, int> cell(Point p) const {
    return {std::clamp(static_cast<int>(std::floor(p.x / kGridResolution)), 0, nx - 1),
            std::clamp(static_cast<int>(std::floor(p.y / kGridResolution)), 0, ny - 1)};
  }
};

Grid make_grid(const World& world, double clearance) {
  Grid g;
  g.nx = std::max(1, static_cast<int>(std::ceil(world.width() / kGridResolution - 1e-9)));
  g.ny = std::max(1, static_cast<int>(std::ceil(world.height() / kGridResolution - 1e-9)));
  g.blocked.resize(static_cast<std::size_t>(g.nx * g.ny));
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      g.blocked[static_cast<std::size_t>(j * g.nx + i)] = world.clearance(g.center(i, j)) < clearance;
    }
  }
  return g;
}

std::vector<std::pair<int, int>> astar(const Grid& g, std::pair<int, int> s, std::pair<int, int> t) {
  const auto idx = [&](int i, int j) { return static_cast<std::size_t>(j * g.nx + i); };
  const std::size_t n = g.blocked.size();
  std::vector<double> cost(n, std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> parent(n, -1);
  std::vector<std::uint8_t> closed(n, 0);
  const auto h = [&](int i, int j) {
    const double dx = std::abs(i - t.first);
    const double dy = std::abs(j - t.second);
    return (std::max(dx, dy) + (std::sqrt(2.0) - 1.0) * std::min(dx, dy));
  };
  using Node = std::tuple<double, std::uint64_t, int, int>;  // f, insertion order, i, j
  std::priority_queue<Node, std::vector<Node>, std::greater<>> open;
  std::uint64_t order = 0;
  cost[idx(s.first, s.second)] = 0.0;
  open.emplace(h(s.first, s.second), order++, s.first, s.second);
  const auto passable = [&](int i, int j) {
    return g.free(i, j) || (i == t.first && j == t.second) || (i == s.first && j == s.second);
  };
  while (!open.empty()) {
    const auto [f, ord, i, j] = open.top();
    open.pop();
    (void)f;
    (void)ord;
    const auto k = idx(i, j);
    if (closed[k]) continue;
    closed[k] = 1;
    if (i == t.first && j == t.second) break;
    for (int dj = -1; dj <= 1; ++dj) {
      for (int di = -1; di <= 1; ++di) {
        if (di == 0 && dj == 0) continue;
        const int ni = i + di;
        const int nj = j + dj;
        if (ni < 0 || nj < 0 || ni >= g.nx || nj >= g.ny || !passable(ni, nj)) continue;
        // no squeezing diagonally between two blocked cells
        if (di != 0 && dj != 0 && (!passable(i + di, j) || !passable(i, j + dj))) continue;
        const double c = cost[k] + ((di != 0 && dj != 0) ? std::sqrt(2.0) : 1.0);
        const auto nk = idx(ni, nj);
        if (c < cost[nk]) {
          cost[nk] = c;
          parent[nk] = static_cast<std::int64_t>(k);
          open.emplace(c + h(ni, nj), order++, ni, nj);
        }
      }
    }
  }
  std::vector<std::pair<int, int>> cells;
  auto k = static_cast<std::int64_t>(idx(t.first, t.second));
  if (!closed[static_cast<std::size_t>(k)]) return cells;
  while (k >= 0) {
    cells.emplace_back(static_cast<int>(k % g.nx), static_cast<int>(k / g.nx));
    k = parent[static_cast<std::size_t>(k)];
  }
  std::reverse(cells.begin(), cells.end());
  return cells;
}

struct PlannedTask {
  Task task;
  Path path;
};

PlannedTask sample_planned_task(const World& world, const RobotSpec& spec, double inflation,
                                std::mt19937_64& rng) {
  const double clear = spec.radius + inflation;
  std::uniform_real_distribution<double> ux(clear, world.width() - clear);
  std::uniform_real_distribution<double> uy(clear, world.height() - clear);
  std::uniform_real_distribution<double> uh(-kPi, kPi);
  if (!(world.width() > 2 * clear && world.height() > 2 * clear)) {
    throw ConfigError("world " + world.name() + " is too small for the robot");
  }
  for (int attempt = 0; attempt < kMaxTaskRejections; ++attempt) {
    const Point s{ux(rng), uy(rng)};
    const Point g{ux(rng), uy(rng)};
    const double heading = uh(rng);
    if (distance(s, g) < kMinTaskSeparation) continue;
    if (world.clearance(s) < clear || world.clearance(g) < clear) continue;
    try {
      auto path = plan_path(world, s, g, spec.radius, inflation);
      return {{{s.x, s.y, normalize_angle(heading)}, g}, std::move(path)};
    } catch (const NoPathError&) {
      continue;
    }
  }
  throw ConfigError("no valid start/goal pair found in world " + world.name() + " after " +
                    std::to_string(kMaxTaskRejections) + " samples");
}

}  // namespace

Path plan_path(const World& world, Point start, Point goal, double robot_radius, double inflation) {
  const double clear = robot_radius + inflation;
  if (!world.inside(start) || !world.inside(goal)) {
    throw InvalidPoseError("plan_path: start or goal outside the world");
  }
  if (world.clearance(start) < clear || world.clearance(goal) < clear) {
    throw InvalidPoseError("plan_path: start or goal inside an inflated obstacle");
  }
  if (!world.swept_collides(start, goal, clear)) return {start, goal};

  const Grid grid = make_grid(world, clear);
  const auto cs = grid.cell(start);
  const auto cg = grid.cell(goal);
  const auto cells = astar(grid, cs, cg);
  if (cells.empty()) throw NoPathError("plan_path: goal unreachable");

  Path raw;
  raw.push_back(start);
  for (std::size_t k = 1; k + 1 < cells.size(); ++k) {
    raw.push_back(grid.center(cells[k].first, cells[k].second));
  }
  raw.push_back(goal);

  Path out{raw.front()};
  std::size_t i = 0;
  while (i + 1 < raw.size()) {
    std::size_t next = i + 1;
    for (std::size_t j = raw.size() - 1; j > i + 1; --j) {
      if (!world.swept_collides(raw[i], raw[j], clear)) {
        next = j;
        break;
      }
    }
    out.push_back(raw[next]);
    i = next;
  }
  return out;
}

void ExpertConfig::validate() const {
  if (!(lookahead > 0.0)) throw ConfigError("expert lookahead must be > 0");
  if (!(gain_heading > 0.0)) throw ConfigError("expert gain_heading must be > 0");
  if (!(speed_scale > 0.0 && speed_scale <= 1.0)) throw ConfigError("speed_scale must lie in (0, 1]");
  if (!(noise_std_v >= 0.0 && noise_std_omega >= 0.0)) throw ConfigError("noise std must be >= 0");
  if (!(noise_prob >= 0.0 && noise_prob <= 1.0)) throw ConfigError("noise_prob must lie in [0, 1]");
  if (!(noise_corr >= 0.0 && noise_corr < 1.0)) throw ConfigError("noise_corr must lie in [0, 1)");
  if (!(inflation >= 0.0)) throw ConfigError("inflation must be >= 0");
}

Action expert_action(const Pose& pose, const Path& path, const ExpertConfig& cfg,
                     const RobotSpec& spec) {
  if (path.empty()) throw ProtocolError("expert_action: empty path");
  const Point p = pose.position();
  Point target = path.back();
  if (path.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    double best_arc = 0.0;
    double arc = 0.0;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      const Point a = path[i];
      const Point b = path[i + 1];
      const double len = distance(a, b);
      double t = 0.0;
      if (len > 0.0) {
        t = std::clamp(((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) / (len * len), 0.0,
                       1.0);
      }
      const double d = distance(p, {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
      if (d < best) {
        best = d;
        best_arc = arc + t * len;
      }
      arc += len;
    }
    double want = best_arc + cfg.lookahead;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      const double len = distance(path[i], path[i + 1]);
      if (want <= len && len > 0.0) {
        const double t = want / len;
        target = {path[i].x + t * (path[i + 1].x - path[i].x),
                  path[i].y + t * (path[i + 1].y - path[i].y)};
        break;
      }
      want -= len;
    }
  }
  double phi = 0.0;
  if (distance(p, target) > 1e-9) {
    phi = normalize_angle(std::atan2(target.y - p.y, target.x - p.x) - pose.heading);
  }
  Action a;
  a.v_cmd = cfg.speed_scale * spec.v_max * std::max(0.0, std::cos(phi));
  a.omega_cmd = std::clamp(cfg.gain_heading * phi, -spec.omega_max, spec.omega_max);
  return a;
}

CollectMode parse_collect_mode(const std::string& s) {
  if (s == "clean") return CollectMode::clean;
  if (s == "perturbed") return CollectMode::perturbed;
  throw ConfigError("unknown collection mode '" + s + "' (expected clean|perturbed)");
}

Task sample_task(const World& world, const RobotSpec& spec, double inflation, std::mt19937_64& rng) {
  return sample_planned_task(world, spec, inflation, rng).task;
}

Trajectory run_expert_episode(const World& world, const RobotSpec& spec, const EpisodeConfig& ep,
                              const ExpertConfig& cfg, CollectMode mode, std::uint64_t index) {
  std::mt19937_64 task_rng(derive_seed(cfg.seed, tag("task"), index));
  std::mt19937_64 noise_rng(derive_seed(cfg.seed, tag("noise"), index));
  const auto planned = sample_planned_task(world, spec, cfg.inflation, task_rng);

  // The engine needs shared ownership; the world outlives this call.
  NavEnv env(std::shared_ptr<const World>(&world, [](const World*) {}), spec, ep);
  Trajectory traj;
  traj.id = index;
  traj.goal = planned.task.goal;
  traj.states.push_back(env.reset(planned.task.start, planned.task.goal));
  traj.poses.push_back(env.pose());

  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  // AR(1) state in units of the noise std; stationary, so every step's
  // perturbation is still N(0, std^2)
  const double phi = cfg.noise_corr;
  const double innov = std::sqrt(1.0 - phi * phi);
  double e_v = gauss(noise_rng);
  double e_w = gauss(noise_rng);
  bool first = true;
  while (!env.done()) {
    Action a = expert_action(env.pose(), planned.path, cfg, spec);
    if (mode == CollectMode::perturbed && phi > 0.0) {
      if (!first) {
        e_v = phi * e_v + innov * gauss(noise_rng);
        e_w = phi * e_w + innov * gauss(noise_rng);
      }
      first = false;
      if (coin(noise_rng) < cfg.noise_prob) {
        a.v_cmd += cfg.noise_std_v * e_v;
        a.omega_cmd += cfg.noise_std_omega * e_w;
      }
    } else if (mode == CollectMode::perturbed && coin(noise_rng) < cfg.noise_prob) {
      a.v_cmd += cfg.noise_std_v * gauss(noise_rng);
      a.omega_cmd += cfg.noise_std_omega * gauss(noise_rng);
    }
    a = clamp_action(a, spec);
    auto out = env.step(a);
    traj.actions.push_back(a);
    traj.rewards.push_back(out.reward);
    traj.states.push_back(std::move(out.next_state));
    traj.poses.push_back(env.pose());
  }
  traj.outcome = env.terminal();
  return traj;
}

std::vector<Trajectory> collect(const World& world, const RobotSpec& spec,
                                const EpisodeConfig& ep, const ExpertConfig& cfg, int n_episodes,
                                CollectMode mode, std::uint64_t first) {
  if (n_episodes < 1) throw ConfigError("collect: n_episodes must be >= 1");
  cfg.validate();
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(n_episodes));
  for (int k = 0; k < n_episodes; ++k) {
    out.push_back(run_expert_episode(world, spec, ep, cfg, mode, first + static_cast<std::uint64_t>(k)));
  }
  return out;
}

OfflineDataset partition(const std::vector<Trajectory>& trajs, const StateEncoder& enc) {
  OfflineDataset ds;
  ds.meta.beam_count = enc.beam_count();
  ds.meta.range_max = enc.range_max();
  ds.meta.d_norm = enc.d_norm();
  ds.meta.v_max = enc.v_max();
  ds.meta.omega_max = enc.omega_max();
  for (const auto& t : trajs) {
    if (t.outcome == Terminal::success || t.outcome == Terminal::collision) {
      ds.add(to_transitions(t, enc));
    }
  }
  return ds;
}

namespace {

void check_build_args(std::size_t n_transitions, double col_ratio) {
  if (n_transitions < 2) throw ConfigError("build_dataset: need at least 2 transitions");
  if (!(col_ratio >= 0.0 && col_ratio < 1.0)) {
    throw ConfigError("build_dataset: collision ratio must lie in [0, 1)");
  }
}

std::size_t exp_quota_of(std::size_t n_transitions, double col_ratio) {
  return static_cast<std::size_t>(
      std::floor((1.0 - col_ratio) * static_cast<double>(n_transitions) + 0.5));
}

OfflineDataset build_one(const World& world, const RobotSpec& spec, const EpisodeConfig& ep,
                         const ExpertConfig& cfg, std::size_t exp_quota, std::size_t col_quota,
                         double col_ratio, double d_norm, BuildStats* stats) {
  cfg.validate();
  const std::size_t n_transitions = exp_quota + col_quota;
  const StateEncoder enc(spec, d_norm);
  OfflineDataset ds = partition({}, enc);
  BuildStats st;

  auto append = [&](std::vector<Transition>& part, std::size_t quota, std::vector<Transition> ts) {
    const std::size_t room = quota - part.size();
    const std::size_t skip = ts.size() > room ? ts.size() - room : 0;
    part.insert(part.end(), std::make_move_iterator(ts.begin() + static_cast<std::ptrdiff_t>(skip)),
                std::make_move_iterator(ts.end()));
  };

  constexpr std::uint64_t kMaxEpisodes = 1000000;
  for (std::uint64_t k = 0; ds.exp.size() < exp_quota || ds.col.size() < col_quota; ++k) {
    if (k >= kMaxEpisodes) throw ConfigError("build_dataset: episode budget exhausted");
    if (st.perturbed_episodes >= 2000 && st.perturbed_collisions == 0 && ds.col.size() < col_quota) {
      throw ConfigError("build_dataset: perturbed expert produced no collisions in 2000 episodes");
    }
    const double col_fill = static_cast<double>(ds.col.size()) / static_cast<double>(col_quota);
    const double exp_fill = static_cast<double>(ds.exp.size()) / static_cast<double>(exp_quota);
    const bool perturb = ds.col.size() < col_quota && (ds.exp.size() >= exp_quota || col_fill <= exp_fill);
    const auto mode = perturb ? CollectMode::perturbed : CollectMode::clean;
    (perturb ? st.perturbed_episodes : st.clean_episodes)++;
    const auto traj = run_expert_episode(world, spec, ep, cfg, mode, k);
    if (traj.outcome == Terminal::success) {
      if (perturb) st.perturbed_successes++;
      if (ds.exp.size() < exp_quota) append(ds.exp, exp_quota, to_transitions(traj, enc));
    } else if (traj.outcome == Terminal::collision) {
      (perturb ? st.perturbed_collisions : st.clean_collisions)++;
      if (ds.col.size() < col_quota) append(ds.col, col_quota, to_transitions(traj, enc));
    } else {
      st.timeouts++;
    }
  }

  std::ostringstream gen;
  gen << "world=" << world.name() << "\n"
      << "transitions=" << n_transitions << "\n"
      << "col_ratio=" << col_ratio << "\n"
      << "seed=" << cfg.seed << "\n"
      << "expert.lookahead=" << cfg.lookahead << "\n"
      << "expert.gain_heading=" << cfg.gain_heading << "\n"
      << "expert.speed_scale=" << cfg.speed_scale << "\n"
      << "expert.noise_std_v=" << cfg.noise_std_v << "\n"
      << "expert.noise_std_omega=" << cfg.noise_std_omega << "\n"
      << "expert.noise_prob=" << cfg.noise_prob << "\n"
      << "expert.inflation=" << cfg.inflation << "\n"
      << "episodes.clean=" << st.clean_episodes << "\n"
      << "episodes.perturbed=" << st.perturbed_episodes << "\n"
      << "episodes.timeouts=" << st.timeouts << "\n";
  ds.meta.generation = gen.str();
  ds.meta.config_digest = fnv1a(ds.meta.generation);
  if (stats) *stats = st;
  return ds;
}

}  // namespace

OfflineDataset build_dataset(const World& world, const RobotSpec& spec, const EpisodeConfig& ep,
                             const ExpertConfig& cfg, std::size_t n_transitions, double col_ratio,
                             BuildStats* stats) {
  check_build_args(n_transitions, col_ratio);
  const std::size_t exp_quota = exp_quota_of(n_transitions, col_ratio);
  return build_one(world, spec, ep, cfg, exp_quota, n_transitions - exp_quota, col_ratio,
                   world.diagonal(), stats);
}

OfflineDataset build_dataset(const std::vector<const World*>& worlds, const RobotSpec& spec,
                             const EpisodeConfig& ep, const ExpertConfig& cfg,
                             std::size_t n_transitions, double col_ratio, BuildStats* stats) {
  if (worlds.empty()) throw ConfigError("build_dataset: no collection worlds");
  if (worlds.size() == 1) return build_dataset(*worlds[0], spec, ep, cfg, n_transitions, col_ratio, stats);
  check_build_args(n_transitions, col_ratio);
  const std::size_t exp_quota = exp_quota_of(n_transitions, col_ratio);
  const std::size_t col_quota = n_transitions - exp_quota;
  double d_norm = 0.0;
  for (const World* w : worlds) d_norm = std::max(d_norm, w->diagonal());
  OfflineDataset out;
  BuildStats total;
  std::string generation;
  const std::size_t n_worlds = worlds.size();
  for (std::size_t w = 0; w < n_worlds; ++w) {
    const auto share = [&](std::size_t q) { return q / n_worlds + (w < q % n_worlds ? 1 : 0); };
    ExpertConfig wc = cfg;
    wc.seed = derive_seed(cfg.seed, tag("world"), w);
    BuildStats st;
    OfflineDataset part = build_one(*worlds[w], spec, ep, wc, share(exp_quota), share(col_quota),
                                    col_ratio, d_norm, &st);
    // episode ids restart per world; keep them distinct
    const std::uint64_t offset = static_cast<std::uint64_t>(w) << 40;
    for (auto& t : part.exp) t.traj_id += offset;
    for (auto& t : part.col) t.traj_id += offset;
    if (w == 0) out.meta = part.meta;
    out.exp.insert(out.exp.end(), part.exp.begin(), part.exp.end());
    out.col.insert(out.col.end(), part.col.begin(), part.col.end());
    generation += "[" + worlds[w]->name() + "]\n" + part.meta.generation;
    total.clean_episodes += st.clean_episodes;
    total.perturbed_episodes += st.perturbed_episodes;
    total.timeouts += st.timeouts;
    total.perturbed_successes += st.perturbed_successes;
    total.perturbed_collisions += st.perturbed_collisions;
    total.clean_collisions += st.clean_collisions;
  }
  out.meta.generation = generation;
  out.meta.config_digest = fnv1a(generation);
  if (stats) *stats = total;
  return out;
}

}  // namespace fanav
