// Acceptance checks. `--properties` covers the fast mechanism checks,
// `--experiment` runs the desk-scale pipeline through the CLI and checks the
// method ordering. One PASS/FAIL line per criterion; exit status 1 if any fail.

#include <sys/wait.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "fanav/config.hpp"
#include "fanav/error.hpp"
#include "fanav/eval.hpp"
#include "fanav/expert.hpp"
#include "fanav/offrl.hpp"
#include "fanav/world_io.hpp"
#include "oracles.hpp"

using namespace fanav;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("%s [%d] %s: %s\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

template <typename... A>
std::string fmt(const char* f, A... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path source(const std::string& rel) { return fs::path(FANAV_SOURCE_DIR) / rel; }

RunConfig desk() { return load_config(source("configs/desk.toml")); }

double obstacle_fraction(const World& w) {
  double area = 0.0;
  for (const auto& s : w.obstacles()) {
    if (const auto* r = std::get_if<RectShape>(&s)) area += r->w * r->h;
    if (const auto* c = std::get_if<CircleShape>(&s)) area += kPi * c->r * c->r;
  }
  return area / (w.width() * w.height());
}

std::vector<std::shared_ptr<const World>> load_worlds(const RunConfig& cfg, const std::vector<std::string>& paths) {
  std::vector<std::shared_ptr<const World>> out;
  for (const auto& p : paths) out.push_back(std::make_shared<const World>(load_world(cfg.resolve(p))));
  return out;
}

std::vector<std::shared_ptr<const World>> desk_worlds(const RunConfig& cfg) { return load_worlds(cfg, cfg.worlds); }

std::vector<SampleRef> exp_refs(const OfflineDataset& ds, std::size_t n) {
  std::vector<SampleRef> r;
  for (std::uint32_t i = 0; i < n && i < ds.exp.size(); ++i) r.push_back({Partition::exp, i});
  return r;
}

// ---------------------------------------------------------------------------

void gradient_checks() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = oracle::synthetic_dataset(64, 0, 8, 21);
  const auto b = make_batch<double>(ds, exp_refs(ds, 64));
  const int dim = ds.feature_dim();
  std::mt19937_64 rng(22);
  auto v = make_network<double>(MlpLayout::make(dim, {32, 32}, 1, Activation::tanh), rng);
  auto q = make_network<double>(MlpLayout::make(dim + 2, {32, 32}, 1, Activation::tanh), rng);
  auto pi = make_policy<double>(dim, {32, 32}, Activation::tanh, 0.5, kPi / 2, rng, 1.0);
  pi.params[pi.mlp_size()] = -0.4;
  pi.params[pi.mlp_size() + 1] = 0.2;
  std::normal_distribution<double> g(0.0, 1.0);
  Vector<double> targets(b.size()), adv(b.size());
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    targets(i) = g(rng);
    adv(i) = 0.5 * g(rng);
  }

  std::map<std::string, double> worst;
  const auto lv = value_loss(v, b.s, targets, 0.7);
  worst["expectile"] =
      oracle::fd_check(v.params, lv.grad, [&] { return value_loss(v, b.s, targets, 0.7).loss; }, 20, 1);
  const auto lq = td_loss(q, v, b, 0.99);
  worst["td"] = oracle::fd_check(q.params, lq.grad, [&] { return td_loss(q, v, b, 0.99).loss; }, 20, 2);
  const auto la = awr_loss(pi, b, adv, 1.0, 100.0);
  worst["awr"] =
      oracle::fd_check(pi.params, la.grad, [&] { return awr_loss(pi, b, adv, 1.0, 100.0).loss; }, 20, 3);
  const auto lb = bc_loss(pi, b);
  worst["bc"] = oracle::fd_check(pi.params, lb.grad, [&] { return bc_loss(pi, b).loss; }, 20, 4);

  const double secs = seconds_since(t0);
  double max_err = 0.0;
  std::string detail;
  for (const auto& [name, e] : worst) {
    max_err = std::max(max_err, e);
    detail += fmt("%s %.2e, ", name.c_str(), e);
  }
  report(1, "gradient correctness", max_err < 1e-4 && secs < 60.0,
         detail + fmt("tol 1e-4, %.2fs (limit 60s)", secs));
}

void expectile_oracle() {
  std::mt19937_64 rng(31);
  std::gamma_distribution<double> skew(2.0, 1.5);
  std::vector<double> y(1000);
  for (auto& x : y) x = skew(rng) - 3.0;
  const double want = oracle::expectile_bisection(y, 0.7);
  double m = 0.0;
  std::vector<double> u(y.size()), du(y.size());
  for (int it = 0; it < 10000; ++it) {
    for (std::size_t i = 0; i < y.size(); ++i) u[i] = y[i] - m;
    expectile_loss<double>(u, 0.7, du);
    double grad_m = 0.0;
    for (double d : du) grad_m -= d;
    m -= 0.5 * grad_m;
  }
  const double err = std::abs(m - want);
  report(2, "expectile oracle", err < 1e-3, fmt("GD %.6f, bisection %.6f, |diff| %.2e (tol 1e-3)", m, want, err));
}

void asymmetry_and_collapse(const RunConfig& cfg, const OfflineDataset& ds) {
  TrainerConfig tc = cfg.train;
  tc.method = Method::iql_ca;
  tc.seed = 3;
  Trainer<Real> tr(ds, tc);
  std::uint64_t observed = 0;
  tr.set_policy_observer([&](const TrainBatch<Real>& b) { observed += b.collision_count(); });
  for (int k = 0; k < tc.total_steps; ++k) tr.step();
  const auto& c = tr.counters();
  const int want = SamplerConfig{tc.rho, tc.batch_size, 0}.collision_count();
  report(3, "asymmetry guard",
         observed == 0 && c.policy_collision_consumed == 0 && want == 4 &&
             c.critic_collision_min == 4 && c.critic_collision_max == 4 &&
             c.critic_batches == static_cast<std::uint64_t>(tc.total_steps),
         fmt("%llu steps at B=%d rho=%.3f: policy collisions %llu, critic collisions per batch min %llu max %llu "
             "(want 0 and %d)",
             static_cast<unsigned long long>(c.steps), tc.batch_size, tc.rho,
             static_cast<unsigned long long>(observed + c.policy_collision_consumed),
             static_cast<unsigned long long>(c.critic_collision_min),
             static_cast<unsigned long long>(c.critic_collision_max), want));

  TrainerConfig ca = cfg.train;
  ca.method = Method::iql_ca;
  ca.rho = 0.0;
  ca.seed = 4;
  TrainerConfig so = ca;
  so.method = Method::iql_so;
  Trainer<Real> a(ds, ca);
  Trainer<Real> b(ds, so);
  int first_diff = -1;
  for (int k = 0; k < 500 && first_diff < 0; ++k) {
    a.step();
    b.step();
    bool same = a.policy().params == b.policy().params && a.value().params == b.value().params;
    for (std::size_t j = 0; j < a.critics().size(); ++j) {
      same = same && a.critics()[j].params == b.critics()[j].params &&
             a.target_critics()[j].params == b.target_critics()[j].params;
    }
    if (!same) first_diff = k;
  }
  report(4, "degeneracy collapse", first_diff < 0,
         first_diff < 0 ? std::string("iql_ca(rho=0) == iql_so bitwise for 500 steps, all networks")
                        : fmt("parameters diverged at step %d", first_diff));
}

void value_shaping(const RunConfig& cfg, const World& world) {
  ExpertConfig ex = cfg.expert;
  ex.seed = 51;
  const auto ds = build_dataset(world, cfg.robot, cfg.episode, ex, 1000, 0.2);
  TrainerConfig tc = cfg.train;
  tc.method = Method::iql_ca;
  tc.total_steps = 5000;
  tc.seed = 52;
  Trainer<Real> tr(ds, tc);
  for (int k = 0; k < tc.total_steps; ++k) tr.step();

  // trajectory lengths, to locate the last steps before a collision and the
  // middle third of successful runs
  std::map<std::uint64_t, std::uint32_t> len;
  for (const auto* part : {&ds.exp, &ds.col}) {
    for (const auto& t : *part) len[t.traj_id] = std::max(len[t.traj_id], t.t + 1);
  }
  auto mean_v = [&](const std::vector<const Transition*>& ts) {
    Matrix<Real> s(ds.feature_dim(), static_cast<Eigen::Index>(ts.size()));
    for (std::size_t i = 0; i < ts.size(); ++i) {
      for (int k = 0; k < ds.feature_dim(); ++k) s(k, static_cast<Eigen::Index>(i)) = ts[i]->s[static_cast<std::size_t>(k)];
    }
    return static_cast<double>(tr.value().forward(s).mean());
  };
  std::vector<const Transition*> near, mid;
  for (const auto& t : ds.col) {
    if (t.t + 3 >= len[t.traj_id]) near.push_back(&t);
  }
  for (const auto& t : ds.exp) {
    const std::uint32_t n = len[t.traj_id];
    if (3 * t.t >= n && 3 * t.t < 2 * n) mid.push_back(&t);
  }
  if (near.empty() || mid.empty()) {
    report(5, "value shaping", false, "toy dataset lacks near-collision or mid-success states");
    return;
  }
  const double v_near = mean_v(near), v_mid = mean_v(mid);
  report(5, "value shaping", v_near < v_mid,
         fmt("%zu transitions; mean V near collision %.3f (%zu states) < mid success %.3f (%zu states)",
             ds.size(), v_near, near.size(), v_mid, mid.size()));
}

Pose euler(Pose p, double v, double w, double dt, int n) {
  const double h = dt / n;
  for (int i = 0; i < n; ++i) {
    p.x += v * std::cos(p.heading) * h;
    p.y += v * std::sin(p.heading) * h;
    p.heading += w * h;
  }
  return p;
}

void module_properties() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> failed;
  auto need = [&](bool ok, const char* what) {
    if (!ok) failed.emplace_back(what);
  };

  // telescoping: without a terminal reward the episode return is c1 * (d0 - dT)
  {
    const auto room = std::make_shared<const World>("room", 10.0, 10.0);
    EpisodeConfig ep;
    ep.t_max = 60;
    NavEnv env(room, RobotSpec{}, ep);
    const Point goal{9.0, 8.0};
    env.reset({5.0, 5.0, 0.3}, goal);
    const double d0 = std::hypot(goal.x - 5.0, goal.y - 5.0);
    std::mt19937_64 rng(61);
    std::uniform_real_distribution<double> w(-0.6, 0.6);
    double sum = 0.0;
    while (!env.done()) sum += env.step({0.1, w(rng)}).reward;
    const double dT = std::hypot(goal.x - env.pose().x, goal.y - env.pose().y);
    need(env.terminal() == Terminal::timeout && std::abs(sum - ep.c1 * (d0 - dT)) < 1e-9, "telescoping");
  }
  // terminal exclusivity
  {
    const auto world = std::make_shared<const World>(
        "w", 10.0, 10.0, std::vector<Shape>{RectShape{4, 4, 2, 2}, CircleShape{2, 7, 0.5}});
    std::mt19937_64 rng(62);
    std::uniform_real_distribution<double> u(0.5, 9.5), v(0.0, 0.5), w(-1.5, 1.5);
    bool ok = true;
    for (int k = 0; k < 100; ++k) {
      const Pose start{u(rng), u(rng), 0.0};
      if (world->disk_collides(start.position(), 0.2)) continue;
      NavEnv env(world, RobotSpec{}, EpisodeConfig{});
      env.reset(start, {u(rng), u(rng)});
      int terminals = 0;
      while (!env.done()) terminals += env.step({v(rng), w(rng)}).terminal != Terminal::none;
      ok = ok && terminals == 1;
      try {
        env.step({0, 0});
        ok = false;
      } catch (const ProtocolError&) {
      }
    }
    need(ok, "terminal exclusivity");
  }
  // raycast analytic cases
  {
    RobotSpec spec;
    spec.lidar_beam_count = 3;
    const World room("room", 4.0, 4.0);
    const World circ("c", 10.0, 10.0, {CircleShape{5.0, 2.0, 0.5}});
    RobotSpec short_range = spec;
    short_range.lidar_range_max = 1.0;
    bool ok = std::abs(raycast(room, {2.0, 2.0, 0.0}, spec)[1] - 2.0) < 1e-12 &&
              std::abs(raycast(circ, {2.0, 2.0, 0.0}, spec)[1] - 2.5) < 1e-12;
    for (double d : raycast(room, {2.0, 2.0, 0.3}, short_range)) ok = ok && d == 1.0;
    need(ok, "raycast");
  }
  // arc vs Euler
  {
    std::mt19937_64 rng(63);
    std::uniform_real_distribution<double> v(-0.5, 0.5), w(-kPi / 2, kPi / 2), h(-3, 3);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      const Pose s{1.0, -2.0, h(rng)};
      const double vv = v(rng), ww = w(rng);
      const Pose a = step_kinematics(s, {vv, ww}, 1.0);
      const Pose e = euler(s, vv, ww, 1.0, 10000);
      worst = std::max(worst, std::hypot(a.x - e.x, a.y - e.y));
    }
    need(worst < 1e-3, "arc vs Euler");
  }
  // dataset round-trip
  {
    const auto ds = oracle::synthetic_dataset(500, 60, 108, 64);
    const auto path = fs::temp_directory_path() / "fanav_acceptance_rt.bin";
    save_dataset(path, ds);
    const auto back = load_dataset(path);
    fs::remove(path);
    auto same = [](const std::vector<Transition>& a, const std::vector<Transition>& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& x = a[i];
        const auto& y = b[i];
        if (x.s.size() != y.s.size() || std::memcmp(x.s.data(), y.s.data(), x.s.size() * sizeof(float)) ||
            std::memcmp(x.s_next.data(), y.s_next.data(), x.s.size() * sizeof(float)) ||
            std::memcmp(&x.a, &y.a, sizeof(Action)) || std::memcmp(&x.r, &y.r, sizeof(double)) ||
            x.done != y.done || x.outcome != y.outcome || x.traj_id != y.traj_id || x.t != y.t) {
          return false;
        }
      }
      return true;
    };
    need(same(ds.exp, back.exp) && same(ds.col, back.col) && back.meta.generation == ds.meta.generation,
         "dataset round-trip");
  }
  // sampler chi-square
  {
    const auto ds = oracle::synthetic_dataset(20, 20, 4, 65);
    StratifiedSampler s(ds, {0.5, 100, 66});
    std::vector<double> ce(20, 0.0), cc(20, 0.0);
    for (int k = 0; k < 1000; ++k) {
      for (const auto& r : s.next()) (r.part == Partition::exp ? ce : cc)[r.index] += 1;
    }
    bool ok = true;
    for (const auto* counts : {&ce, &cc}) {
      double chi2 = 0.0;
      for (double c : *counts) chi2 += (c - 2500.0) * (c - 2500.0) / 2500.0;
      ok = ok && chi2 < 19 + 5 * std::sqrt(38.0);
    }
    need(ok, "sampler chi-square");
  }

  const double secs = seconds_since(t0);
  std::string detail = failed.empty() ? "telescoping, exclusivity, raycast, arc vs Euler, round-trip, chi-square ok"
                                      : "failed:";
  for (const auto& f : failed) detail += " " + f;
  report(6, "module properties", failed.empty() && secs < 120.0, detail + fmt(", %.2fs (limit 120s)", secs));
}

void sanity(const RunConfig& cfg, const std::vector<std::shared_ptr<const World>>& worlds) {
  std::size_t sparse = 0;
  for (std::size_t w = 1; w < worlds.size(); ++w) {
    if (obstacle_fraction(*worlds[w]) < obstacle_fraction(*worlds[sparse])) sparse = w;
  }
  EvalConfig ec;
  ec.n_trials = cfg.eval.trials;
  ec.jitter_pos = cfg.eval.jitter_pos;
  ec.jitter_heading = cfg.eval.jitter_heading;
  ec.seed = 71;
  bool identity = true;
  double zero_tr = 100.0;
  for (std::size_t w = 0; w < worlds.size(); ++w) {
    const auto suite = make_suite(*worlds[w], cfg.robot, cfg.episode, cfg.eval.tasks, cfg.expert.inflation, 72 + w);
    const auto z = evaluate_suite([] { return std::make_unique<ConstantController>(Action{0.0, 0.0}); },
                                  worlds[w], cfg.robot, suite, ec, "zero");
    zero_tr = std::min(zero_tr, z.mean.tr);
    for (const auto& t : z.trials) identity = identity && std::abs(t.metrics.sr + t.metrics.cr + t.metrics.tr - 100.0) < 1e-9;
    if (w == sparse) {
      const auto world = worlds[w];
      const auto e = evaluate_suite(
          [&] { return std::make_unique<ExpertController>(world, cfg.robot, cfg.expert); }, world, cfg.robot,
          suite, ec, "expert");
      for (const auto& t : e.trials) identity = identity && std::abs(t.metrics.sr + t.metrics.cr + t.metrics.tr - 100.0) < 1e-9;
      report(9, "sanity: expert on sparse world", e.mean.sr == 100.0,
             fmt("%s expert SR %.2f (want 100)", world->name().c_str(), e.mean.sr));
    }
  }
  report(9, "sanity: zero policy", zero_tr == 100.0, fmt("min TR over worlds %.2f (want 100)", zero_tr));
  report(9, "sanity: metric identity", identity, "SR+CR+TR = 100 on every trial of every suite");
}

int run_properties() {
  gradient_checks();
  expectile_oracle();
  const RunConfig cfg = desk();
  const auto worlds = desk_worlds(cfg);
  const auto data_worlds = cfg.data.worlds.empty() ? worlds : load_worlds(cfg, cfg.data.worlds);
  std::vector<const World*> ptrs;
  for (const auto& w : data_worlds) ptrs.push_back(w.get());
  ExpertConfig ex = cfg.expert;
  ex.seed = 41;
  const auto ds = build_dataset(ptrs, cfg.robot, cfg.episode, ex, static_cast<std::size_t>(cfg.data.transitions),
                                cfg.data.col_ratio);
  asymmetry_and_collapse(cfg, ds);
  std::size_t densest = 0;
  for (std::size_t w = 1; w < worlds.size(); ++w) {
    if (obstacle_fraction(*worlds[w]) > obstacle_fraction(*worlds[densest])) densest = w;
  }
  value_shaping(cfg, *worlds[densest]);
  module_properties();
  sanity(cfg, worlds);
  return g_failures == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct Cell {
  double sr = 0.0;
  double cr = 0.0;
};

std::map<std::pair<std::string, std::string>, Cell> read_comparison(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::map<std::pair<std::string, std::string>, Cell> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() < 5) throw FormatError("bad comparison row: " + line, 0);
    out[{f[0], f[1]}] = {std::stod(f[2]), std::stod(f[4])};
  }
  return out;
}

bool run_pipeline(const fs::path& dir, int n_seeds) {
  fs::create_directories(dir);
  const std::string cmd = std::string(FANAV_CLI_PATH) + " pipeline --config " +
                          source("configs/desk.toml").string() + " --set n_seeds=" + std::to_string(n_seeds) +
                          " --out-dir " + dir.string() + " > " + (dir / "pipeline.log").string() + " 2>&1";
  std::printf("running %d-seed desk pipeline in %s\n", n_seeds, dir.string().c_str());
  std::fflush(stdout);
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) && WEXITSTATUS(status) == 0;
}

struct Ordering {
  bool c7 = false;
  bool c8 = false;
  std::string d7;
  std::string d8;
};

Ordering check_ordering(const fs::path& csv, const std::string& densest) {
  const auto t = read_comparison(csv);
  auto at = [&](const char* m, const std::string& w) {
    const auto it = t.find({m, w});
    if (it == t.end()) throw FormatError(std::string("comparison lacks ") + m + "/" + w, 0);
    return it->second;
  };
  Ordering o;
  const Cell ca = at("iql_ca", densest), bc = at("bc", densest), dm = at("iql_dm", densest);
  o.c7 = ca.cr < bc.cr && ca.cr < dm.cr && ca.sr >= bc.sr - 3.0;
  o.d7 = fmt("%s: CR ca %.2f / bc %.2f / dm %.2f, SR ca %.2f vs bc %.2f - 3", densest.c_str(), ca.cr, bc.cr, dm.cr,
             ca.sr, bc.sr);
  const Cell so = at("iql_so", "overall"), dmo = at("iql_dm", "overall");
  o.c8 = dmo.sr <= so.sr;
  o.d8 = fmt("overall SR dm %.2f <= so %.2f", dmo.sr, so.sr);
  return o;
}

int run_experiment(const fs::path& work) {
  const RunConfig cfg = desk();
  const auto worlds = desk_worlds(cfg);
  std::size_t densest = 0;
  for (std::size_t w = 1; w < worlds.size(); ++w) {
    if (obstacle_fraction(*worlds[w]) > obstacle_fraction(*worlds[densest])) densest = w;
  }
  const std::string dname = worlds[densest]->name();

  const auto t0 = std::chrono::steady_clock::now();
  if (!run_pipeline(work / "seeds3", 3)) {
    report(7, "ordering on the densest world", false, "pipeline failed, see seeds3/pipeline.log");
    report(8, "naive mixing direction", false, "pipeline failed, see seeds3/pipeline.log");
    return 1;
  }
  std::printf("3-seed pipeline took %.0fs\n", seconds_since(t0));
  Ordering o = check_ordering(work / "seeds3" / "comparison.csv", dname);
  std::string note = " (3 seeds)";
  if (!o.c7 || !o.c8) {
    std::printf("3-seed ordering: [7] %s %s; [8] %s %s; rerunning with 5 seeds\n", o.c7 ? "holds" : "fails",
                o.d7.c_str(), o.c8 ? "holds" : "fails", o.d8.c_str());
    if (!run_pipeline(work / "seeds5", 5)) {
      report(7, "ordering on the densest world", false, "5-seed pipeline failed, see seeds5/pipeline.log");
      report(8, "naive mixing direction", false, "5-seed pipeline failed, see seeds5/pipeline.log");
      return 1;
    }
    o = check_ordering(work / "seeds5" / "comparison.csv", dname);
    note = " (5-seed rerun)";
  }
  report(7, "ordering on the densest world", o.c7, o.d7 + note);
  report(8, "naive mixing direction", o.c8, o.d8 + note);
  return g_failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("fanav acceptance checks");
  bool properties = false;
  bool experiment = false;
  std::string work = (fs::temp_directory_path() / "fanav_acceptance").string();
  app.add_flag("--properties", properties, "criteria 1-6 and 9");
  app.add_flag("--experiment", experiment, "criteria 7-8 (desk pipeline)");
  app.add_option("--work-dir", work, "output directory for --experiment");
  CLI11_PARSE(app, argc, argv);
  if (!properties && !experiment) properties = experiment = true;
  try {
    int rc = 0;
    if (properties) rc |= run_properties();
    if (experiment) rc |= run_experiment(work);
    return rc;
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 1;
  }
}
