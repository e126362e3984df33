// Command-line entry point: world generation, data collection, training,
// evaluation, comparison and the end-to-end pipeline.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "fanav/config.hpp"
#include "fanav/data.hpp"
#include "fanav/error.hpp"
#include "fanav/eval.hpp"
#include "fanav/expert.hpp"
#include "fanav/manifest.hpp"
#include "fanav/offrl.hpp"
#include "fanav/rng.hpp"
#include "fanav/world_io.hpp"

namespace fs = std::filesystem;
using namespace fanav;

namespace {

constexpr int kUsageExit = 2;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c, bool with_seed = true) {
  app->add_option("--config", c.config, "TOML-style config file")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "override a config key (key=value); repeatable");
  if (with_seed) app->add_option("--seed", c.seed, "master seed (falls back to FANAV_SEED)");
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  for (const auto& s : c.sets) apply_override(cfg, s);
  cfg.seed = resolve_seed(c.seed, cfg.seed);
  cfg.validate();
  return cfg;
}

std::vector<std::string> g_argv;

RunManifest start_manifest(const RunConfig& cfg) {
  RunManifest m;
  m.command_line = g_argv;
  m.config_digest = cfg.digest();
  m.seed = cfg.seed;
  m.started = utc_timestamp();
  return m;
}

void finish_manifest(const fs::path& dir, RunManifest& m) {
  m.finished = utc_timestamp();
  write_manifest(dir, m);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream o(path, std::ios::trunc);
  if (!o) throw IoError("cannot write " + path.string());
  o << text;
  if (!o) throw IoError("write failed: " + path.string());
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------

struct GenWorldArgs {
  WorldGenConfig gen;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int run_gen_world(const GenWorldArgs& a) {
  WorldGenConfig g = a.gen;
  g.seed = resolve_seed(a.seed, g.seed);
  if (!(g.density >= 0.0 && g.density <= 1.0)) throw ConfigError("density must lie in [0, 1]");
  const World w = generate_world(g);
  save_world(a.out, w);
  std::printf("wrote %s (%zu obstacles)\n", a.out.c_str(), w.obstacles().size());
  return 0;
}

OfflineDataset collect_dataset(const RunConfig& cfg, const std::vector<const World*>& worlds,
                               std::optional<int> episodes, const std::string& mode,
                               BuildStats* stats) {
  if (episodes) {
    if (worlds.size() != 1) throw ConfigError("--episodes collects from exactly one world");
    const World& world = *worlds.front();
    const auto trajs = collect(world, cfg.robot, cfg.episode, cfg.expert, *episodes,
                               parse_collect_mode(mode));
    OfflineDataset ds = partition(trajs, StateEncoder(cfg.robot, world.diagonal()));
    std::ostringstream gen;
    gen << "world=" << world.name() << "\nepisodes=" << *episodes << "\nmode=" << mode
        << "\nexpert_seed=" << cfg.expert.seed << "\n";
    ds.meta.generation = gen.str();
    ds.meta.config_digest = fnv1a(ds.meta.generation);
    return ds;
  }
  return build_dataset(worlds, cfg.robot, cfg.episode, cfg.expert,
                       static_cast<std::size_t>(cfg.data.transitions), cfg.data.col_ratio, stats);
}

struct CollectArgs {
  Common c;
  std::string world;
  std::optional<int> episodes;
  std::string mode = "perturbed";
  std::optional<double> ratio;
  std::optional<int> transitions;
  std::string out;
};

int run_collect(const CollectArgs& a) {
  RunConfig cfg = resolve_config(a.c);
  if (a.ratio) cfg.data.col_ratio = *a.ratio;
  if (a.transitions) cfg.data.transitions = *a.transitions;
  cfg.data.worlds = {a.world};
  cfg.expert.seed = a.c.seed || std::getenv("FANAV_SEED") ? cfg.seed : cfg.expert.seed;
  cfg.validate();
  RunManifest m = start_manifest(cfg);
  m.inputs.push_back({a.world, file_digest(a.world)});
  const fs::path out(a.out);
  const fs::path manifest_dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  write_manifest(manifest_dir, m);

  const World world = load_world(a.world);
  BuildStats stats;
  const OfflineDataset ds = collect_dataset(cfg, {&world}, a.episodes, a.mode, &stats);
  save_dataset(out, ds);
  std::printf("exp=%zu col=%zu collision_fraction=%.4f\n", ds.exp.size(), ds.col.size(),
              ds.collision_fraction());
  m.outputs.push_back(out.string());
  finish_manifest(manifest_dir, m);
  return 0;
}

int run_dataset_inspect(const std::string& path) {
  const OfflineDataset ds = load_dataset(path);
  const double total = static_cast<double>(ds.size());
  std::printf("beam_count      %d\n", ds.meta.beam_count);
  std::printf("feature_dim     %d\n", ds.feature_dim());
  std::printf("exp             %zu\n", ds.exp.size());
  std::printf("col             %zu\n", ds.col.size());
  std::printf("ratio           %.2f:%.2f\n", total > 0 ? 10.0 * static_cast<double>(ds.exp.size()) / total : 0.0,
              total > 0 ? 10.0 * static_cast<double>(ds.col.size()) / total : 0.0);
  std::printf("d_norm          %.6f\n", ds.meta.d_norm);
  std::printf("config_digest   %s\n", hex(ds.meta.config_digest).c_str());
  std::printf("generation:\n%s", ds.meta.generation.c_str());
  return 0;
}

int run_checkpoint_inspect(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  for (const auto& [k, v] : ck.meta) {
    if (k == "config") continue;
    std::printf("%-16s %s\n", k.c_str(), v.c_str());
  }
  for (const auto& n : ck.nets) {
    std::printf("net %-12s widths", n.name.c_str());
    for (int w : n.layout.widths()) std::printf(" %d", w);
    std::printf("  params %zu%s\n", n.params.size(), n.has_adam ? "  +adam" : "");
  }
  std::printf("digest           %s\n", hex(checkpoint_digest(ck)).c_str());
  return 0;
}

// ---------------------------------------------------------------------------

TrainOutput train_into(const OfflineDataset& ds, const RunConfig& cfg, const fs::path& dir,
                       const std::vector<std::pair<std::string, std::uint64_t>>& inputs) {
  RunManifest m = start_manifest(cfg);
  m.inputs = inputs;
  write_manifest(dir, m);
  write_text(dir / "config.echo", cfg.echo());
  const std::string label = to_string(cfg.train.method);
  auto out = train(ds, cfg.train, dir, [&](const EpochRecord& e) {
    std::fprintf(stderr, "[%s seed=%llu] step %d  V %.4f  Q %.4f  pi %.4f  (%.0fs)\n", label.c_str(),
                 static_cast<unsigned long long>(cfg.train.seed), e.step, e.loss_v, e.loss_q,
                 e.loss_pi, e.seconds);
  });
  m.outputs = {(dir / "report.csv").string(), (dir / "config.echo").string(),
               (dir / "final.ckpt").string()};
  finish_manifest(dir, m);
  return out;
}

struct TrainArgs {
  Common c;
  std::string method;
  std::string dataset;
  std::string out_dir;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg = resolve_config(a.c);
  if (!a.method.empty()) cfg.train.method = parse_method(a.method);
  if (a.c.seed || std::getenv("FANAV_SEED")) cfg.train.seed = cfg.seed;
  cfg.validate();
  const OfflineDataset ds = load_dataset(a.dataset);
  train_into(ds, cfg, a.out_dir, {{a.dataset, file_digest(a.dataset)}});
  return 0;
}

// ---------------------------------------------------------------------------

EvalResult eval_into(const ControllerFactory& factory, const std::string& method,
                     std::shared_ptr<const World> world, const TaskSuite& suite, const RunConfig& cfg,
                     std::uint64_t eval_seed, const fs::path& dir, bool export_traj,
                     const std::vector<std::pair<std::string, std::uint64_t>>& inputs) {
  RunManifest m = start_manifest(cfg);
  m.seed = eval_seed;
  m.inputs = inputs;
  write_manifest(dir, m);
  EvalConfig ec;
  ec.n_trials = cfg.eval.trials;
  ec.jitter_pos = cfg.eval.jitter_pos;
  ec.jitter_heading = cfg.eval.jitter_heading;
  ec.threads = cfg.eval.threads;
  ec.seed = eval_seed;
  const EvalResult r = evaluate_suite(factory, world, cfg.robot, suite, ec, method);
  write_text(dir / "eval.json", result_to_json(r));
  m.outputs.push_back((dir / "eval.json").string());
  if (export_traj) {
    export_trajectories(r, *world, dir / "trajectories");
    m.outputs.push_back((dir / "trajectories").string());
  }
  finish_manifest(dir, m);
  return r;
}

TaskSuite suite_for(const fs::path& path, const World& world, const RunConfig& cfg,
                    std::uint64_t seed) {
  if (fs::exists(path)) {
    TaskSuite s = load_suite(path);
    if (!s.world_name.empty() && s.world_name != world.name()) {
      throw ProtocolError("suite " + path.string() + " belongs to world '" + s.world_name +
                          "', not '" + world.name() + "'");
    }
    return s;
  }
  TaskSuite s = make_suite(world, cfg.robot, cfg.episode, cfg.eval.tasks, cfg.expert.inflation, seed);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_suite(path, s);
  return s;
}

struct EvalArgs {
  Common c;
  std::string checkpoint;
  std::string world;
  std::string suite;
  std::optional<int> trials;
  std::string out_dir;
  std::string controller = "policy";
  std::string method;
};

int run_eval(const EvalArgs& a) {
  RunConfig cfg = resolve_config(a.c);
  if (a.trials) cfg.eval.trials = *a.trials;
  cfg.validate();
  auto world = std::make_shared<const World>(load_world(a.world));
  const TaskSuite suite = suite_for(a.suite, *world, cfg, derive_seed(cfg.seed, tag("suite")));
  std::vector<std::pair<std::string, std::uint64_t>> inputs = {
      {a.world, file_digest(a.world)}, {a.suite, file_digest(a.suite)}};

  ControllerFactory factory;
  std::string method = a.method;
  if (a.controller == "policy") {
    if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required for the policy controller");
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    factory = policy_factory(ck, cfg.robot);
    if (method.empty()) method = ck.meta_at("method");
    inputs.push_back({a.checkpoint, file_digest(a.checkpoint)});
  } else if (a.controller == "expert") {
    factory = [world, &cfg] { return std::make_unique<ExpertController>(world, cfg.robot, cfg.expert); };
    if (method.empty()) method = "expert";
  } else if (a.controller == "zero") {
    factory = [] { return std::make_unique<ConstantController>(Action{0.0, 0.0}); };
    if (method.empty()) method = "zero";
  } else {
    throw ConfigError("unknown controller '" + a.controller + "' (expected policy|expert|zero)");
  }
  const EvalResult r = eval_into(factory, method, world, suite, cfg, derive_seed(cfg.seed, tag("eval")),
                                 a.out_dir, true, inputs);
  std::printf("%s on %s: SR %.2f +- %.2f  CR %.2f +- %.2f  TR %.2f +- %.2f\n", method.c_str(),
              r.world_name.c_str(), r.mean.sr, r.stdev.sr, r.mean.cr, r.stdev.cr, r.mean.tr,
              r.stdev.tr);
  return 0;
}

// ---------------------------------------------------------------------------

std::vector<EvalResult> gather_results(const std::vector<std::string>& dirs) {
  std::vector<fs::path> files;
  for (const auto& d : dirs) {
    if (fs::is_regular_file(d)) {
      files.emplace_back(d);
      continue;
    }
    if (!fs::is_directory(d)) throw IoError("no such result directory: " + d);
    for (const auto& e : fs::recursive_directory_iterator(d)) {
      if (e.is_regular_file() && e.path().filename() == "eval.json") files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no eval.json found under the given result directories");
  // Several seeds of one (method, world) are pooled into one set of trials.
  std::map<std::pair<std::string, std::string>, std::vector<EvalResult>> groups;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& f : files) {
    std::ifstream in(f);
    std::stringstream ss;
    ss << in.rdbuf();
    EvalResult r = result_from_json(ss.str());
    const auto key = std::make_pair(r.method, r.world_name);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(std::move(r));
  }
  std::vector<EvalResult> out;
  for (const auto& k : order) out.push_back(pool_trials(groups[k]));
  return out;
}

void write_comparison(const ComparisonTable& t, const fs::path& dir, const std::string& stem) {
  write_text(dir / (stem + ".csv"), t.csv());
  write_text(dir / (stem + ".txt"), t.text());
}

struct CompareArgs {
  std::vector<std::string> results;
  std::string out_dir;
};

int run_compare(const CompareArgs& a) {
  const auto results = gather_results(a.results);
  const ComparisonTable t = compare(results);
  std::fputs(t.text().c_str(), stdout);
  if (!a.out_dir.empty()) {
    RunManifest m;
    m.command_line = g_argv;
    m.started = utc_timestamp();
    write_manifest(a.out_dir, m);
    write_comparison(t, a.out_dir, "comparison");
    m.outputs = {(fs::path(a.out_dir) / "comparison.csv").string(),
                 (fs::path(a.out_dir) / "comparison.txt").string()};
    finish_manifest(a.out_dir, m);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct PipelineArgs {
  Common c;
  std::string out_dir;
};

int run_pipeline(const PipelineArgs& a) {
  RunConfig cfg = resolve_config(a.c);
  const fs::path out(a.out_dir);
  RunManifest m = start_manifest(cfg);
  if (!a.c.config.empty()) m.inputs.push_back({a.c.config, file_digest(a.c.config)});
  write_manifest(out, m);
  write_text(out / "config.echo", cfg.echo());

  // data
  RunConfig data_cfg = cfg;
  data_cfg.expert.seed = derive_seed(cfg.seed, tag("collect"));
  std::vector<World> data_worlds;
  RunManifest dm = start_manifest(data_cfg);
  for (const auto& p : cfg.data.worlds.empty() ? cfg.worlds : cfg.data.worlds) {
    const fs::path wp = cfg.resolve(p);
    data_worlds.push_back(load_world(wp));
    dm.inputs.push_back({wp.string(), file_digest(wp)});
  }
  std::vector<const World*> data_world_ptrs;
  for (const auto& w : data_worlds) data_world_ptrs.push_back(&w);
  const fs::path ds_path = out / "data" / "dataset.bin";
  write_manifest(ds_path.parent_path(), dm);
  BuildStats stats;
  const OfflineDataset ds = collect_dataset(data_cfg, data_world_ptrs, std::nullopt, "", &stats);
  save_dataset(ds_path, ds);
  dm.outputs.push_back(ds_path.string());
  finish_manifest(ds_path.parent_path(), dm);
  std::fprintf(stderr, "dataset: exp=%zu col=%zu (%d clean, %d perturbed episodes)\n", ds.exp.size(),
               ds.col.size(), stats.clean_episodes, stats.perturbed_episodes);

  // worlds and suites
  std::vector<std::shared_ptr<const World>> worlds;
  std::vector<TaskSuite> suites;
  for (std::size_t w = 0; w < cfg.worlds.size(); ++w) {
    const fs::path wp = cfg.resolve(cfg.worlds[w]);
    worlds.push_back(std::make_shared<const World>(load_world(wp)));
    m.inputs.push_back({wp.string(), file_digest(wp)});
    suites.push_back(suite_for(out / "suites" / (worlds.back()->name() + ".suite"), *worlds.back(),
                               cfg, derive_seed(cfg.seed, tag("suite"), w)));
  }
  const std::uint64_t eval_seed = derive_seed(cfg.seed, tag("eval"));

  std::vector<EvalResult> all;
  std::vector<std::vector<EvalResult>> per_seed(static_cast<std::size_t>(cfg.n_seeds));
  for (int s = 0; s < cfg.n_seeds; ++s) {
    for (const auto& name : cfg.methods) {
      RunConfig run_cfg = cfg;
      run_cfg.train.method = parse_method(name);
      run_cfg.train.seed = derive_seed(cfg.seed, tag("train"), static_cast<std::uint64_t>(s));
      const fs::path run_dir = out / "runs" / name / ("seed" + std::to_string(s));
      const auto trained = train_into(ds, run_cfg, run_dir, {{ds_path.string(), file_digest(ds_path)}});
      const auto factory = policy_factory(trained.final_checkpoint, cfg.robot);
      for (std::size_t w = 0; w < worlds.size(); ++w) {
        const fs::path eval_dir = run_dir / "eval" / worlds[w]->name();
        EvalResult r = eval_into(factory, name, worlds[w], suites[w], run_cfg, eval_seed, eval_dir,
                                 s == 0, {{(run_dir / "final.ckpt").string(), file_digest(run_dir / "final.ckpt")}});
        std::fprintf(stderr, "  %s seed%d %s: SR %.1f CR %.1f TR %.1f\n", name.c_str(), s,
                     r.world_name.c_str(), r.mean.sr, r.mean.cr, r.mean.tr);
        per_seed[static_cast<std::size_t>(s)].push_back(r);
        all.push_back(std::move(r));
      }
    }
  }

  std::map<std::pair<std::string, std::string>, std::vector<EvalResult>> groups;
  std::vector<std::pair<std::string, std::string>> order;
  for (auto& r : all) {
    const auto key = std::make_pair(r.method, r.world_name);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(r);
  }
  std::vector<EvalResult> pooled;
  for (const auto& k : order) pooled.push_back(pool_trials(groups[k]));
  const ComparisonTable table = compare(pooled);
  write_comparison(table, out, "comparison");
  for (int s = 0; s < cfg.n_seeds; ++s) {
    write_comparison(compare(per_seed[static_cast<std::size_t>(s)]), out / "runs",
                     "comparison_seed" + std::to_string(s));
  }
  std::fputs(table.text().c_str(), stdout);
  m.outputs = {(out / "comparison.csv").string(), (out / "comparison.txt").string(),
               ds_path.string(), (out / "runs").string()};
  finish_manifest(out, m);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  g_argv.assign(argv, argv + argc);
  CLI::App app{"Failure-aware offline RL for mapless navigation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  GenWorldArgs gw;
  auto* gen = app.add_subcommand("gen-world", "generate a procedural world file");
  gen->add_option("--name", gw.gen.name, "world name")->capture_default_str();
  gen->add_option("--width", gw.gen.width, "room width (m)")->capture_default_str();
  gen->add_option("--height", gw.gen.height, "room height (m)")->capture_default_str();
  gen->add_option("--density", gw.gen.density, "obstacle area fraction in [0, 1]")->capture_default_str();
  gen->add_option("--seed", gw.seed, "generation seed (falls back to FANAV_SEED)");
  gen->add_option("--out", gw.out, "output world file")->required();

  CollectArgs ca;
  auto* col = app.add_subcommand("collect", "collect an offline dataset with the scripted expert");
  add_common(col, ca.c);
  col->add_option("--world", ca.world, "world file")->required()->check(CLI::ExistingFile);
  col->add_option("--episodes", ca.episodes, "collect exactly N episodes in --mode instead of a transition quota");
  col->add_option("--mode", ca.mode, "clean|perturbed (with --episodes)")->capture_default_str();
  col->add_option("--target-col-ratio", ca.ratio, "collision fraction of the transition quota");
  col->add_option("--transitions", ca.transitions, "transition quota");
  col->add_option("--out", ca.out, "output dataset path")->required();

  std::string inspect_path;
  auto* dsc = app.add_subcommand("dataset", "dataset utilities");
  dsc->require_subcommand(1);
  auto* dsi = dsc->add_subcommand("inspect", "print partition counts and the realized ratio");
  dsi->add_option("path", inspect_path, "dataset file")->required()->check(CLI::ExistingFile);

  std::string ck_path;
  auto* ckc = app.add_subcommand("checkpoint", "checkpoint utilities");
  ckc->require_subcommand(1);
  auto* cki = ckc->add_subcommand("inspect", "print checkpoint metadata and network shapes");
  cki->add_option("path", ck_path, "checkpoint file")->required()->check(CLI::ExistingFile);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train one method on a dataset");
  add_common(tr, ta.c);
  tr->add_option("--method", ta.method, "bc|iql_so|iql_dm|iql_ca");
  tr->add_option("--dataset", ta.dataset, "dataset file")->required()->check(CLI::ExistingFile);
  tr->add_option("--out-dir", ta.out_dir, "run directory")->required();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate a controller on a task suite");
  add_common(ev, ea.c);
  ev->add_option("--checkpoint", ea.checkpoint, "policy checkpoint");
  ev->add_option("--world", ea.world, "world file")->required()->check(CLI::ExistingFile);
  ev->add_option("--suite", ea.suite, "suite file (created from the world if missing)")->required();
  ev->add_option("--trials", ea.trials, "number of trials");
  ev->add_option("--out-dir", ea.out_dir, "result directory")->required();
  ev->add_option("--controller", ea.controller, "policy|expert|zero")->capture_default_str();
  ev->add_option("--method", ea.method, "label stored in the result");

  CompareArgs cmp;
  auto* cp = app.add_subcommand("compare", "tabulate eval results by method and world");
  cp->add_option("--results", cmp.results, "result directories or eval.json files")->required();
  cp->add_option("--out-dir", cmp.out_dir, "where to write comparison.csv/.txt");

  PipelineArgs pa;
  auto* pl = app.add_subcommand("pipeline", "collect, train all methods, evaluate and compare");
  add_common(pl, pa.c);
  pl->add_option("--out-dir", pa.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageExit;
  }

  try {
    if (*gen) return run_gen_world(gw);
    if (*col) return run_collect(ca);
    if (*dsi) return run_dataset_inspect(inspect_path);
    if (*cki) return run_checkpoint_inspect(ck_path);
    if (*tr) return run_train(ta);
    if (*ev) return run_eval(ea);
    if (*cp) return run_compare(cmp);
    if (*pl) return run_pipeline(pa);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kUsageExit;
}
