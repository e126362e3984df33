#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fanav/error.hpp"
#include "fanav/eval.hpp"
#include "fanav/offrl.hpp"
#include "fanav/world_io.hpp"
#include "oracles.hpp"

using namespace fanav;

namespace {

EvalResult fake_result(const std::string& method, const std::string& world, std::uint64_t digest,
                       const std::vector<std::vector<Terminal>>& trials) {
  EvalResult r;
  r.method = method;
  r.world_name = world;
  r.suite_digest = digest;
  for (const auto& outs : trials) {
    TrialResult t;
    for (Terminal o : outs) {
      Rollout ro;
      ro.outcome = o;
      t.rollouts.push_back(ro);
    }
    t.metrics = metrics_from_outcomes(outs);
    r.trials.push_back(std::move(t));
  }
  return pool_trials({r});
}

std::vector<Terminal> outcomes(int s, int c, int t) {
  std::vector<Terminal> v;
  v.insert(v.end(), static_cast<std::size_t>(s), Terminal::success);
  v.insert(v.end(), static_cast<std::size_t>(c), Terminal::collision);
  v.insert(v.end(), static_cast<std::size_t>(t), Terminal::timeout);
  return v;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream o;
  o << in.rdbuf();
  return o.str();
}

std::shared_ptr<const World> bundled(const char* name) {
  return std::make_shared<const World>(
      load_world(std::filesystem::path(FANAV_SOURCE_DIR) / "worlds" / (std::string(name) + ".world")));
}

ControllerFactory zero_factory() {
  return [] { return std::make_unique<ConstantController>(Action{0.0, 0.0}); };
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("zero-velocity controller times out at exactly t_max") {
    const auto room = std::make_shared<const World>("room", 10.0, 10.0);
    ConstantController zero({0.0, 0.0});
    const auto r = rollout(zero, room, RobotSpec{}, EpisodeConfig{}, {{2, 2, 0}, {8, 8}});
    CHECK(r.outcome == Terminal::timeout);
    CHECK(r.actions.size() == 200);
    CHECK(r.poses.size() == 201);
  }

  TEST_CASE("expert controller succeeds in free space") {
    const auto room = std::make_shared<const World>("room", 10.0, 10.0);
    ExpertController ex(room, RobotSpec{}, ExpertConfig{});
    const auto r = rollout(ex, room, RobotSpec{}, EpisodeConfig{}, {{1, 1, 2.5}, {8, 9}});
    CHECK(r.outcome == Terminal::success);
  }

  TEST_CASE("driving straight at a wall collides before t_max") {
    const auto room = std::make_shared<const World>("room", 10.0, 10.0);
    ConstantController ahead({0.5, 0.0});
    const auto r = rollout(ahead, room, RobotSpec{}, EpisodeConfig{}, {{5, 5, 0}, {5, 9}});
    CHECK(r.outcome == Terminal::collision);
    CHECK(r.actions.size() < 200);
  }

  TEST_CASE("metric counting") {
    const auto m = metrics_from_outcomes(outcomes(47, 2, 1));
    CHECK(m.sr == doctest::Approx(94.0));
    CHECK(m.cr == doctest::Approx(4.0));
    CHECK(m.tr == doctest::Approx(2.0));
    CHECK(m.sr + m.cr + m.tr == doctest::Approx(100.0));
    CHECK_THROWS_AS(metrics_from_outcomes({}), ConfigError);
  }

  TEST_CASE("mean and population std over trials") {
    const auto r = fake_result("m", "w", 1, {outcomes(8, 2, 0), outcomes(6, 4, 0)});
    CHECK(r.mean.sr == doctest::Approx(70.0));
    CHECK(r.stdev.sr == doctest::Approx(10.0));
    CHECK(r.stdev.tr == 0.0);
  }

  TEST_CASE("overall is the mean across worlds") {
    const auto a = fake_result("iql_ca", "senv1", 1, {outcomes(47, 3, 0)});
    const auto b = fake_result("iql_ca", "senv2", 2, {outcomes(44, 5, 1)});
    const auto c = fake_result("iql_ca", "senv3", 3, {outcomes(37, 13, 0)});
    const auto t = compare({a, b, c});
    CHECK(t.overall("iql_ca").mean.sr == doctest::Approx(85.3333).epsilon(1e-4));
    CHECK(t.at("iql_ca", "senv2").mean.sr == doctest::Approx(88.0));
    REQUIRE(t.methods.size() == 1);
    const auto csv = t.csv();
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 4);
    CHECK(csv.find("iql_ca,overall,85.33,") != std::string::npos);
    CHECK(t.text().find("85.33") != std::string::npos);
    for (const auto& cell : t.cells[0]) {
      CHECK(cell.mean.sr + cell.mean.cr + cell.mean.tr == doctest::Approx(100.0));
    }
  }

  TEST_CASE("comparison protocol errors") {
    const auto a = fake_result("bc", "senv1", 1, {outcomes(5, 5, 0)});
    const auto b = fake_result("iql_ca", "senv1", 2, {outcomes(6, 4, 0)});
    CHECK_THROWS_AS(compare({a, b}), ProtocolError);
    CHECK_THROWS_AS(compare({a, a}), ProtocolError);
    const auto c = fake_result("iql_ca", "senv2", 3, {outcomes(6, 4, 0)});
    CHECK_THROWS_AS(compare({a, c}), ProtocolError);  // each method lacks a world
    CHECK_THROWS_AS(pool_trials({a, b}), ProtocolError);
    auto a2 = a;
    a2.suite_digest = 9;
    CHECK_THROWS_AS(pool_trials({a, a2}), ProtocolError);
    CHECK(pool_trials({a, a}).trials.size() == 2);
  }

  TEST_CASE("empty suite is a configuration error") {
    const auto room = std::make_shared<const World>("room", 10.0, 10.0);
    TaskSuite s;
    s.world_name = "room";
    CHECK_THROWS_AS(evaluate_suite(zero_factory(), room, RobotSpec{}, s, EvalConfig{}), ConfigError);
  }

  TEST_CASE("suite files round-trip and reject bad lines") {
    const auto w = bundled("senv1");
    const auto s = make_suite(*w, RobotSpec{}, EpisodeConfig{}, 10, 0.1, 4);
    CHECK(s.tasks.size() == 10);
    for (const auto& t : s.tasks) {
      CHECK(w->clearance(t.start.position()) >= RobotSpec{}.radius);
      CHECK(w->clearance(t.goal) >= RobotSpec{}.radius);
    }
    const auto back = parse_suite(format_suite(s));
    CHECK(format_suite(back) == format_suite(s));
    CHECK(back.digest() == s.digest());
    CHECK(make_suite(*w, RobotSpec{}, EpisodeConfig{}, 10, 0.1, 4).digest() == s.digest());
    try {
      parse_suite("world a\ntask 1 2 3\n");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }

  TEST_CASE("sanity: zero policy times out everywhere, expert is perfect on the sparse world") {
    const auto w = bundled("senv2");
    const auto suite = make_suite(*w, RobotSpec{}, EpisodeConfig{}, 10, 0.2, 1);
    EvalConfig cfg;
    cfg.n_trials = 2;
    const auto z = evaluate_suite(zero_factory(), w, RobotSpec{}, suite, cfg, "zero");
    CHECK(z.mean.tr == 100.0);
    ExpertConfig ex;
    ex.inflation = 0.2;
    const auto e = evaluate_suite([&] { return std::make_unique<ExpertController>(w, RobotSpec{}, ex); },
                                  w, RobotSpec{}, suite, cfg, "expert");
    CHECK(e.mean.sr == 100.0);
  }

  TEST_CASE("fixed suite and checkpoint give identical results; export is deterministic") {
    const auto ds = oracle::synthetic_dataset(100, 10, 108, 3);
    TrainerConfig tc;
    tc.method = Method::bc;
    tc.hidden = {16};
    tc.total_steps = 20;
    tc.batch_size = 16;
    tc.checkpoint_every = 0;
    tc.log_every = 10;
    const auto out = train(ds, tc);
    const auto w = bundled("senv3");
    const auto suite = make_suite(*w, RobotSpec{}, EpisodeConfig{}, 6, 0.1, 2);
    EvalConfig cfg;
    cfg.n_trials = 2;
    const auto f = policy_factory(out.final_checkpoint, RobotSpec{});
    const auto r1 = evaluate_suite(f, w, RobotSpec{}, suite, cfg, "bc");
    const auto r2 = evaluate_suite(f, w, RobotSpec{}, suite, cfg, "bc");
    CHECK(result_to_json(r1) == result_to_json(r2));
    const auto again = result_from_json(result_to_json(r1));
    CHECK(again.mean.sr == r1.mean.sr);
    CHECK(again.suite_digest == r1.suite_digest);

    const auto dir = std::filesystem::temp_directory_path() / "fanav_eval_export";
    std::filesystem::remove_all(dir);
    export_trajectories(r1, *w, dir / "a");
    export_trajectories(r1, *w, dir / "b");
    int files = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "a")) {
      CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
      ++files;
    }
    CHECK(files == 2 * 6 + 1);
    // row count = trajectory length + header
    const auto csv = slurp(dir / "a" / "traj_t0_k000.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') ==
          static_cast<long>(r1.trials[0].rollouts[0].poses.size()) + 1);
    // one crash marker per collision task
    const auto svg = slurp(dir / "a" / "overlay.svg");
    std::size_t crashes = 0;
    for (auto p = svg.find("<path class=\"crash\""); p != std::string::npos;
         p = svg.find("<path class=\"crash\"", p + 1)) {
      ++crashes;
    }
    std::size_t want = 0;
    for (const auto& ro : r1.trials[0].rollouts) want += ro.outcome == Terminal::collision ? 1 : 0;
    CHECK(crashes == want);
    std::filesystem::remove_all(dir);

    RobotSpec fewer;
    fewer.lidar_beam_count = 54;
    CHECK_THROWS_AS(policy_factory(out.final_checkpoint, fewer), ShapeError);
  }

  TEST_CASE("every task gets exactly one outcome") {
    const auto w = bundled("senv1");
    const auto suite = make_suite(*w, RobotSpec{}, EpisodeConfig{}, 8, 0.1, 3);
    const auto r = evaluate_suite(
        [] { return std::make_unique<ConstantController>(Action{0.3, 0.4}); }, w, RobotSpec{}, suite,
        EvalConfig{}, "arc");
    for (const auto& t : r.trials) {
      CHECK(t.rollouts.size() == 8);
      for (const auto& ro : t.rollouts) CHECK(ro.outcome != Terminal::none);
      CHECK(t.metrics.sr + t.metrics.cr + t.metrics.tr == doctest::Approx(100.0));
    }
  }
}
