#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fanav/expert.hpp"
#include "fanav/nn.hpp"
#include "fanav/sim.hpp"

namespace fanav {

/// Fixed list of point-to-point tasks in one world, persisted so every method
/// is evaluated on identical tasks.
struct TaskSuite {
  std::string world_name;
  std::vector<Task> tasks;
  EpisodeConfig episode;
  double margin = 0.0;  // obstacle clearance beyond the robot radius, kept by jittered starts

  std::uint64_t digest() const;
};

TaskSuite make_suite(const World& world, const RobotSpec& spec, const EpisodeConfig& episode,
                     int n_tasks, double inflation, std::uint64_t seed);
std::string format_suite(const TaskSuite& suite);
TaskSuite parse_suite(const std::string& text);
void save_suite(const std::filesystem::path& path, const TaskSuite& suite);
TaskSuite load_suite(const std::filesystem::path& path);

class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset(const Pose& /*start*/, Point /*goal*/) {}
  virtual Action act(const NavState& state, const Pose& pose) = 0;
};

using ControllerFactory = std::function<std::unique_ptr<Controller>()>;

/// Deterministic action of a trained policy: scale * tanh(mean).
class PolicyController : public Controller {
 public:
  PolicyController(std::shared_ptr<const GaussianPolicy<Real>> policy, StateEncoder encoder);
  Action act(const NavState& state, const Pose& pose) override;

 private:
  std::shared_ptr<const GaussianPolicy<Real>> policy_;
  StateEncoder encoder_;
  Matrix<Real> x_;
};

/// Factory over a checkpoint; throws ShapeError when the checkpoint's beam
/// count differs from the robot's.
ControllerFactory policy_factory(const Checkpoint& ck, const RobotSpec& spec);

/// Scripted expert (planner + pure pursuit) behind the Controller interface.
class ExpertController : public Controller {
 public:
  ExpertController(std::shared_ptr<const World> world, RobotSpec spec, ExpertConfig cfg);
  void reset(const Pose& start, Point goal) override;
  Action act(const NavState& state, const Pose& pose) override;

 private:
  std::shared_ptr<const World> world_;
  RobotSpec spec_;
  ExpertConfig cfg_;
  Path path_;
};

class ConstantController : public Controller {
 public:
  explicit ConstantController(Action a) : a_(a) {}
  Action act(const NavState&, const Pose&) override { return a_; }

 private:
  Action a_;
};

struct Rollout {
  Terminal outcome = Terminal::none;
  std::vector<Pose> poses;      // including the start pose
  std::vector<Action> actions;  // executed (clamped) commands, one per step
};

Rollout rollout(Controller& controller, std::shared_ptr<const World> world, const RobotSpec& spec,
                const EpisodeConfig& cfg, const Task& task);

struct Metrics {
  double sr = 0.0;
  double cr = 0.0;
  double tr = 0.0;
};

Metrics metrics_from_outcomes(const std::vector<Terminal>& outcomes);

struct TrialResult {
  std::vector<Task> tasks;  // after start jitter
  std::vector<Rollout> rollouts;
  Metrics metrics;
};

struct EvalResult {
  std::string method;
  std::string world_name;
  std::uint64_t suite_digest = 0;
  std::vector<TrialResult> trials;
  Metrics mean;
  Metrics stdev;  // population std over trials
};

struct EvalConfig {
  int n_trials = 3;
  double jitter_pos = 0.1;
  double jitter_heading = 0.1;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency
};

/// Per-trial SR/CR/TR, then mean and population std over trials. Starts are
/// jittered per (trial, task); jittered poses closer to an obstacle than
/// radius + suite.margin are resampled, falling back to the nominal start
/// after 100 tries.
EvalResult evaluate_suite(const ControllerFactory& factory, std::shared_ptr<const World> world,
                          const RobotSpec& spec, const TaskSuite& suite, const EvalConfig& cfg,
                          const std::string& method = "");

/// One CSV per (trial, task) and overlay.svg for the first trial.
void export_trajectories(const EvalResult& result, const World& world,
                         const std::filesystem::path& dir);
std::string render_svg(const EvalResult& result, const World& world, int trial = 0);

/// JSON form of a result without trajectories (outcomes only).
std::string result_to_json(const EvalResult& r);
EvalResult result_from_json(const std::string& text);

/// Concatenates the trials of several results for one method on one suite,
/// e.g. one result per training seed.
EvalResult pool_trials(const std::vector<EvalResult>& parts);

struct ComparisonCell {
  Metrics mean;
  Metrics stdev;
};

struct ComparisonTable {
  std::vector<std::string> methods;
  std::vector<std::string> worlds;
  // cells[m][w]; the last column (index worlds.size()) is the overall mean.
  std::vector<std::vector<ComparisonCell>> cells;

  const ComparisonCell& at(const std::string& method, const std::string& world) const;
  const ComparisonCell& overall(const std::string& method) const;
  std::string csv() const;
  std::string text() const;
};

/// Aligns results by method and world. Overall = per-trial mean across worlds,
/// then mean and std over trials. Throws ProtocolError when two results for
/// the same world used different suites or a method lacks a world.
ComparisonTable compare(const std::vector<EvalResult>& results);

}  // namespace fanav
