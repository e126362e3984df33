#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "fanav/data.hpp"
#include "fanav/sim.hpp"

namespace fanav {

using Path = std::vector<Point>;

double path_length(const Path& path);

constexpr double kGridResolution = 0.1;

/// 8-connected A* on a 0.1 m occupancy grid whose cells are blocked when their
/// centre is closer than `robot_radius + inflation` to an obstacle or wall,
/// followed by greedy line-of-sight shortcutting.
/// Throws InvalidPoseError when start/goal violate the clearance and
/// NoPathError when the goal is unreachable.
Path plan_path(const World& world, Point start, Point goal, double robot_radius, double inflation);

struct ExpertConfig {
  double lookahead = 0.6;
  double gain_heading = 2.0;
  double speed_scale = 1.0;
  double noise_std_v = 0.5;
  double noise_std_omega = 3.0;
  double noise_prob = 0.8;
  double noise_corr = 0.0;  // AR(1) coefficient of the perturbation between steps
  double inflation = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Pure pursuit toward the point `lookahead` metres past the closest
/// projection of the robot onto `path`.
Action expert_action(const Pose& pose, const Path& path, const ExpertConfig& cfg,
                     const RobotSpec& spec);

enum class CollectMode { clean, perturbed };

CollectMode parse_collect_mode(const std::string& s);

struct Task {
  Pose start;
  Point goal;
};

constexpr double kMinTaskSeparation = 3.0;
constexpr int kMaxTaskRejections = 10000;

/// Uniform collision-free start/goal pair at least 3 m apart with a plannable
/// path between them. Throws ConfigError after 10^4 rejected samples.
Task sample_task(const World& world, const RobotSpec& spec, double inflation, std::mt19937_64& rng);

/// Runs one expert episode. Episode `index` draws its task and its noise from
/// streams derived from (cfg.seed, index).
Trajectory run_expert_episode(const World& world, const RobotSpec& spec, const EpisodeConfig& ep,
                              const ExpertConfig& cfg, CollectMode mode, std::uint64_t index);

/// Episodes [first, first + n) in the given mode. Timeouts are included here
/// and dropped when building datasets.
std::vector<Trajectory> collect(const World& world, const RobotSpec& spec,
                                const EpisodeConfig& ep, const ExpertConfig& cfg, int n_episodes,
                                CollectMode mode, std::uint64_t first = 0);

/// Routes trajectories by outcome: success -> exp, collision -> col, timeout
/// dropped.
OfflineDataset partition(const std::vector<Trajectory>& trajs, const StateEncoder& enc);

struct BuildStats {
  int clean_episodes = 0;
  int perturbed_episodes = 0;
  int timeouts = 0;
  int perturbed_successes = 0;
  int perturbed_collisions = 0;
  int clean_collisions = 0;
};

/// Mixes clean and perturbed episodes until the success partition holds
/// round((1 - col_ratio) * n) transitions and the collision partition the
/// rest. The last trajectory added to a partition is trimmed from the front so
/// terminal transitions always survive.
OfflineDataset build_dataset(const World& world, const RobotSpec& spec, const EpisodeConfig& ep,
                             const ExpertConfig& cfg, std::size_t n_transitions, double col_ratio,
                             BuildStats* stats = nullptr);

/// Splits the quota evenly over several worlds. World w collects with seed
/// derive_seed(cfg.seed, tag("world"), w); all features share d_norm = the
/// largest world diagonal.
OfflineDataset build_dataset(const std::vector<const World*>& worlds, const RobotSpec& spec,
                             const EpisodeConfig& ep, const ExpertConfig& cfg,
                             std::size_t n_transitions, double col_ratio,
                             BuildStats* stats = nullptr);

}  // namespace fanav
