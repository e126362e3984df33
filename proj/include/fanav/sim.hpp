#pragma once

#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace fanav {

constexpr double kPi = std::numbers::pi;

/// Wraps an angle into (-pi, pi].
double normalize_angle(double a);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

double distance(Point a, Point b);

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;

  Point position() const { return {x, y}; }
};

/// Axis-aligned rectangle given by its lower-left corner and extent.
struct RectShape {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
};

struct CircleShape {
  double cx = 0.0;
  double cy = 0.0;
  double r = 0.0;
};

using Shape = std::variant<RectShape, CircleShape>;

/// Distance from a point to a shape; 0 when the point is inside.
double point_shape_distance(Point p, const Shape& s);
/// Distance from segment [a, b] to a shape; 0 when they intersect.
double segment_shape_distance(Point a, Point b, const Shape& s);

/// Walled rectangular room [0, width] x [0, height] with static obstacles.
class World {
 public:
  World(std::string name, double width, double height, std::vector<Shape> obstacles = {});

  const std::string& name() const { return name_; }
  double width() const { return width_; }
  double height() const { return height_; }
  double diagonal() const;
  const std::vector<Shape>& obstacles() const { return obstacles_; }

  bool inside(Point p) const;
  /// Distance to the nearest obstacle or wall (0 inside an obstacle or outside).
  double clearance(Point p) const;
  /// True when a disk of `radius` centred anywhere on [a, b] touches an
  /// obstacle or crosses a wall.
  bool swept_collides(Point a, Point b, double radius) const;
  bool disk_collides(Point p, double radius) const { return swept_collides(p, p, radius); }

 private:
  std::string name_;
  double width_;
  double height_;
  std::vector<Shape> obstacles_;
};

struct RobotSpec {
  double radius = 0.2;
  double v_max = 0.5;
  double omega_max = kPi / 2.0;
  double lidar_fov = 1.5 * kPi;
  int lidar_beam_count = 108;
  double lidar_range_max = 30.0;
  double control_dt = 0.2;

  void validate() const;
};

struct NavState {
  std::vector<double> scan;
  double goal_dist = 0.0;
  double goal_bearing = 0.0;
  double lin_vel = 0.0;
  double ang_vel = 0.0;
};

struct Action {
  double v_cmd = 0.0;
  double omega_cmd = 0.0;
};

Action clamp_action(Action a, const RobotSpec& spec);

struct EpisodeConfig {
  double gamma = 0.99;
  int t_max = 200;
  double r_success = 20.0;
  double r_collision = -20.0;
  double c1 = 2.0;
  double goal_radius = 0.3;

  void validate() const;
};

enum class Terminal : std::uint8_t { none = 0, success = 1, collision = 2, timeout = 3 };

const char* to_string(Terminal t);

struct StepOutcome {
  NavState next_state;
  double reward = 0.0;
  Terminal terminal = Terminal::none;
};

struct EnvStep {
  StepOutcome outcome;
  Pose pose;
};

/// LiDAR ranges from `origin`. Beam i points at heading - fov/2 + i*fov/(n-1).
std::vector<double> raycast(const World& world, const Pose& origin, const RobotSpec& spec);

/// Exact unicycle integration over `dt`.
Pose step_kinematics(const Pose& pose, const Action& action, double dt);

struct RelativeGoal {
  double dist = 0.0;
  double bearing = 0.0;
};

RelativeGoal relative_goal(const Pose& pose, Point goal);

NavState observe(const World& world, const RobotSpec& spec, const Pose& pose, Point goal,
                 const Action& velocity);

/// One control step: clamp, integrate, then classify success / collision /
/// timeout and compute the reward.
EnvStep step_env(const World& world, const RobotSpec& spec, const EpisodeConfig& cfg,
                 const Pose& pose, Point goal, const Action& action, int t);

/// R_t = sum_{k>=t} gamma^{k-t} r_k over the given rewards, for every t.
std::vector<double> discounted_returns(std::span<const double> rewards, double gamma);

/// Single-owner episode engine around step_env.
class NavEnv {
 public:
  NavEnv(std::shared_ptr<const World> world, RobotSpec spec, EpisodeConfig cfg);

  NavState reset(const Pose& start, Point goal);
  StepOutcome step(const Action& action);

  const Pose& pose() const { return pose_; }
  Point goal() const { return goal_; }
  int t() const { return t_; }
  Terminal terminal() const { return terminal_; }
  bool done() const { return terminal_ != Terminal::none; }
  const World& world() const { return *world_; }
  const RobotSpec& spec() const { return spec_; }
  const EpisodeConfig& config() const { return cfg_; }

 private:
  std::shared_ptr<const World> world_;
  RobotSpec spec_;
  EpisodeConfig cfg_;
  Pose pose_;
  Point goal_;
  int t_ = 0;
  bool started_ = false;
  Terminal terminal_ = Terminal::none;
};

}  // namespace fanav
