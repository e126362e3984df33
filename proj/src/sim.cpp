#include "fanav/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fanav/error.hpp"

namespace fanav {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double point_segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) {
    t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
  }
  return distance(p, {a.x + t * dx, a.y + t * dy});
}

double point_rect_distance(Point p, const RectShape& r) {
  const double dx = std::max({r.x - p.x, 0.0, p.x - (r.x + r.w)});
  const double dy = std::max({r.y - p.y, 0.0, p.y - (r.y + r.h)});
  return std::hypot(dx, dy);
}

// Liang-Barsky clip of [a, b] against the rectangle.
bool segment_hits_rect(Point a, Point b, const RectShape& r) {
  double t0 = 0.0;
  double t1 = 1.0;
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x - r.x, r.x + r.w - a.x, a.y - r.y, r.y + r.h - a.y};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double t = q[i] / p[i];
    if (p[i] < 0.0) {
      t0 = std::max(t0, t);
    } else {
      t1 = std::min(t1, t);
    }
    if (t0 > t1) return false;
  }
  return true;
}

double ray_rect(Point o, double dx, double dy, const RectShape& r) {
  if (point_rect_distance(o, r) == 0.0) return 0.0;
  double tmin = -kInf;
  double tmax = kInf;
  const double lo[2] = {r.x, r.y};
  const double hi[2] = {r.x + r.w, r.y + r.h};
  const double org[2] = {o.x, o.y};
  const double dir[2] = {dx, dy};
  for (int k = 0; k < 2; ++k) {
    if (dir[k] == 0.0) {
      if (org[k] < lo[k] || org[k] > hi[k]) return kInf;
      continue;
    }
    double ta = (lo[k] - org[k]) / dir[k];
    double tb = (hi[k] - org[k]) / dir[k];
    if (ta > tb) std::swap(ta, tb);
    tmin = std::max(tmin, ta);
    tmax = std::min(tmax, tb);
  }
  if (tmax < tmin || tmax < 0.0) return kInf;
  return std::max(tmin, 0.0);
}

double ray_circle(Point o, double dx, double dy, const CircleShape& c) {
  const double fx = o.x - c.cx;
  const double fy = o.y - c.cy;
  const double cc = fx * fx + fy * fy - c.r * c.r;
  if (cc <= 0.0) return 0.0;
  const double b = fx * dx + fy * dy;
  const double disc = b * b - cc;
  if (disc < 0.0) return kInf;
  const double t = -b - std::sqrt(disc);
  return t >= 0.0 ? t : kInf;
}

bool finite_pose(const Pose& p) {
  return std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.heading);
}

}  // namespace

double normalize_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

double distance(Point a, Point b) { return std::hypot(b.x - a.x, b.y - a.y); }

double point_shape_distance(Point p, const Shape& s) {
  if (const auto* r = std::get_if<RectShape>(&s)) return point_rect_distance(p, *r);
  const auto& c = std::get<CircleShape>(s);
  return std::max(0.0, distance(p, {c.cx, c.cy}) - c.r);
}

double segment_shape_distance(Point a, Point b, const Shape& s) {
  if (const auto* r = std::get_if<RectShape>(&s)) {
    if (segment_hits_rect(a, b, *r)) return 0.0;
    // Disjoint convex sets: the minimum is attained at a vertex of one of them.
    double d = std::min(point_rect_distance(a, *r), point_rect_distance(b, *r));
    const Point corners[4] = {
        {r->x, r->y}, {r->x + r->w, r->y}, {r->x, r->y + r->h}, {r->x + r->w, r->y + r->h}};
    for (const auto& c : corners) d = std::min(d, point_segment_distance(c, a, b));
    return d;
  }
  const auto& c = std::get<CircleShape>(s);
  return std::max(0.0, point_segment_distance({c.cx, c.cy}, a, b) - c.r);
}

World::World(std::string name, double width, double height, std::vector<Shape> obstacles)
    : name_(std::move(name)), width_(width), height_(height), obstacles_(std::move(obstacles)) {
  if (!(width_ > 0.0) || !(height_ > 0.0)) {
    throw ConfigError("world bounds must be strictly positive");
  }
  const RectShape bounds{0.0, 0.0, width_, height_};
  for (std::size_t i = 0; i < obstacles_.size(); ++i) {
    const auto& s = obstacles_[i];
    bool ok = false;
    if (const auto* r = std::get_if<RectShape>(&s)) {
      ok = r->w > 0.0 && r->h > 0.0 && r->x < width_ && r->x + r->w > 0.0 && r->y < height_ &&
           r->y + r->h > 0.0;
    } else {
      const auto& c = std::get<CircleShape>(s);
      ok = c.r > 0.0 && point_rect_distance({c.cx, c.cy}, bounds) < c.r;
    }
    if (!ok) {
      throw ConfigError("obstacle " + std::to_string(i) + " does not intersect the world bounds");
    }
  }
}

double World::diagonal() const { return std::hypot(width_, height_); }

bool World::inside(Point p) const {
  return p.x >= 0.0 && p.x <= width_ && p.y >= 0.0 && p.y <= height_;
}

double World::clearance(Point p) const {
  if (!inside(p)) return 0.0;
  double d = std::min({p.x, width_ - p.x, p.y, height_ - p.y});
  for (const auto& s : obstacles_) d = std::min(d, point_shape_distance(p, s));
  return d;
}

bool World::swept_collides(Point a, Point b, double radius) const {
  // The room shrunk by the radius is convex, so checking the endpoints
  // covers the whole segment.
  for (const Point p : {a, b}) {
    if (p.x - radius < 0.0 || p.x + radius > width_ || p.y - radius < 0.0 ||
        p.y + radius > height_) {
      return true;
    }
  }
  for (const auto& s : obstacles_) {
    if (segment_shape_distance(a, b, s) < radius) return true;
  }
  return false;
}

void RobotSpec::validate() const {
  if (!(radius > 0.0)) throw ConfigError("robot radius must be > 0");
  if (!(v_max > 0.0)) throw ConfigError("v_max must be > 0");
  if (!(omega_max > 0.0)) throw ConfigError("omega_max must be > 0");
  if (!(lidar_fov > 0.0 && lidar_fov <= 2.0 * kPi + 1e-12)) {
    throw ConfigError("lidar_fov must lie in (0, 2*pi]");
  }
  if (lidar_beam_count < 1) throw ConfigError("lidar_beam_count must be positive");
  if (!(lidar_range_max > 0.0)) throw ConfigError("lidar_range_max must be > 0");
  if (!(control_dt > 0.0)) throw ConfigError("control_dt must be > 0");
}

void EpisodeConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (t_max < 1) throw ConfigError("t_max must be >= 1");
  if (!(r_success > 0.0)) throw ConfigError("r_success must be > 0");
  if (!(r_collision < 0.0)) throw ConfigError("r_collision must be < 0");
  if (!(c1 > 0.0)) throw ConfigError("c1 must be > 0");
  if (!(goal_radius > 0.0)) throw ConfigError("goal_radius must be > 0");
}

const char* to_string(Terminal t) {
  switch (t) {
    case Terminal::none: return "none";
    case Terminal::success: return "success";
    case Terminal::collision: return "collision";
    case Terminal::timeout: return "timeout";
  }
  return "?";
}

Action clamp_action(Action a, const RobotSpec& spec) {
  return {std::clamp(a.v_cmd, -spec.v_max, spec.v_max),
          std::clamp(a.omega_cmd, -spec.omega_max, spec.omega_max)};
}

std::vector<double> raycast(const World& world, const Pose& origin, const RobotSpec& spec) {
  const Point o = origin.position();
  if (!finite_pose(origin) || !world.inside(o)) {
    throw InvalidPoseError("raycast origin (" + std::to_string(origin.x) + ", " +
                           std::to_string(origin.y) + ") is outside the world bounds");
  }
  const int n = spec.lidar_beam_count;
  const double step = n > 1 ? spec.lidar_fov / static_cast<double>(n - 1) : 0.0;
  const double first = n > 1 ? origin.heading - 0.5 * spec.lidar_fov : origin.heading;
  std::vector<double> ranges(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double bearing = first + step * i;
    const double dx = std::cos(bearing);
    const double dy = std::sin(bearing);
    double best = kInf;
    if (dx > 0.0) best = std::min(best, (world.width() - o.x) / dx);
    if (dx < 0.0) best = std::min(best, -o.x / dx);
    if (dy > 0.0) best = std::min(best, (world.height() - o.y) / dy);
    if (dy < 0.0) best = std::min(best, -o.y / dy);
    for (const auto& s : world.obstacles()) {
      if (const auto* r = std::get_if<RectShape>(&s)) {
        best = std::min(best, ray_rect(o, dx, dy, *r));
      } else {
        best = std::min(best, ray_circle(o, dx, dy, std::get<CircleShape>(s)));
      }
    }
    ranges[static_cast<std::size_t>(i)] = std::clamp(best, 0.0, spec.lidar_range_max);
  }
  return ranges;
}

Pose step_kinematics(const Pose& pose, const Action& action, double dt) {
  if (!finite_pose(pose) || !std::isfinite(action.v_cmd) || !std::isfinite(action.omega_cmd) ||
      !std::isfinite(dt)) {
    throw NumericError("step_kinematics: non-finite input");
  }
  if (!(dt > 0.0)) throw ConfigError("step_kinematics: dt must be > 0");
  const double v = action.v_cmd;
  const double w = action.omega_cmd;
  const double h = pose.heading;
  if (std::abs(w) < 1e-6) {
    return {pose.x + v * std::cos(h) * dt, pose.y + v * std::sin(h) * dt, h};
  }
  const double h1 = h + w * dt;
  return {pose.x + (v / w) * (std::sin(h1) - std::sin(h)),
          pose.y - (v / w) * (std::cos(h1) - std::cos(h)), normalize_angle(h1)};
}

RelativeGoal relative_goal(const Pose& pose, Point goal) {
  const double dx = goal.x - pose.x;
  const double dy = goal.y - pose.y;
  return {std::hypot(dx, dy), normalize_angle(std::atan2(dy, dx) - pose.heading)};
}

NavState observe(const World& world, const RobotSpec& spec, const Pose& pose, Point goal,
                 const Action& velocity) {
  NavState s;
  Pose origin = pose;
  // A terminal pose may sit past a wall; sense from the nearest in-bounds point.
  origin.x = std::clamp(origin.x, 0.0, world.width());
  origin.y = std::clamp(origin.y, 0.0, world.height());
  s.scan = raycast(world, origin, spec);
  const auto g = relative_goal(pose, goal);
  s.goal_dist = g.dist;
  s.goal_bearing = g.bearing;
  s.lin_vel = velocity.v_cmd;
  s.ang_vel = velocity.omega_cmd;
  return s;
}

EnvStep step_env(const World& world, const RobotSpec& spec, const EpisodeConfig& cfg,
                 const Pose& pose, Point goal, const Action& action, int t) {
  if (t < 0 || t >= cfg.t_max) {
    throw ProtocolError("step_env: step index " + std::to_string(t) + " outside [0, t_max)");
  }
  const Action a = clamp_action(action, spec);
  EnvStep out;
  out.pose = step_kinematics(pose, a, spec.control_dt);
  const double d_before = distance(pose.position(), goal);
  const double d_after = distance(out.pose.position(), goal);
  auto& o = out.outcome;
  if (d_after <= cfg.goal_radius) {
    o.terminal = Terminal::success;
    o.reward = cfg.r_success;
  } else if (world.swept_collides(pose.position(), out.pose.position(), spec.radius)) {
    o.terminal = Terminal::collision;
    o.reward = cfg.r_collision;
  } else {
    o.reward = cfg.c1 * (d_before - d_after);
    o.terminal = (t + 1 == cfg.t_max) ? Terminal::timeout : Terminal::none;
  }
  o.next_state = observe(world, spec, out.pose, goal, a);
  return out;
}

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    out[i] = acc;
  }
  return out;
}

NavEnv::NavEnv(std::shared_ptr<const World> world, RobotSpec spec, EpisodeConfig cfg)
    : world_(std::move(world)), spec_(spec), cfg_(cfg) {
  if (!world_) throw ConfigError("NavEnv: null world");
  spec_.validate();
  cfg_.validate();
}

NavState NavEnv::reset(const Pose& start, Point goal) {
  if (!world_->inside(start.position())) {
    throw InvalidPoseError("episode start outside world bounds");
  }
  pose_ = start;
  pose_.heading = normalize_angle(start.heading);
  goal_ = goal;
  t_ = 0;
  started_ = true;
  terminal_ = Terminal::none;
  return observe(*world_, spec_, pose_, goal_, Action{});
}

StepOutcome NavEnv::step(const Action& action) {
  if (!started_) throw ProtocolError("NavEnv::step before reset");
  if (terminal_ != Terminal::none) {
    throw ProtocolError(std::string("NavEnv::step after terminal (") + to_string(terminal_) + ")");
  }
  auto r = step_env(*world_, spec_, cfg_, pose_, goal_, action, t_);
  pose_ = r.pose;
  ++t_;
  terminal_ = r.outcome.terminal;
  return std::move(r.outcome);
}

}  // namespace fanav
