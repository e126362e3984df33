#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fanav/sim.hpp"

namespace fanav {

/// Outcome label of the trajectory a transition came from.
enum class Outcome : std::uint8_t { success = 1, collision = 2 };

const char* to_string(Outcome o);

/// One finished episode as recorded by the collector. `states` has one more
/// entry than `actions`; `actions` are the clamped commands actually executed.
struct Trajectory {
  std::uint64_t id = 0;
  Terminal outcome = Terminal::none;
  Point goal;
  std::vector<Pose> poses;
  std::vector<NavState> states;
  std::vector<Action> actions;
  std::vector<double> rewards;

  std::size_t size() const { return actions.size(); }
};

/// Flattens a NavState into network features:
/// [scan / range_max, d / d_norm, bearing / pi, v / v_max, omega / omega_max].
class StateEncoder {
 public:
  StateEncoder(int beam_count, double range_max, double d_norm, double v_max, double omega_max);
  StateEncoder(const RobotSpec& spec, double d_norm);

  int beam_count() const { return beam_count_; }
  int feature_dim() const { return beam_count_ + 4; }
  double range_max() const { return range_max_; }
  double d_norm() const { return d_norm_; }
  double v_max() const { return v_max_; }
  double omega_max() const { return omega_max_; }

  std::vector<float> encode(const NavState& s) const;
  void encode_into(const NavState& s, float* out) const;

 private:
  int beam_count_;
  double range_max_;
  double d_norm_;
  double v_max_;
  double omega_max_;
};

struct Transition {
  std::vector<float> s;
  Action a;
  double r = 0.0;
  std::vector<float> s_next;
  bool done = false;
  Outcome outcome = Outcome::success;
  std::uint64_t traj_id = 0;
  std::uint32_t t = 0;
};

/// Converts a success- or collision-terminated trajectory into transitions.
/// Timeouts have no partition and are rejected.
std::vector<Transition> to_transitions(const Trajectory& traj, const StateEncoder& enc);

struct DatasetMeta {
  int beam_count = 0;
  double range_max = 0.0;
  double d_norm = 0.0;
  double v_max = 0.0;
  double omega_max = 0.0;
  std::uint64_t config_digest = 0;
  std::string generation;  // free-form key=value lines describing how it was built

  StateEncoder encoder() const { return {beam_count, range_max, d_norm, v_max, omega_max}; }
};

/// Transitions split into the success partition (`exp`) and the collision
/// partition (`col`).
struct OfflineDataset {
  DatasetMeta meta;
  std::vector<Transition> exp;
  std::vector<Transition> col;

  int feature_dim() const { return meta.beam_count + 4; }
  std::size_t size() const { return exp.size() + col.size(); }
  double collision_fraction() const;
  /// Throws ConfigError/ShapeError when labels or widths are inconsistent.
  void validate() const;
  void add(std::vector<Transition> ts);
};

constexpr std::uint32_t kDatasetSchema = 1;

void save_dataset(const std::filesystem::path& path, const OfflineDataset& ds);
OfflineDataset load_dataset(const std::filesystem::path& path);

enum class Partition : std::uint8_t { exp = 0, col = 1 };

struct SampleRef {
  Partition part = Partition::exp;
  std::uint32_t index = 0;
};

inline const Transition& resolve(const OfflineDataset& ds, SampleRef r) {
  return r.part == Partition::exp ? ds.exp[r.index] : ds.col[r.index];
}

struct SamplerConfig {
  double rho = 0.015;
  int batch_size = 256;
  std::uint64_t seed = 0;

  void validate() const;
  /// round-half-up(rho * B)
  int collision_count() const;
};

/// Critic-batch sampler: exactly round(rho*B) draws from `col`, the rest from
/// `exp`, merged and shuffled. Draws are with replacement. Each call derives
/// its generator from (seed, call index), so batches depend only on those.
class StratifiedSampler {
 public:
  StratifiedSampler(const OfflineDataset& ds, SamplerConfig cfg);

  std::vector<SampleRef> sample_at(std::uint64_t call) const;
  std::vector<SampleRef> next() { return sample_at(calls_++); }
  std::uint64_t calls() const { return calls_; }
  const SamplerConfig& config() const { return cfg_; }

 private:
  std::size_t n_exp_;
  std::size_t n_col_;
  SamplerConfig cfg_;
  std::uint64_t calls_ = 0;
};

/// Policy-batch sampler over the success partition only.
class ExpSampler {
 public:
  ExpSampler(const OfflineDataset& ds, int batch_size, std::uint64_t seed);

  std::vector<SampleRef> sample_at(std::uint64_t call) const;
  std::vector<SampleRef> next() { return sample_at(calls_++); }

 private:
  std::size_t n_exp_;
  int batch_size_;
  std::uint64_t seed_;
  std::uint64_t calls_ = 0;
};

/// Uniform sampler over both partitions pooled, ignoring labels.
class PooledSampler {
 public:
  PooledSampler(const OfflineDataset& ds, int batch_size, std::uint64_t seed, std::uint64_t stream);

  std::vector<SampleRef> sample_at(std::uint64_t call) const;
  std::vector<SampleRef> next() { return sample_at(calls_++); }

 private:
  std::size_t n_exp_;
  std::size_t n_col_;
  int batch_size_;
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t calls_ = 0;
};

std::vector<SampleRef> sample_mixed(const OfflineDataset& ds, const SamplerConfig& cfg,
                                    std::uint64_t call = 0);
std::vector<SampleRef> sample_exp(const OfflineDataset& ds, int batch_size, std::uint64_t seed,
                                  std::uint64_t call = 0);

}  // namespace fanav
