#include "fanav/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include "fanav/error.hpp"
#include "fanav/rng.hpp"

namespace fanav {

static_assert(std::endian::native == std::endian::little,
              "dataset and checkpoint files are written in host order");

const char* to_string(Outcome o) { return o == Outcome::success ? "success" : "collision"; }

StateEncoder::StateEncoder(int beam_count, double range_max, double d_norm, double v_max,
                           double omega_max)
    : beam_count_(beam_count),
      range_max_(range_max),
      d_norm_(d_norm),
      v_max_(v_max),
      omega_max_(omega_max) {
  if (beam_count_ < 1 || !(range_max_ > 0) || !(d_norm_ > 0) || !(v_max_ > 0) ||
      !(omega_max_ > 0)) {
    throw ConfigError("StateEncoder: all scales must be positive");
  }
}

StateEncoder::StateEncoder(const RobotSpec& spec, double d_norm)
    : StateEncoder(spec.lidar_beam_count, spec.lidar_range_max, d_norm, spec.v_max,
                   spec.omega_max) {}

void StateEncoder::encode_into(const NavState& s, float* out) const {
  if (static_cast<int>(s.scan.size()) != beam_count_) {
    throw ShapeError("encode_state: scan has " + std::to_string(s.scan.size()) +
                     " beams, encoder expects " + std::to_string(beam_count_));
  }
  for (int i = 0; i < beam_count_; ++i) {
    out[i] = static_cast<float>(std::clamp(s.scan[static_cast<std::size_t>(i)] / range_max_, 0.0, 1.0));
  }
  out[beam_count_] = static_cast<float>(std::clamp(s.goal_dist / d_norm_, 0.0, 1.0));
  out[beam_count_ + 1] = static_cast<float>(s.goal_bearing / kPi);
  out[beam_count_ + 2] = static_cast<float>(std::clamp(s.lin_vel / v_max_, -1.0, 1.0));
  out[beam_count_ + 3] = static_cast<float>(std::clamp(s.ang_vel / omega_max_, -1.0, 1.0));
}

std::vector<float> StateEncoder::encode(const NavState& s) const {
  std::vector<float> out(static_cast<std::size_t>(feature_dim()));
  encode_into(s, out.data());
  return out;
}

std::vector<Transition> to_transitions(const Trajectory& traj, const StateEncoder& enc) {
  Outcome label;
  if (traj.outcome == Terminal::success) {
    label = Outcome::success;
  } else if (traj.outcome == Terminal::collision) {
    label = Outcome::collision;
  } else {
    throw ProtocolError("only success or collision trajectories become transitions");
  }
  if (traj.states.size() != traj.actions.size() + 1 || traj.rewards.size() != traj.actions.size()) {
    throw ShapeError("trajectory arrays have inconsistent lengths");
  }
  std::vector<Transition> out;
  out.reserve(traj.size());
  for (std::size_t t = 0; t < traj.size(); ++t) {
    Transition tr;
    tr.s = enc.encode(traj.states[t]);
    tr.a = traj.actions[t];
    tr.r = traj.rewards[t];
    tr.s_next = enc.encode(traj.states[t + 1]);
    tr.done = (t + 1 == traj.size());
    tr.outcome = label;
    tr.traj_id = traj.id;
    tr.t = static_cast<std::uint32_t>(t);
    out.push_back(std::move(tr));
  }
  return out;
}

double OfflineDataset::collision_fraction() const {
  return size() == 0 ? 0.0 : static_cast<double>(col.size()) / static_cast<double>(size());
}

void OfflineDataset::validate() const {
  const auto dim = static_cast<std::size_t>(feature_dim());
  auto check = [&](const std::vector<Transition>& part, Outcome want, const char* name) {
    for (std::size_t i = 0; i < part.size(); ++i) {
      const auto& t = part[i];
      if (t.outcome != want) {
        throw ConfigError(std::string("partition ") + name + " holds a " + to_string(t.outcome) +
                          " transition at index " + std::to_string(i));
      }
      if (t.s.size() != dim || t.s_next.size() != dim) {
        throw ShapeError(std::string("partition ") + name + " transition " + std::to_string(i) +
                         " has feature width " + std::to_string(t.s.size()) + ", expected " +
                         std::to_string(dim));
      }
    }
  };
  check(exp, Outcome::success, "exp");
  check(col, Outcome::collision, "col");
}

void OfflineDataset::add(std::vector<Transition> ts) {
  for (auto& t : ts) {
    (t.outcome == Outcome::success ? exp : col).push_back(std::move(t));
  }
}

// ---------------------------------------------------------------------------
// Binary format

namespace {

constexpr char kMagic[6] = {'F', 'A', 'N', 'A', 'V', '1'};

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> buf) : buf_(std::move(buf)) {}
  template <typename T>
  T get(const char* what) {
    T v;
    get_bytes(&v, sizeof(T), what);
    return v;
  }
  void get_bytes(void* out, std::size_t n, const char* what) {
    if (buf_.size() - pos_ < n) {
      throw FormatError(std::string("truncated dataset while reading ") + what, pos_);
    }
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

void put_transition(Writer& w, const Transition& t) {
  w.put<std::uint64_t>(t.traj_id);
  w.put<std::uint32_t>(t.t);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(t.outcome));
  w.put<std::uint8_t>(t.done ? 1 : 0);
  w.put<double>(t.a.v_cmd);
  w.put<double>(t.a.omega_cmd);
  w.put<double>(t.r);
  w.put_bytes(t.s.data(), t.s.size() * sizeof(float));
  w.put_bytes(t.s_next.data(), t.s_next.size() * sizeof(float));
}

Transition get_transition(Reader& r, std::size_t dim) {
  Transition t;
  t.traj_id = r.get<std::uint64_t>("traj_id");
  t.t = r.get<std::uint32_t>("step index");
  const std::size_t label_pos = r.pos();
  const auto label = r.get<std::uint8_t>("outcome");
  if (label != 1 && label != 2) throw FormatError("invalid outcome label", label_pos);
  t.outcome = static_cast<Outcome>(label);
  t.done = r.get<std::uint8_t>("done") != 0;
  t.a.v_cmd = r.get<double>("action");
  t.a.omega_cmd = r.get<double>("action");
  t.r = r.get<double>("reward");
  t.s.resize(dim);
  t.s_next.resize(dim);
  r.get_bytes(t.s.data(), dim * sizeof(float), "state");
  r.get_bytes(t.s_next.data(), dim * sizeof(float), "next state");
  return t;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const OfflineDataset& ds) {
  ds.validate();
  Writer w;
  w.put_bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kDatasetSchema);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.meta.beam_count));
  w.put<std::uint64_t>(ds.exp.size());
  w.put<std::uint64_t>(ds.col.size());
  w.put<std::uint64_t>(ds.meta.config_digest);
  w.put<double>(ds.meta.range_max);
  w.put<double>(ds.meta.d_norm);
  w.put<double>(ds.meta.v_max);
  w.put<double>(ds.meta.omega_max);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.meta.generation.size()));
  w.put_bytes(ds.meta.generation.data(), ds.meta.generation.size());
  for (const auto& t : ds.exp) put_transition(w, t);
  for (const auto& t : ds.col) put_transition(w, t);

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move dataset into place at " + path.string() + ": " + ec.message());
}

OfflineDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(buf));

  char magic[6];
  r.get_bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw FormatError("not a dataset file (bad magic)", 0);
  }
  const std::size_t schema_pos = r.pos();
  const auto schema = r.get<std::uint32_t>("schema");
  if (schema != kDatasetSchema) {
    throw FormatError("unsupported dataset schema " + std::to_string(schema) + " (expected " +
                          std::to_string(kDatasetSchema) + ")",
                      schema_pos);
  }
  OfflineDataset ds;
  ds.meta.beam_count = static_cast<int>(r.get<std::uint32_t>("beam count"));
  const auto n_exp = r.get<std::uint64_t>("n_exp");
  const auto n_col = r.get<std::uint64_t>("n_col");
  ds.meta.config_digest = r.get<std::uint64_t>("digest");
  ds.meta.range_max = r.get<double>("range_max");
  ds.meta.d_norm = r.get<double>("d_norm");
  ds.meta.v_max = r.get<double>("v_max");
  ds.meta.omega_max = r.get<double>("omega_max");
  const auto gen_len = r.get<std::uint32_t>("metadata length");
  if (gen_len > r.remaining()) throw FormatError("metadata length exceeds file size", r.pos());
  ds.meta.generation.resize(gen_len);
  r.get_bytes(ds.meta.generation.data(), gen_len, "metadata");

  const auto dim = static_cast<std::size_t>(ds.meta.beam_count) + 4;
  const std::size_t record = 8 + 4 + 1 + 1 + 3 * 8 + 2 * dim * sizeof(float);
  if ((n_exp + n_col) > r.remaining() / record) {
    throw FormatError("file too short for " + std::to_string(n_exp + n_col) + " records",
                      r.pos());
  }
  ds.exp.reserve(n_exp);
  ds.col.reserve(n_col);
  for (std::uint64_t i = 0; i < n_exp; ++i) {
    const std::size_t at = r.pos();
    ds.exp.push_back(get_transition(r, dim));
    if (ds.exp.back().outcome != Outcome::success) {
      throw FormatError("collision-labelled record inside the success partition", at);
    }
  }
  for (std::uint64_t i = 0; i < n_col; ++i) {
    const std::size_t at = r.pos();
    ds.col.push_back(get_transition(r, dim));
    if (ds.col.back().outcome != Outcome::collision) {
      throw FormatError("success-labelled record inside the collision partition", at);
    }
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last record", r.pos());
  return ds;
}

// ---------------------------------------------------------------------------
// Samplers

void SamplerConfig::validate() const {
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must lie in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
}

int SamplerConfig::collision_count() const {
  return static_cast<int>(std::floor(rho * batch_size + 0.5));
}

StratifiedSampler::StratifiedSampler(const OfflineDataset& ds, SamplerConfig cfg)
    : n_exp_(ds.exp.size()), n_col_(ds.col.size()), cfg_(cfg) {
  cfg_.validate();
  const int n_col = cfg_.collision_count();
  if (n_col > 0 && n_col_ == 0) {
    throw ConfigError("rho > 0 requires a non-empty collision partition");
  }
  if (n_col < cfg_.batch_size && n_exp_ == 0) {
    throw ConfigError("stratified sampling requires a non-empty success partition");
  }
}

std::vector<SampleRef> StratifiedSampler::sample_at(std::uint64_t call) const {
  std::mt19937_64 rng(derive_seed(cfg_.seed, tag("mixed"), call));
  const int n_col = cfg_.collision_count();
  std::vector<SampleRef> out;
  out.reserve(static_cast<std::size_t>(cfg_.batch_size));
  if (n_col > 0) {
    std::uniform_int_distribution<std::size_t> pick(0, n_col_ - 1);
    for (int i = 0; i < n_col; ++i) {
      out.push_back({Partition::col, static_cast<std::uint32_t>(pick(rng))});
    }
  }
  if (cfg_.batch_size > n_col) {
    std::uniform_int_distribution<std::size_t> pick(0, n_exp_ - 1);
    for (int i = n_col; i < cfg_.batch_size; ++i) {
      out.push_back({Partition::exp, static_cast<std::uint32_t>(pick(rng))});
    }
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

ExpSampler::ExpSampler(const OfflineDataset& ds, int batch_size, std::uint64_t seed)
    : n_exp_(ds.exp.size()), batch_size_(batch_size), seed_(seed) {
  if (n_exp_ == 0) throw ConfigError("success partition is empty");
  if (batch_size_ < 1) throw ConfigError("batch size must be >= 1");
}

std::vector<SampleRef> ExpSampler::sample_at(std::uint64_t call) const {
  std::mt19937_64 rng(derive_seed(seed_, tag("exp"), call));
  std::uniform_int_distribution<std::size_t> pick(0, n_exp_ - 1);
  std::vector<SampleRef> out(static_cast<std::size_t>(batch_size_));
  for (auto& r : out) r = {Partition::exp, static_cast<std::uint32_t>(pick(rng))};
  return out;
}

PooledSampler::PooledSampler(const OfflineDataset& ds, int batch_size, std::uint64_t seed,
                             std::uint64_t stream)
    : n_exp_(ds.exp.size()),
      n_col_(ds.col.size()),
      batch_size_(batch_size),
      seed_(seed),
      stream_(stream) {
  if (n_exp_ + n_col_ == 0) throw ConfigError("dataset is empty");
  if (batch_size_ < 1) throw ConfigError("batch size must be >= 1");
}

std::vector<SampleRef> PooledSampler::sample_at(std::uint64_t call) const {
  std::mt19937_64 rng(derive_seed(seed_, tag("pooled") ^ stream_, call));
  std::uniform_int_distribution<std::size_t> pick(0, n_exp_ + n_col_ - 1);
  std::vector<SampleRef> out(static_cast<std::size_t>(batch_size_));
  for (auto& r : out) {
    const std::size_t k = pick(rng);
    r = k < n_exp_ ? SampleRef{Partition::exp, static_cast<std::uint32_t>(k)}
                   : SampleRef{Partition::col, static_cast<std::uint32_t>(k - n_exp_)};
  }
  return out;
}

std::vector<SampleRef> sample_mixed(const OfflineDataset& ds, const SamplerConfig& cfg,
                                    std::uint64_t call) {
  return StratifiedSampler(ds, cfg).sample_at(call);
}

std::vector<SampleRef> sample_exp(const OfflineDataset& ds, int batch_size, std::uint64_t seed,
                                  std::uint64_t call) {
  return ExpSampler(ds, batch_size, seed).sample_at(call);
}

}  // namespace fanav
