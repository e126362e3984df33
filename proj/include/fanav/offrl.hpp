#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fanav/data.hpp"
#include "fanav/nn.hpp"
#include "fanav/rng.hpp"

namespace fanav {

/// bc: behaviour cloning on the success partition.
/// iql_so: IQL on the success partition only.
/// iql_dm: IQL on both partitions pooled, for critics and policy alike.
/// iql_ca: critics on ratio-stratified mixed batches, policy on successes only.
enum class Method { bc, iql_so, iql_dm, iql_ca };

Method parse_method(const std::string& s);
const char* to_string(Method m);
std::vector<Method> all_methods();

struct TrainerConfig {
  Method method = Method::iql_ca;
  double tau = 0.7;
  double gamma = 0.99;
  double beta = 1.0;
  double w_max = 100.0;
  double rho = 0.015;
  int batch_size = 256;
  double lr_v = 3e-4;
  double lr_q = 3e-4;
  double lr_pi = 3e-4;
  double alpha = 0.005;
  int total_steps = 30000;
  int log_every = 1000;
  int checkpoint_every = 10000;
  std::uint64_t seed = 0;
  std::vector<int> hidden = {256, 256};
  Activation activation = Activation::relu;
  int n_critics = 2;
  double policy_init_scale = 1e-2;
  double log_std_min = -5.0;
  double log_std_max = 2.0;

  void validate() const;
  /// Fully resolved key=value lines, one per field.
  std::string echo() const;
};

// ---------------------------------------------------------------------------
// Batches

template <typename T>
struct TrainBatch {
  Matrix<T> s;       // features x B
  Matrix<T> a;       // 2 x B, normalized to [-1, 1]
  Vector<T> r;
  Matrix<T> s_next;
  Vector<T> done;    // 1 for transitions into a terminal state
  std::vector<Outcome> outcome;

  Eigen::Index size() const { return s.cols(); }
  /// [s; a] stacked for the critics.
  Matrix<T> state_action() const {
    Matrix<T> sa(s.rows() + 2, s.cols());
    sa.topRows(s.rows()) = s;
    sa.bottomRows(2) = a;
    return sa;
  }
  std::size_t collision_count() const {
    return static_cast<std::size_t>(std::count(outcome.begin(), outcome.end(), Outcome::collision));
  }
};

template <typename T>
TrainBatch<T> make_batch(const OfflineDataset& ds, std::span<const SampleRef> refs) {
  const int dim = ds.feature_dim();
  const auto n = static_cast<Eigen::Index>(refs.size());
  TrainBatch<T> b;
  b.s.resize(dim, n);
  b.s_next.resize(dim, n);
  b.a.resize(2, n);
  b.r.resize(n);
  b.done.resize(n);
  b.outcome.resize(refs.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& t = resolve(ds, refs[static_cast<std::size_t>(i)]);
    for (int k = 0; k < dim; ++k) {
      b.s(k, i) = static_cast<T>(t.s[static_cast<std::size_t>(k)]);
      b.s_next(k, i) = static_cast<T>(t.s_next[static_cast<std::size_t>(k)]);
    }
    b.a(0, i) = static_cast<T>(t.a.v_cmd / ds.meta.v_max);
    b.a(1, i) = static_cast<T>(t.a.omega_cmd / ds.meta.omega_max);
    b.r(i) = static_cast<T>(t.r);
    b.done(i) = t.done ? T(1) : T(0);
    b.outcome[static_cast<std::size_t>(i)] = t.outcome;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Losses. Each returns the scalar loss and its gradient with respect to the
// parameters of the network being trained; every other quantity is a
// constant.

template <typename T>
struct LossGrad {
  T loss = T(0);
  ParamVec<T> grad;
};

/// mean_i |tau - 1{u_i < 0}| * u_i^2; optionally writes dL/du.
template <typename T>
T expectile_loss(std::span<const T> u, double tau, std::span<T> d_u = {}) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("expectile tau must lie in (0, 1)");
  if (u.empty()) return T(0);
  const T n = static_cast<T>(u.size());
  T total = T(0);
  for (std::size_t i = 0; i < u.size(); ++i) {
    const T w = u[i] < T(0) ? static_cast<T>(1.0 - tau) : static_cast<T>(tau);
    total += w * u[i] * u[i];
    if (!d_u.empty()) d_u[i] = T(2) * w * u[i] / n;
  }
  return total / n;
}

/// Expectile regression of V(s) toward fixed targets q.
template <typename T>
LossGrad<T> value_loss(const Network<T>& v, const Matrix<T>& states, const Vector<T>& q_target,
                       double tau) {
  ForwardCache<T> cache;
  const Matrix<T> pred = v.forward(states, &cache);
  const Eigen::Index n = states.cols();
  Vector<T> u = q_target - pred.row(0).transpose();
  Vector<T> du(n);
  LossGrad<T> out;
  out.loss = expectile_loss<T>(std::span<const T>(u.data(), static_cast<std::size_t>(n)), tau,
                               std::span<T>(du.data(), static_cast<std::size_t>(n)));
  out.grad.assign(v.params.size(), T(0));
  Matrix<T> d_pred = -du.transpose();  // u = q - V
  v.backward(cache, d_pred, out.grad);
  return out;
}

/// Mean squared error of Q(s, a) against fixed targets.
template <typename T>
LossGrad<T> td_loss_with_targets(const Network<T>& q, const Matrix<T>& sa, const Vector<T>& targets) {
  ForwardCache<T> cache;
  const Matrix<T> pred = q.forward(sa, &cache);
  const T n = static_cast<T>(sa.cols());
  const Vector<T> diff = pred.row(0).transpose() - targets;
  LossGrad<T> out;
  out.loss = diff.squaredNorm() / n;
  out.grad.assign(q.params.size(), T(0));
  Matrix<T> d_pred = (T(2) / n) * diff.transpose();
  q.backward(cache, d_pred, out.grad);
  return out;
}

/// r + (1 - done) * gamma * V(s')
template <typename T>
Vector<T> td_targets(const Network<T>& v, const TrainBatch<T>& b, double gamma) {
  const Matrix<T> vn = v.forward(b.s_next);
  return b.r + (static_cast<T>(gamma) * (Vector<T>::Ones(b.size()) - b.done).cwiseProduct(
                                            vn.row(0).transpose()));
}

template <typename T>
LossGrad<T> td_loss(const Network<T>& q, const Network<T>& v, const TrainBatch<T>& b, double gamma) {
  return td_loss_with_targets(q, b.state_action(), td_targets(v, b, gamma));
}

/// Elementwise minimum over the critics' predictions.
template <typename T>
Vector<T> min_q(std::span<const Network<T>> critics, const Matrix<T>& sa) {
  Vector<T> out = critics[0].forward(sa).row(0).transpose();
  for (std::size_t k = 1; k < critics.size(); ++k) {
    out = out.cwiseMin(critics[k].forward(sa).row(0).transpose());
  }
  return out;
}

/// Which transitions a policy loss may consume. Only naive mixing opts into
/// the pooled scope.
enum class PolicyScope { success_only, pooled };

struct AwrStats {
  double max_weight = 0.0;
  double mean_weight = 0.0;
  std::size_t collision_consumed = 0;
};

/// -mean_i min(exp(beta * A_i), w_max) * log pi(a_i | s_i). Under
/// success_only scope a collision-labelled transition is a contract violation.
template <typename T>
LossGrad<T> awr_loss(const GaussianPolicy<T>& pi, const TrainBatch<T>& b, const Vector<T>& adv,
                     double beta, double w_max, AwrStats* stats = nullptr,
                     PolicyScope scope = PolicyScope::success_only) {
  const std::size_t n_col = b.collision_count();
  if (scope == PolicyScope::success_only && n_col > 0) {
    throw ContractViolation("policy loss received " + std::to_string(n_col) +
                            " collision-labelled transitions");
  }
  if (adv.size() != b.size()) throw ShapeError("awr_loss: advantage count != batch size");
  const Eigen::Index n = b.size();
  Vector<T> w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = std::exp(beta * static_cast<double>(adv(i)));
    w(i) = static_cast<T>(std::min(e, w_max));
  }
  PolicyCache<T> cache;
  const Vector<T> logp = pi.log_prob(b.s, b.a, &cache);
  LossGrad<T> out;
  out.loss = -(w.cwiseProduct(logp)).sum() / static_cast<T>(n);
  if (!std::isfinite(static_cast<double>(out.loss))) throw NumericError("awr_loss: non-finite loss");
  out.grad.assign(pi.params.size(), T(0));
  const Vector<T> d_logp = -w / static_cast<T>(n);
  pi.log_prob_backward(cache, d_logp, out.grad);
  if (stats) {
    stats->max_weight = static_cast<double>(w.maxCoeff());
    stats->mean_weight = static_cast<double>(w.mean());
    stats->collision_consumed = n_col;
  }
  return out;
}

/// -mean_i log pi(a_i | s_i)
template <typename T>
LossGrad<T> bc_loss(const GaussianPolicy<T>& pi, const TrainBatch<T>& b, AwrStats* stats = nullptr,
                    PolicyScope scope = PolicyScope::success_only) {
  const Vector<T> zero = Vector<T>::Zero(b.size());
  return awr_loss(pi, b, zero, 0.0, 1.0, stats, scope);
}

template <typename T>
T l2_norm(std::span<const T> g) {
  double s = 0.0;
  for (T x : g) s += static_cast<double>(x) * static_cast<double>(x);
  return static_cast<T>(std::sqrt(s));
}

// ---------------------------------------------------------------------------
// Trainer

struct StepStats {
  double loss_v = 0.0;
  double loss_q = 0.0;
  double loss_pi = 0.0;
  double gnorm_v = 0.0;
  double gnorm_q = 0.0;
  double gnorm_pi = 0.0;
  double max_weight = 0.0;
  double mean_weight = 0.0;
  std::size_t critic_collisions = 0;
};

struct TrainCounters {
  std::uint64_t steps = 0;
  std::uint64_t critic_batches = 0;
  std::uint64_t critic_collision_min = UINT64_MAX;
  std::uint64_t critic_collision_max = 0;
  std::uint64_t critic_collision_total = 0;
  std::uint64_t policy_transitions = 0;
  std::uint64_t policy_collision_consumed = 0;
  double max_weight = 0.0;
};

struct EpochRecord {
  int step = 0;
  double loss_v = 0.0;
  double loss_q = 0.0;
  double loss_pi = 0.0;
  double gnorm_v = 0.0;
  double gnorm_q = 0.0;
  double gnorm_pi = 0.0;
  double mean_weight = 0.0;
  double max_weight = 0.0;
  std::uint64_t critic_collisions = 0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  TrainCounters counters;
  std::uint64_t final_checkpoint_digest = 0;

  std::string csv() const;
  /// Digest of everything except wall-clock time.
  std::uint64_t digest() const;
};

/// Runs the per-step update rule of the configured method. Update order per
/// step: V, then both Q critics, then the target critics, then the policy.
template <typename T>
class Trainer {
 public:
  using BatchObserver = std::function<void(const TrainBatch<T>&)>;

  Trainer(const OfflineDataset& ds, TrainerConfig cfg) : ds_(ds), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (ds_.exp.empty() && cfg_.method != Method::iql_dm) {
      throw ConfigError("training requires a non-empty success partition");
    }
    if (cfg_.method == Method::iql_ca && ds_.col.empty()) {
      throw ConfigError("iql_ca requires a non-empty collision partition");
    }
    if (cfg_.method == Method::iql_dm && ds_.size() == 0) throw ConfigError("dataset is empty");
    const int dim = ds_.feature_dim();
    std::mt19937_64 init(derive_seed(cfg_.seed, tag("init")));
    const auto v_layout = MlpLayout::make(dim, cfg_.hidden, 1, cfg_.activation);
    const auto q_layout = MlpLayout::make(dim + 2, cfg_.hidden, 1, cfg_.activation);
    v_ = make_network<T>(v_layout, init);
    for (int k = 0; k < cfg_.n_critics; ++k) q_.push_back(make_network<T>(q_layout, init));
    q_target_ = q_;
    pi_ = make_policy<T>(dim, cfg_.hidden, cfg_.activation, ds_.meta.v_max, ds_.meta.omega_max, init,
                         cfg_.policy_init_scale);
    pi_.log_std_min = cfg_.log_std_min;
    pi_.log_std_max = cfg_.log_std_max;
    adam_v_ = AdamState<T>(v_.params.size(), cfg_.lr_v);
    for (const auto& q : q_) adam_q_.emplace_back(q.params.size(), cfg_.lr_q);
    adam_pi_ = AdamState<T>(pi_.params.size(), cfg_.lr_pi);

    const std::uint64_t critic_seed = derive_seed(cfg_.seed, tag("critic-batches"));
    const std::uint64_t policy_seed = derive_seed(cfg_.seed, tag("policy-batches"));
    switch (cfg_.method) {
      case Method::iql_ca:
        critic_sampler_ = StratifiedSampler(ds_, {cfg_.rho, cfg_.batch_size, critic_seed});
        policy_sampler_ = ExpSampler(ds_, cfg_.batch_size, policy_seed);
        break;
      case Method::iql_so:
        critic_sampler_ = StratifiedSampler(ds_, {0.0, cfg_.batch_size, critic_seed});
        policy_sampler_ = ExpSampler(ds_, cfg_.batch_size, policy_seed);
        break;
      case Method::iql_dm:
        critic_sampler_ = PooledSampler(ds_, cfg_.batch_size, critic_seed, 1);
        policy_sampler_ = PooledSampler(ds_, cfg_.batch_size, policy_seed, 2);
        break;
      case Method::bc:
        policy_sampler_ = ExpSampler(ds_, cfg_.batch_size, policy_seed);
        break;
    }
  }

  /// Observer invoked with every batch handed to the policy loss.
  void set_policy_observer(BatchObserver obs) { policy_observer_ = std::move(obs); }

  StepStats step() {
    StepStats st;
    const auto step_no = counters_.steps;
    auto guarded = [&](const char* what, auto&& fn) {
      try {
        fn();
      } catch (const NumericError& e) {
        throw NumericError("step " + std::to_string(step_no) + ", " + what + ": " + e.what());
      }
    };
    if (cfg_.method != Method::bc) {
      const auto refs = next_refs(critic_sampler_);
      const TrainBatch<T> batch = make_batch<T>(ds_, refs);
      const std::size_t n_col = batch.collision_count();
      st.critic_collisions = n_col;
      counters_.critic_batches++;
      counters_.critic_collision_min = std::min<std::uint64_t>(counters_.critic_collision_min, n_col);
      counters_.critic_collision_max = std::max<std::uint64_t>(counters_.critic_collision_max, n_col);
      counters_.critic_collision_total += n_col;
      const Matrix<T> sa = batch.state_action();

      guarded("loss_v", [&] {
        const Vector<T> q_hat = min_q<T>(q_target_, sa);
        auto lv = value_loss(v_, batch.s, q_hat, cfg_.tau);
        check_finite(lv.loss);
        adam_step<T>(v_.params, lv.grad, adam_v_);
        st.loss_v = static_cast<double>(lv.loss);
        st.gnorm_v = static_cast<double>(l2_norm<T>(lv.grad));
      });
      guarded("loss_q", [&] {
        const Vector<T> y = td_targets(v_, batch, cfg_.gamma);
        for (std::size_t k = 0; k < q_.size(); ++k) {
          auto lq = td_loss_with_targets(q_[k], sa, y);
          check_finite(lq.loss);
          adam_step<T>(q_[k].params, lq.grad, adam_q_[k]);
          st.loss_q += static_cast<double>(lq.loss);
          st.gnorm_q += static_cast<double>(l2_norm<T>(lq.grad));
        }
      });
      for (std::size_t k = 0; k < q_.size(); ++k) {
        soft_update<T>(q_target_[k].params, q_[k].params, cfg_.alpha);
      }
    }

    const auto refs = next_refs(policy_sampler_);
    const TrainBatch<T> batch = make_batch<T>(ds_, refs);
    if (policy_observer_) policy_observer_(batch);
    const PolicyScope scope =
        cfg_.method == Method::iql_dm ? PolicyScope::pooled : PolicyScope::success_only;
    AwrStats aw;
    guarded("loss_pi", [&] {
      LossGrad<T> lp;
      if (cfg_.method == Method::bc) {
        lp = bc_loss(pi_, batch, &aw, scope);
      } else {
        const Vector<T> adv = advantages(batch);
        lp = awr_loss(pi_, batch, adv, cfg_.beta, cfg_.w_max, &aw, scope);
      }
      check_finite(lp.loss);
      adam_step<T>(pi_.params, lp.grad, adam_pi_);
      st.loss_pi = static_cast<double>(lp.loss);
      st.gnorm_pi = static_cast<double>(l2_norm<T>(lp.grad));
    });
    st.max_weight = aw.max_weight;
    st.mean_weight = aw.mean_weight;
    counters_.policy_transitions += static_cast<std::uint64_t>(batch.size());
    counters_.policy_collision_consumed += aw.collision_consumed;
    counters_.max_weight = std::max(counters_.max_weight, aw.max_weight);
    counters_.steps++;
    return st;
  }

  /// A(s, a) = min_k Qhat_k(s, a) - V(s)
  Vector<T> advantages(const TrainBatch<T>& b) const {
    const Vector<T> q = min_q<T>(q_target_, b.state_action());
    return q - v_.forward(b.s).row(0).transpose();
  }

  const TrainerConfig& config() const { return cfg_; }
  const TrainCounters& counters() const { return counters_; }
  const GaussianPolicy<T>& policy() const { return pi_; }
  const Network<T>& value() const { return v_; }
  const std::vector<Network<T>>& critics() const { return q_; }
  const std::vector<Network<T>>& target_critics() const { return q_target_; }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.meta["method"] = to_string(cfg_.method);
    ck.meta["step"] = std::to_string(counters_.steps);
    ck.meta["beam_count"] = std::to_string(ds_.meta.beam_count);
    ck.meta["range_max"] = repr(ds_.meta.range_max);
    ck.meta["d_norm"] = repr(ds_.meta.d_norm);
    ck.meta["v_max"] = repr(ds_.meta.v_max);
    ck.meta["omega_max"] = repr(ds_.meta.omega_max);
    ck.meta["log_std_min"] = repr(cfg_.log_std_min);
    ck.meta["log_std_max"] = repr(cfg_.log_std_max);
    ck.meta["dataset_digest"] = std::to_string(ds_.meta.config_digest);
    ck.meta["config"] = cfg_.echo();
    ck.meta["precision"] = sizeof(T) == 4 ? "f32" : "f64";
    ck.nets.push_back(to_record<T>("policy", pi_.layout, pi_.params, &adam_pi_));
    ck.nets.push_back(to_record<T>("value", v_.layout, v_.params, &adam_v_));
    for (std::size_t k = 0; k < q_.size(); ++k) {
      ck.nets.push_back(to_record<T>("q" + std::to_string(k), q_[k].layout, q_[k].params, &adam_q_[k]));
      ck.nets.push_back(
          to_record<T>("q_target" + std::to_string(k), q_target_[k].layout, q_target_[k].params));
    }
    return ck;
  }

 private:
  using AnySampler = std::variant<std::monostate, StratifiedSampler, ExpSampler, PooledSampler>;

  static std::string repr(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  // The step index and loss name are added by the caller's guard.
  static void check_finite(T v) {
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("loss is not finite");
  }

  static std::vector<SampleRef> next_refs(AnySampler& s) {
    return std::visit(
        [](auto& smp) -> std::vector<SampleRef> {
          if constexpr (std::is_same_v<std::decay_t<decltype(smp)>, std::monostate>) {
            throw ProtocolError("sampler not configured");
          } else {
            return smp.next();
          }
        },
        s);
  }

  const OfflineDataset& ds_;
  TrainerConfig cfg_;
  Network<T> v_;
  std::vector<Network<T>> q_;
  std::vector<Network<T>> q_target_;
  GaussianPolicy<T> pi_;
  AdamState<T> adam_v_;
  std::vector<AdamState<T>> adam_q_;
  AdamState<T> adam_pi_;
  AnySampler critic_sampler_;
  AnySampler policy_sampler_;
  TrainCounters counters_;
  BatchObserver policy_observer_;
};

struct TrainOutput {
  Checkpoint final_checkpoint;
  TrainReport report;
};

/// Full training run. When `out_dir` is set, writes report.csv,
/// numbered checkpoints every `checkpoint_every` steps and final.ckpt.
/// `progress` is called after every logged epoch.
TrainOutput train(const OfflineDataset& ds, const TrainerConfig& cfg,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const std::function<void(const EpochRecord&)>& progress = {});

/// Rebuilds the policy stored in a checkpoint.
template <typename T>
GaussianPolicy<T> policy_from_checkpoint(const Checkpoint& ck) {
  const auto& rec = ck.net("policy");
  GaussianPolicy<T> p;
  p.layout = rec.layout;
  if (rec.params.size() != rec.layout.param_count() + 2) {
    throw FormatError("policy parameter count does not match its layout", 0);
  }
  p.params = cast_params<T>(rec.params);
  p.scale[0] = std::stod(ck.meta_at("v_max"));
  p.scale[1] = std::stod(ck.meta_at("omega_max"));
  p.log_std_min = std::stod(ck.meta_at("log_std_min"));
  p.log_std_max = std::stod(ck.meta_at("log_std_max"));
  return p;
}

}  // namespace fanav
