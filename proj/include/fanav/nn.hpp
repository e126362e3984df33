#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fanav/error.hpp"

namespace fanav {

#if defined(FANAV_DOUBLE)
using Real = double;
#else
using Real = float;
#endif

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Flat parameter storage. Aligned to Eigen's packet size so vectorized
/// kernels over mapped sub-blocks take the same path on every allocation,
/// which keeps results bitwise reproducible.
template <typename T>
using ParamVec = std::vector<T, Eigen::aligned_allocator<T>>;

enum class Activation : std::uint8_t { relu = 0, tanh = 1 };

Activation parse_activation(const std::string& s);
const char* to_string(Activation a);

/// Topology of a fully connected network. Parameters live in one flat vector,
/// layer by layer: weights (out x in, column-major) followed by biases.
class MlpLayout {
 public:
  MlpLayout() = default;
  MlpLayout(std::vector<int> widths, std::vector<Activation> hidden);
  static MlpLayout make(int in, const std::vector<int>& hidden, int out, Activation act);

  const std::vector<int>& widths() const { return widths_; }
  const std::vector<Activation>& activations() const { return hidden_; }
  int input_width() const { return widths_.front(); }
  int output_width() const { return widths_.back(); }
  int layer_count() const { return static_cast<int>(widths_.size()) - 1; }
  std::size_t param_count() const { return offsets_.back(); }
  std::size_t weight_offset(int l) const { return offsets_[static_cast<std::size_t>(l)]; }
  std::size_t bias_offset(int l) const {
    return weight_offset(l) + static_cast<std::size_t>(widths_[l] * widths_[l + 1]);
  }

  bool operator==(const MlpLayout& o) const { return widths_ == o.widths_ && hidden_ == o.hidden_; }

 private:
  std::vector<int> widths_;
  std::vector<Activation> hidden_;
  std::vector<std::size_t> offsets_{0};
};

/// Layer outputs of one forward pass; `acts[0]` is the input.
template <typename T>
struct ForwardCache {
  std::vector<Matrix<T>> acts;
};

/// Batched forward pass. Columns of `x` are samples.
template <typename T>
Matrix<T> mlp_forward(const MlpLayout& layout, std::span<const T> params, const Matrix<T>& x,
                      ForwardCache<T>* cache = nullptr) {
  if (x.rows() != layout.input_width()) {
    throw ShapeError("mlp_forward: input width " + std::to_string(x.rows()) + " != " +
                     std::to_string(layout.input_width()));
  }
  if (params.size() < layout.param_count()) throw ShapeError("mlp_forward: parameter vector too short");
  if (cache) {
    cache->acts.clear();
    cache->acts.push_back(x);
  }
  Matrix<T> a = x;
  const int last = layout.layer_count() - 1;
  for (int l = 0; l <= last; ++l) {
    const int in = layout.widths()[l];
    const int out = layout.widths()[l + 1];
    Eigen::Map<const Matrix<T>> w(params.data() + layout.weight_offset(l), out, in);
    Eigen::Map<const Vector<T>> b(params.data() + layout.bias_offset(l), out);
    Matrix<T> z(out, a.cols());
    z.noalias() = w * a;
    z.colwise() += b;
    if (l < last) {
      if (layout.activations()[static_cast<std::size_t>(l)] == Activation::relu) {
        z = z.cwiseMax(T(0));
      } else {
        z = z.array().tanh().matrix();
      }
    }
    if (!z.allFinite()) {
      throw NumericError("non-finite activation in layer " + std::to_string(l));
    }
    if (cache) cache->acts.push_back(z);
    a = std::move(z);
  }
  return a;
}

/// Reverse pass: accumulates dL/dparams into `grad` given dL/doutput.
template <typename T>
void mlp_backward(const MlpLayout& layout, std::span<const T> params, const ForwardCache<T>& cache,
                  const Matrix<T>& d_out, std::span<T> grad) {
  if (grad.size() < layout.param_count()) throw ShapeError("mlp_backward: gradient vector too short");
  Matrix<T> delta = d_out;
  for (int l = layout.layer_count() - 1; l >= 0; --l) {
    const int in = layout.widths()[l];
    const int out = layout.widths()[l + 1];
    const auto& a_in = cache.acts[static_cast<std::size_t>(l)];
    Eigen::Map<Matrix<T>> gw(grad.data() + layout.weight_offset(l), out, in);
    Eigen::Map<Vector<T>> gb(grad.data() + layout.bias_offset(l), out);
    gw.noalias() += delta * a_in.transpose();
    gb += delta.rowwise().sum();
    if (l == 0) break;
    Eigen::Map<const Matrix<T>> w(params.data() + layout.weight_offset(l), out, in);
    Matrix<T> next(in, delta.cols());
    next.noalias() = w.transpose() * delta;
    if (layout.activations()[static_cast<std::size_t>(l - 1)] == Activation::relu) {
      next = (a_in.array() > T(0)).select(next, T(0));
    } else {
      next.array() *= (T(1) - a_in.array().square());
    }
    if (!next.allFinite()) {
      throw NumericError("non-finite gradient entering layer " + std::to_string(l - 1));
    }
    delta = std::move(next);
  }
}

template <typename T>
struct Network {
  MlpLayout layout;
  ParamVec<T> params;

  Matrix<T> forward(const Matrix<T>& x, ForwardCache<T>* cache = nullptr) const {
    return mlp_forward<T>(layout, params, x, cache);
  }
  void backward(const ForwardCache<T>& cache, const Matrix<T>& d_out, std::span<T> grad) const {
    mlp_backward<T>(layout, params, cache, d_out, grad);
  }
};

/// He-normal weights for hidden layers, LeCun-normal times `final_scale` for
/// the output layer, zero biases. Values are drawn in double so 32- and
/// 64-bit builds start from the same point up to rounding.
template <typename T>
ParamVec<T> init_params(const MlpLayout& layout, std::mt19937_64& rng, double final_scale = 1.0) {
  ParamVec<T> p(layout.param_count(), T(0));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int l = 0; l < layout.layer_count(); ++l) {
    const int in = layout.widths()[l];
    const int out = layout.widths()[l + 1];
    const bool output = l == layout.layer_count() - 1;
    double sd = 0.0;
    if (output) {
      sd = final_scale * std::sqrt(1.0 / in);
    } else if (layout.activations()[static_cast<std::size_t>(l)] == Activation::relu) {
      sd = std::sqrt(2.0 / in);
    } else {
      sd = std::sqrt(1.0 / in);
    }
    const std::size_t off = layout.weight_offset(l);
    for (std::size_t k = 0; k < static_cast<std::size_t>(in * out); ++k) {
      p[off + k] = static_cast<T>(sd * gauss(rng));
    }
  }
  return p;
}

template <typename T>
Network<T> make_network(const MlpLayout& layout, std::mt19937_64& rng, double final_scale = 1.0) {
  return {layout, init_params<T>(layout, rng, final_scale)};
}

template <typename T>
struct AdamState {
  ParamVec<T> m;
  ParamVec<T> v;
  std::uint64_t t = 0;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(std::size_t n, double learning_rate) : m(n, T(0)), v(n, T(0)), lr(learning_rate) {}
};

/// Bias-corrected Adam update in place.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& s) {
  if (params.size() != grads.size() || s.m.size() != params.size() || s.v.size() != params.size()) {
    throw ShapeError("adam_step: dimension mismatch");
  }
  for (const T g : grads) {
    if (!std::isfinite(static_cast<double>(g))) throw NumericError("adam_step: non-finite gradient");
  }
  s.t += 1;
  const T b1 = static_cast<T>(s.beta1);
  const T b2 = static_cast<T>(s.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(s.beta1, static_cast<double>(s.t)));
  const T c2 = static_cast<T>(1.0 - std::pow(s.beta2, static_cast<double>(s.t)));
  const T lr = static_cast<T>(s.lr);
  const T eps = static_cast<T>(s.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = b1 * s.m[i] + (T(1) - b1) * grads[i];
    s.v[i] = b2 * s.v[i] + (T(1) - b2) * grads[i] * grads[i];
    const T mhat = s.m[i] / c1;
    const T vhat = s.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

/// target <- (1 - alpha) * target + alpha * online
template <typename T>
void soft_update(std::span<T> target, std::span<const T> online, double alpha) {
  if (target.size() != online.size()) throw ShapeError("soft_update: dimension mismatch");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("soft_update: alpha must lie in (0, 1]");
  const T a = static_cast<T>(alpha);
  const T keep = static_cast<T>(1.0 - alpha);
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = keep * target[i] + a * online[i];
}

template <typename T>
struct PolicyCache {
  ForwardCache<T> mlp;
  Matrix<T> z;  // (u - mean) / std
};

/// Diagonal Gaussian over pre-squash actions u, squashed as
/// a = scale * tanh(u). The mean comes from an MLP; the two log-std values are
/// state-independent and stored after the MLP weights in `params`.
template <typename T>
struct GaussianPolicy {
  MlpLayout layout;
  ParamVec<T> params;
  double scale[2] = {1.0, 1.0};
  double log_std_min = -5.0;
  double log_std_max = 2.0;

  static constexpr double kBoundEps = 1e-6;

  std::size_t mlp_size() const { return layout.param_count(); }
  std::span<const T> mlp_params() const { return {params.data(), mlp_size()}; }
  T raw_log_std(int k) const { return params[mlp_size() + static_cast<std::size_t>(k)]; }
  T log_std(int k) const {
    return std::clamp(raw_log_std(k), static_cast<T>(log_std_min), static_cast<T>(log_std_max));
  }

  Matrix<T> mean(const Matrix<T>& states, ForwardCache<T>* cache = nullptr) const {
    return mlp_forward<T>(layout, mlp_params(), states, cache);
  }

  /// tanh(mean), in normalized action units.
  Matrix<T> deterministic(const Matrix<T>& states) const { return mean(states).array().tanh().matrix(); }

  /// log pi(a|s) in physical action units. `actions` are normalized
  /// (a / scale) and clipped to 1 - 1e-6 in magnitude before inversion.
  Vector<T> log_prob(const Matrix<T>& states, const Matrix<T>& actions,
                     PolicyCache<T>* cache = nullptr) const {
    if (actions.rows() != 2 || actions.cols() != states.cols()) {
      throw ShapeError("policy log_prob: actions must be 2 x batch");
    }
    PolicyCache<T> local;
    PolicyCache<T>& c = cache ? *cache : local;
    const Matrix<T> mu = mean(states, &c.mlp);
    const Eigen::Index n = states.cols();
    c.z.resize(2, n);
    Vector<T> out = Vector<T>::Zero(n);
    const double half_log_2pi = 0.5 * std::log(2.0 * 3.14159265358979323846);
    for (int k = 0; k < 2; ++k) {
      const T ls = log_std(k);
      const T sd = std::exp(ls);
      const T konst = static_cast<T>(half_log_2pi + std::log(scale[k])) + ls;
      for (Eigen::Index i = 0; i < n; ++i) {
        const T y = std::clamp(actions(k, i), static_cast<T>(-1.0 + kBoundEps),
                               static_cast<T>(1.0 - kBoundEps));
        const T u = std::atanh(y);
        const T z = (u - mu(k, i)) / sd;
        c.z(k, i) = z;
        out(i) += -T(0.5) * z * z - konst - std::log(T(1) - y * y);
      }
    }
    return out;
  }

  /// Accumulates d(sum_i d_logp_i * log_prob_i)/dparams into grad.
  void log_prob_backward(const PolicyCache<T>& c, const Vector<T>& d_logp, std::span<T> grad) const {
    if (grad.size() != params.size()) throw ShapeError("policy backward: gradient size mismatch");
    Matrix<T> d_mu(2, c.z.cols());
    for (int k = 0; k < 2; ++k) {
      const T sd = std::exp(log_std(k));
      const T raw = raw_log_std(k);
      const bool free = raw > static_cast<T>(log_std_min) && raw < static_cast<T>(log_std_max);
      T g_ls = T(0);
      for (Eigen::Index i = 0; i < c.z.cols(); ++i) {
        const T z = c.z(k, i);
        d_mu(k, i) = d_logp(i) * z / sd;
        g_ls += d_logp(i) * (z * z - T(1));
      }
      if (free) grad[mlp_size() + static_cast<std::size_t>(k)] += g_ls;
    }
    mlp_backward<T>(layout, mlp_params(), c.mlp, d_mu, grad.first(mlp_size()));
  }
};

template <typename T>
GaussianPolicy<T> make_policy(int feature_dim, const std::vector<int>& hidden, Activation act,
                              double v_scale, double omega_scale, std::mt19937_64& rng,
                              double final_scale = 1e-2) {
  GaussianPolicy<T> p;
  p.layout = MlpLayout::make(feature_dim, hidden, 2, act);
  p.params = init_params<T>(p.layout, rng, final_scale);
  p.params.push_back(T(0));
  p.params.push_back(T(0));
  p.scale[0] = v_scale;
  p.scale[1] = omega_scale;
  return p;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct NetRecord {
  std::string name;
  MlpLayout layout;
  std::vector<double> params;  // may carry trailing non-MLP parameters
  bool has_adam = false;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::uint64_t adam_t = 0;
  double adam_lr = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<NetRecord> nets;

  const NetRecord& net(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::string& meta_at(const std::string& key) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::uint64_t checkpoint_digest(const Checkpoint& ck);

template <typename T>
NetRecord to_record(const std::string& name, const MlpLayout& layout, std::span<const T> params,
                    const AdamState<T>* adam = nullptr) {
  NetRecord r;
  r.name = name;
  r.layout = layout;
  r.params.assign(params.begin(), params.end());
  if (adam) {
    r.has_adam = true;
    r.adam_m.assign(adam->m.begin(), adam->m.end());
    r.adam_v.assign(adam->v.begin(), adam->v.end());
    r.adam_t = adam->t;
    r.adam_lr = adam->lr;
    r.adam_beta1 = adam->beta1;
    r.adam_beta2 = adam->beta2;
    r.adam_eps = adam->eps;
  }
  return r;
}

template <typename T>
ParamVec<T> cast_params(const std::vector<double>& v) {
  return ParamVec<T>(v.begin(), v.end());
}

template <typename T>
AdamState<T> adam_from_record(const NetRecord& r) {
  if (!r.has_adam) throw FormatError("network '" + r.name + "' has no optimizer state", 0);
  AdamState<T> s;
  s.m = cast_params<T>(r.adam_m);
  s.v = cast_params<T>(r.adam_v);
  s.t = r.adam_t;
  s.lr = r.adam_lr;
  s.beta1 = r.adam_beta1;
  s.beta2 = r.adam_beta2;
  s.eps = r.adam_eps;
  return s;
}

}  // namespace fanav
