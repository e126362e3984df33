#include "fanav/offrl.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace fanav {

Method parse_method(const std::string& s) {
  if (s == "bc") return Method::bc;
  if (s == "iql_so") return Method::iql_so;
  if (s == "iql_dm") return Method::iql_dm;
  if (s == "iql_ca") return Method::iql_ca;
  throw ConfigError("unknown method '" + s + "' (expected bc|iql_so|iql_dm|iql_ca)");
}

const char* to_string(Method m) {
  switch (m) {
    case Method::bc: return "bc";
    case Method::iql_so: return "iql_so";
    case Method::iql_dm: return "iql_dm";
    case Method::iql_ca: return "iql_ca";
  }
  return "?";
}

std::vector<Method> all_methods() {
  return {Method::bc, Method::iql_so, Method::iql_dm, Method::iql_ca};
}

void TrainerConfig::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0, 1)");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  if (!(w_max >= 1.0)) throw ConfigError("w_max must be >= 1");
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must lie in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr_v > 0 && lr_q > 0 && lr_pi > 0)) throw ConfigError("learning rates must be > 0");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  if (total_steps < 0) throw ConfigError("total_steps must be >= 0");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (hidden.empty()) throw ConfigError("at least one hidden layer is required");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("hidden widths must be positive");
  }
  if (n_critics < 1) throw ConfigError("n_critics must be >= 1");
  if (!(log_std_min < log_std_max)) throw ConfigError("log_std_min must be < log_std_max");
}

std::string TrainerConfig::echo() const {
  std::ostringstream o;
  o.precision(17);
  o << "method=" << to_string(method) << "\n"
    << "tau=" << tau << "\n"
    << "gamma=" << gamma << "\n"
    << "beta=" << beta << "\n"
    << "w_max=" << w_max << "\n"
    << "rho=" << rho << "\n"
    << "batch_size=" << batch_size << "\n"
    << "lr_v=" << lr_v << "\n"
    << "lr_q=" << lr_q << "\n"
    << "lr_pi=" << lr_pi << "\n"
    << "alpha=" << alpha << "\n"
    << "total_steps=" << total_steps << "\n"
    << "log_every=" << log_every << "\n"
    << "checkpoint_every=" << checkpoint_every << "\n"
    << "seed=" << seed << "\n"
    << "hidden=";
  for (std::size_t i = 0; i < hidden.size(); ++i) o << (i ? "," : "") << hidden[i];
  o << "\n"
    << "activation=" << to_string(activation) << "\n"
    << "n_critics=" << n_critics << "\n"
    << "policy_init_scale=" << policy_init_scale << "\n"
    << "log_std_min=" << log_std_min << "\n"
    << "log_std_max=" << log_std_max << "\n";
  return o.str();
}

namespace {

std::string epoch_line(const EpochRecord& e, bool with_time) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%llu", e.step,
                e.loss_v, e.loss_q, e.loss_pi, e.gnorm_v, e.gnorm_q, e.gnorm_pi, e.mean_weight,
                e.max_weight, static_cast<unsigned long long>(e.critic_collisions));
  std::string s = buf;
  if (with_time) {
    std::snprintf(buf, sizeof buf, ",%.3f", e.seconds);
    s += buf;
  }
  return s;
}

}  // namespace

std::string TrainReport::csv() const {
  std::string out =
      "step,loss_v,loss_q,loss_pi,gnorm_v,gnorm_q,gnorm_pi,mean_weight,max_weight,critic_collisions,"
      "seconds\n";
  for (const auto& e : epochs) out += epoch_line(e, true) + "\n";
  return out;
}

std::uint64_t TrainReport::digest() const {
  std::uint64_t h = fnv1a("train-report");
  for (const auto& e : epochs) h = fnv1a(epoch_line(e, false), h);
  const std::string tail = std::to_string(counters.policy_collision_consumed) + "/" +
                           std::to_string(counters.critic_collision_total) + "/" +
                           std::to_string(final_checkpoint_digest);
  return fnv1a(tail, h);
}

TrainOutput train(const OfflineDataset& ds, const TrainerConfig& cfg,
                  const std::optional<std::filesystem::path>& out_dir,
                  const std::function<void(const EpochRecord&)>& progress) {
  Trainer<Real> trainer(ds, cfg);
  TrainOutput out;
  if (out_dir) std::filesystem::create_directories(*out_dir);

  const auto t0 = std::chrono::steady_clock::now();
  EpochRecord acc;
  int in_epoch = 0;
  auto flush = [&](int step) {
    if (in_epoch == 0) return;
    const double n = in_epoch;
    EpochRecord e = acc;
    e.step = step;
    e.loss_v /= n;
    e.loss_q /= n;
    e.loss_pi /= n;
    e.gnorm_v /= n;
    e.gnorm_q /= n;
    e.gnorm_pi /= n;
    e.mean_weight /= n;
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.report.epochs.push_back(e);
    if (progress) progress(e);
    acc = EpochRecord{};
    in_epoch = 0;
  };

  for (int s = 1; s <= cfg.total_steps; ++s) {
    const StepStats st = trainer.step();
    acc.loss_v += st.loss_v;
    acc.loss_q += st.loss_q;
    acc.loss_pi += st.loss_pi;
    acc.gnorm_v += st.gnorm_v;
    acc.gnorm_q += st.gnorm_q;
    acc.gnorm_pi += st.gnorm_pi;
    acc.mean_weight += st.mean_weight;
    acc.max_weight = std::max(acc.max_weight, st.max_weight);
    acc.critic_collisions += st.critic_collisions;
    ++in_epoch;
    if (s % cfg.log_every == 0) flush(s);
    if (out_dir && cfg.checkpoint_every > 0 && s % cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "ckpt_%07d.bin", s);
      save_checkpoint(*out_dir / name, trainer.checkpoint());
    }
  }
  flush(cfg.total_steps);

  out.final_checkpoint = trainer.checkpoint();
  out.report.counters = trainer.counters();
  out.report.final_checkpoint_digest = checkpoint_digest(out.final_checkpoint);
  if (out_dir) {
    save_checkpoint(*out_dir / "final.ckpt", out.final_checkpoint);
    std::ofstream csv(*out_dir / "report.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write report.csv in " + out_dir->string());
    csv << out.report.csv();
  }
  return out;
}

}  // namespace fanav
