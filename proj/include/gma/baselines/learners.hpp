#pragma once

// Scratch-trained single-task baselines: a DQN over the history encoding and an unconditioned
// SAC. Both run online against one environment and learn from their own replay buffer.

#include <algorithm>
#include <cmath>
#include <memory>

#include "gma/meta/harness.hpp"

namespace gma::baselines {

using meta::OnlineOptions;
using meta::OnlineTrace;
using meta::ReplayBuffer;
using meta::Transition;

/// Online learner interface used by the baseline runners.
class Learner {
 public:
  virtual ~Learner() = default;
  /// Chooses an action for the current state, steps `env` and returns the transition.
  virtual Transition step(env::TaskEnv& env, Rng& rng) = 0;
  /// One gradient update from `buffer`; false when the buffer holds less than a batch.
  virtual bool update(const ReplayBuffer& buffer, Rng& rng) = 0;
};

struct DqnConfig {
  int history = 20;
  std::vector<int> hidden{64, 64};
  double gamma = 0.9;
  double lr = 0.003;
  int batch_size = 64;
  double epsilon_start = 1.0;
  double epsilon_decay = 0.995;  // per environment step
  double epsilon_min = 0.01;
  int target_sync = 20;  // updates between target copies

  void validate() const {
    if (history < 1 || batch_size < 1 || target_sync < 1) throw ConfigError("invalid DQN configuration");
    if (gamma < 0.0 || gamma >= 1.0) throw ConfigError("DQN discount must lie in [0, 1)");
    if (epsilon_min < 0.0 || epsilon_start > 1.0 || epsilon_decay <= 0.0 || epsilon_decay > 1.0)
      throw ConfigError("invalid DQN exploration schedule");
  }
  ad::NetSpec net() const { return ad::NetSpec::mlp(meta::state_width(history), hidden, 2); }
};

/// Greedy choice over two Q-values; ties go to staying silent.
inline int greedy_action(double q0, double q1) { return q1 > q0 ? 1 : 0; }

inline ad::Matrix bellman_targets(const ad::Matrix& rewards, const ad::Matrix& next_q, double gamma) {
  return rewards.array() + gamma * next_q.rowwise().maxCoeff().array();
}

class DqnAgent final : public Learner {
 public:
  DqnAgent(DqnConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    ad::init_params(cfg_.net(), online, "q", seed);
    target = online;
  }

  ad::ParamStore online;
  ad::ParamStore target;

  const DqnConfig& config() const noexcept { return cfg_; }
  double epsilon() const {
    return std::max(cfg_.epsilon_min, cfg_.epsilon_start * std::pow(cfg_.epsilon_decay, static_cast<double>(steps_)));
  }

  ad::Matrix q_values(const ad::Matrix& states, const ad::ParamStore& store) const {
    ad::Tape t;
    return ad::forward(cfg_.net(), store, "q", t.constant(states)).value();
  }

  int greedy(const sac::Row& state) const {
    const auto q = q_values(state, online);
    return greedy_action(q(0, 0), q(0, 1));
  }

  Transition step(env::TaskEnv& env, Rng& rng) override {
    Transition tr;
    tr.state = env.state().categories();
    tr.t = env.time();
    const double eps = epsilon();
    const double u = uniform01(rng);
    const int explore_action = uniform01(rng) < 0.5 ? 0 : 1;
    tr.action = u < eps ? explore_action : greedy(meta::state_row(env.state()));
    tr.squashed = tr.action ? 1.0 : -1.0;
    tr.reward = env.step(tr.action).reward;
    tr.next_state = env.state().categories();
    ++steps_;
    return tr;
  }

  bool update(const ReplayBuffer& buffer, Rng& rng) override {
    const auto n = static_cast<std::size_t>(cfg_.batch_size);
    if (buffer.size() < n) return false;
    const auto idx = buffer.sample(n, rng);
    const auto sw = meta::state_width(cfg_.history);
    ad::Matrix s(static_cast<Eigen::Index>(n), sw), s2(static_cast<Eigen::Index>(n), sw);
    ad::Matrix r(static_cast<Eigen::Index>(n), 1), mask = ad::Matrix::Zero(static_cast<Eigen::Index>(n), 2);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& tr = buffer[idx[i]];
      const auto row = static_cast<Eigen::Index>(i);
      env::encode_categories(tr.state, s.row(row).data());
      env::encode_categories(tr.next_state, s2.row(row).data());
      r(row, 0) = tr.reward;
      mask(row, tr.action) = 1.0;
    }
    const ad::Matrix y = bellman_targets(r, q_values(s2, target), cfg_.gamma);
    online.zero_grad();
    ad::Tape t;
    Var q = ad::forward(cfg_.net(), online, "q", t.constant(s), ad::Mode::Train);
    Var chosen = ad::matmul(ad::mul(q, t.constant(mask)), t.constant(ad::Matrix::Ones(2, 1)));
    Var loss = ad::mean_all(ad::square(ad::sub(chosen, t.constant(y))));
    t.backward(loss);
    last_loss = loss.scalar();
    ad::adam_step(online, {cfg_.lr, 0.9, 0.999, 1e-8}, "dqn");
    online.zero_grad();
    if (++updates_ % cfg_.target_sync == 0) target = online;
    return true;
  }

  double last_loss = 0.0;

 private:
  using Var = ad::Var;
  DqnConfig cfg_;
  long steps_ = 0;
  long updates_ = 0;
};

/// SAC without a task representation.
class ScratchSac final : public Learner {
 public:
  ScratchSac(const meta::GmaConfig& cfg, std::uint64_t seed) : cfg_(cfg), nets(cfg.sac_config(false), seed) {}

  Transition step(env::TaskEnv& env, Rng& rng) override {
    return meta::env_transition(env, nets, std::nullopt, rng);
  }
  bool update(const ReplayBuffer& buffer, Rng& rng) override {
    return meta::finetune_step(nets, buffer, std::nullopt, cfg_, rng).tasks > 0;
  }

 private:
  meta::GmaConfig cfg_;

 public:
  sac::SacNets nets;
};

/// Runs `learner` online, applying scenario changes and updates as in `opt`. The environment and
/// replay buffer persist across calls so that pretraining and evaluation can be chained.
struct LearnerSession {
  env::TaskEnv env;
  ReplayBuffer buffer;
  Rng rng;

  LearnerSession(const env::TaskSpec& task, const env::EnvConfig& ecfg, std::size_t capacity, std::uint64_t seed)
      : env(task, ecfg, derive_seed(seed, 18)), buffer(capacity), rng(make_rng(seed, 17)) {
    env.reset();
  }
};

inline OnlineTrace run_learner(Learner& learner, LearnerSession& session, const OnlineOptions& opt) {
  OnlineTrace trace;
  std::size_t next_change = 0;
  int segment_updates = 0;
  for (long t = 0; t < opt.slots; ++t) {
    if (next_change < opt.changes.size() && opt.changes[next_change].at == t) {
      session.env.set_scenario(opt.changes[next_change].scenario);
      segment_updates = 0;
      ++next_change;
    }
    auto tr = learner.step(session.env, session.rng);
    meta::record_slot(trace, session.env, tr);
    session.buffer.push(std::move(tr));
    const bool budget = opt.max_updates_per_segment < 0 || segment_updates < opt.max_updates_per_segment;
    if (opt.update_at && budget && opt.update_at(t + 1) && learner.update(session.buffer, session.rng)) {
      ++segment_updates;
      ++trace.updates;
    }
  }
  return trace;
}

inline OnlineOptions every_k_steps(long slots, int k) {
  if (k < 1) throw ConfigError("update period must be positive");
  OnlineOptions opt;
  opt.slots = slots;
  opt.update_at = [k](long step) { return step % k == 0; };
  return opt;
}

/// Online DQN training on one task, updating every `update_every` steps.
inline OnlineTrace dqn_train(const env::TaskSpec& task, const DqnConfig& cfg, const env::EnvConfig& ecfg, long slots,
                             int update_every, std::uint64_t seed, std::unique_ptr<DqnAgent>* out = nullptr) {
  auto agent = std::make_unique<DqnAgent>(cfg, derive_seed(seed, 201));
  LearnerSession session(task, ecfg, 1000, seed);
  auto trace = run_learner(*agent, session, every_k_steps(slots, update_every));
  if (out) *out = std::move(agent);
  return trace;
}

/// Online scratch-SAC training on one task, updating every `update_every` steps.
inline OnlineTrace sac_scratch_train(const env::TaskSpec& task, const meta::GmaConfig& cfg, long slots,
                                     int update_every, std::uint64_t seed, std::unique_ptr<ScratchSac>* out = nullptr) {
  auto agent = std::make_unique<ScratchSac>(cfg, derive_seed(seed, 202));
  LearnerSession session(task, cfg.env, static_cast<std::size_t>(cfg.buffer_capacity), seed);
  auto trace = run_learner(*agent, session, every_k_steps(slots, update_every));
  if (out) *out = std::move(agent);
  return trace;
}

/// Dynamic-schedule run of a baseline: pretraining on `pretrain` for `pretrain_slots` slots
/// (update every `pretrain_every`), then the schedule with updates every `sched.update_every`
/// steps and no per-segment cap.
inline OnlineTrace baseline_dynamic_run(Learner& learner, const env::TaskSpec& pretrain, long pretrain_slots,
                                        int pretrain_every, const meta::DynamicSchedule& sched,
                                        const env::EnvConfig& ecfg, std::uint64_t seed) {
  if (sched.segments.empty() || sched.segments.front().at != 0)
    throw ConfigError("dynamic schedule must start with a scenario at slot 0");
  LearnerSession session(pretrain, ecfg, 1000, seed);
  run_learner(learner, session, every_k_steps(pretrain_slots, pretrain_every));
  OnlineOptions opt = every_k_steps(sched.slots, sched.update_every);
  opt.changes = sched.segments;
  return run_learner(learner, session, opt);
}

}  // namespace gma::baselines
