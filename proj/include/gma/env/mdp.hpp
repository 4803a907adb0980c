#pragma once

// The agent's MDP on top of the channel: action-observation history state, short-term throughput
// windows, and the throughput/fairness reward.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gma/errors.hpp"
#include "gma/sim/channel.hpp"
#include "gma/sim/scenario.hpp"

namespace gma::env {

using sim::Obs;

inline constexpr int kNumPairs = 5;

/// One of the five legal (action, observation) combinations. Category order:
/// (0,0), (0,1), (0,2), (1,1), (1,2).
class ActionObsPair {
 public:
  constexpr ActionObsPair() = default;
  ActionObsPair(int action, Obs obs) {
    if (action != 0 && action != 1) throw DomainError("action must be 0 or 1");
    const int o = static_cast<int>(obs);
    if (action == 0) {
      category_ = static_cast<std::uint8_t>(o);
    } else {
      if (obs == Obs::Idle) throw DomainError("(a=1, o=0) is not a possible action-observation pair");
      category_ = static_cast<std::uint8_t>(2 + o);
    }
  }
  static ActionObsPair from_category(int c) {
    if (c < 0 || c >= kNumPairs) throw DomainError("category index outside 0..4");
    ActionObsPair p;
    p.category_ = static_cast<std::uint8_t>(c);
    return p;
  }

  constexpr int category() const noexcept { return category_; }
  constexpr int action() const noexcept { return category_ >= 3 ? 1 : 0; }
  constexpr Obs obs() const noexcept { return static_cast<Obs>(category_ >= 3 ? category_ - 2 : category_); }

  friend constexpr bool operator==(ActionObsPair, ActionObsPair) = default;

 private:
  std::uint8_t category_ = 0;
};

/// The last L action-observation pairs, oldest first.
class StateWindow {
 public:
  explicit StateWindow(int length = 20) : pairs_(static_cast<std::size_t>(length)) {
    if (length < 1) throw ConfigError("history length must be >= 1");
  }

  void push(ActionObsPair p) {
    for (std::size_t i = 1; i < pairs_.size(); ++i) pairs_[i - 1] = pairs_[i];
    pairs_.back() = p;
  }
  void clear() { std::fill(pairs_.begin(), pairs_.end(), ActionObsPair{}); }

  int length() const noexcept { return static_cast<int>(pairs_.size()); }
  const std::vector<ActionObsPair>& pairs() const noexcept { return pairs_; }
  ActionObsPair operator[](std::size_t i) const { return pairs_[i]; }

  /// Compact form used by the replay buffer.
  std::vector<std::uint8_t> categories() const {
    std::vector<std::uint8_t> c(pairs_.size());
    for (std::size_t i = 0; i < pairs_.size(); ++i) c[i] = static_cast<std::uint8_t>(pairs_[i].category());
    return c;
  }

  friend bool operator==(const StateWindow&, const StateWindow&) = default;

 private:
  std::vector<ActionObsPair> pairs_;
};

/// Writes L one-hot blocks of width 5 to dst[0 .. L*5).
inline void encode_categories(const std::vector<std::uint8_t>& cats, double* dst) {
  for (std::size_t i = 0; i < cats.size(); ++i)
    for (int k = 0; k < kNumPairs; ++k) dst[i * kNumPairs + static_cast<std::size_t>(k)] = (cats[i] == k) ? 1.0 : 0.0;
}

/// L one-hot blocks of width 5, oldest pair first.
inline std::vector<double> encode_state(const StateWindow& w) {
  std::vector<double> v(static_cast<std::size_t>(w.length()) * kNumPairs);
  encode_categories(w.categories(), v.data());
  return v;
}

/// Short-term success counts of the agent and the existing nodes (collectively) over the last Z slots.
class ThroughputWindow {
 public:
  explicit ThroughputWindow(int z = 500)
      : agent_(static_cast<std::size_t>(z), 0), existing_(static_cast<std::size_t>(z), 0) {
    if (z < 1) throw ConfigError("throughput window must be >= 1");
  }

  void push(bool agent_hit, bool existing_hit) {
    agent_sum_ += static_cast<int>(agent_hit) - agent_[head_];
    existing_sum_ += static_cast<int>(existing_hit) - existing_[head_];
    agent_[head_] = agent_hit;
    existing_[head_] = existing_hit;
    head_ = (head_ + 1) % agent_.size();
  }
  void clear() {
    std::fill(agent_.begin(), agent_.end(), 0);
    std::fill(existing_.begin(), existing_.end(), 0);
    agent_sum_ = existing_sum_ = 0;
    head_ = 0;
  }

  int size() const noexcept { return static_cast<int>(agent_.size()); }
  double agent() const noexcept { return static_cast<double>(agent_sum_) / size(); }
  double existing() const noexcept { return static_cast<double>(existing_sum_) / size(); }

 private:
  std::vector<std::uint8_t> agent_, existing_;
  int agent_sum_ = 0, existing_sum_ = 0;
  std::size_t head_ = 0;
};

inline int throughput_reward(Obs o) { return o == Obs::Success ? 1 : 0; }

/// Share of the recent throughput held by the party whose success this slot would be credited to
/// (the agent if it transmitted, the existing nodes otherwise). 1/2 when nothing succeeded recently.
inline double fairness_fraction(int action, double s0, double sn) {
  if (s0 < 0.0 || sn < 0.0) throw DomainError("short-term throughputs must be non-negative");
  const double total = s0 + sn;
  if (total == 0.0) return 0.5;
  return action == 1 ? s0 / total : sn / total;
}

inline double reward(int action, Obs o, double s0, double sn, double nu) {
  if (!(nu >= 0.0 && nu <= 1.0)) throw DomainError("fairness factor must lie in [0,1]");
  return throughput_reward(o) * (1.0 - nu * fairness_fraction(action, s0, sn));
}

/// Two-party Jain fairness index (S0+SN)^2 / (2 (S0^2+SN^2)), in [1/2, 1].
inline double jain_index(double s0, double sn) {
  if (s0 < 0.0 || sn < 0.0) throw DomainError("throughputs must be non-negative");
  if (s0 + sn == 0.0) throw DomainError("Jain index undefined when both throughputs are zero");
  return (s0 + sn) * (s0 + sn) / (2.0 * (s0 * s0 + sn * sn));
}

struct TaskSpec {
  sim::Scenario scenario;
  double nu = 0.0;
  std::string label;

  static TaskSpec from(sim::Scenario s, double nu = 0.0) {
    TaskSpec t{std::move(s), nu, {}};
    t.label = sim::label(t.scenario);
    t.validate();
    return t;
  }
  void validate() const {
    if (scenario.empty()) throw ConfigError("task scenario must be non-empty");
    if (!(nu >= 0.0 && nu <= 1.0)) throw ConfigError("fairness factor must lie in [0,1]");
    for (const auto& p : scenario) sim::validate(p);
  }
};

struct EnvConfig {
  int history = 20;
  int throughput_window = 500;
};

struct StepResult {
  Obs obs = Obs::Idle;
  double reward = 0.0;
  int throughput_reward = 0;
  ActionObsPair pair;
};

/// The agent's view of one task. Must be reset before stepping.
class TaskEnv {
 public:
  TaskEnv(TaskSpec task, EnvConfig cfg, std::uint64_t seed)
      : task_(std::move(task)), cfg_(cfg), seed_(seed), window_(cfg.history), tput_(cfg.throughput_window) {
    task_.validate();
  }

  /// Fresh channel (new node draws per reset), all-(0,0) history, zeroed throughput windows.
  void reset() {
    channel_.emplace(task_.scenario, derive_seed(seed_, resets_++));
    window_.clear();
    tput_.clear();
    t_ = 0;
  }

  StepResult step(int action) {
    if (!channel_) throw UsageError("environment stepped before reset");
    if (action != 0 && action != 1) throw DomainError("action must be 0 or 1");
    const auto out = channel_->step(action == 1);
    StepResult r;
    r.obs = out.obs;
    r.throughput_reward = throughput_reward(out.obs);
    const bool agent_hit = out.obs == Obs::Success && action == 1;
    const bool existing_hit = out.obs == Obs::Success && action == 0;
    tput_.push(agent_hit, existing_hit);
    r.reward = reward(action, out.obs, tput_.agent(), tput_.existing(), task_.nu);
    r.pair = ActionObsPair(action, out.obs);
    window_.push(r.pair);
    ++t_;
    return r;
  }

  /// Swaps the existing-node set in place; history and throughput windows are kept.
  void set_scenario(sim::Scenario scenario) {
    if (!channel_) throw UsageError("environment must be reset before changing its scenario");
    task_.scenario = scenario;
    task_.label = sim::label(task_.scenario);
    channel_->set_scenario(std::move(scenario));
  }

  const StateWindow& state() const noexcept { return window_; }
  const ThroughputWindow& throughput() const noexcept { return tput_; }
  const TaskSpec& task() const noexcept { return task_; }
  const EnvConfig& config() const noexcept { return cfg_; }
  const sim::Channel& channel() const {
    if (!channel_) throw UsageError("environment not reset");
    return *channel_;
  }
  long time() const noexcept { return t_; }

 private:
  TaskSpec task_;
  EnvConfig cfg_;
  std::uint64_t seed_;
  std::uint64_t resets_ = 0;
  std::optional<sim::Channel> channel_;
  StateWindow window_;
  ThroughputWindow tput_;
  long t_ = 0;
};

}  // namespace gma::env
