#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <vector>

#include "gma/sim/protocol.hpp"

namespace gma::sim {

/// Shared slotted channel with N existing nodes and one agent (node 0).
///
/// Each existing node owns an RNG stream derived from (seed, node index), so appending a node to
/// a scenario never changes the draws of the nodes already present.
class Channel {
 public:
  Channel(Scenario scenario, std::uint64_t seed) : seed_(seed) { set_scenario(std::move(scenario)); }

  /// Replaces the existing-node set. Nodes get fresh streams from the next unused stream ids.
  void set_scenario(Scenario scenario) {
    if (scenario.empty()) throw ConfigError("scenario needs at least one existing node");
    for (const auto& p : scenario) validate(p);
    scenario_ = std::move(scenario);
    rngs_.clear();
    states_.clear();
    for (std::size_t i = 0; i < scenario_.size(); ++i) {
      rngs_.push_back(make_rng(seed_, next_stream_++));
      states_.push_back(initial_state(scenario_[i], rngs_.back()));
    }
  }

  /// Advances one slot given the agent's decision.
  SlotOutcome step(bool agent_tx) {
    decisions_.assign(scenario_.size() + 1, false);
    decisions_[0] = agent_tx;
    staged_.resize(scenario_.size());
    for (std::size_t i = 0; i < scenario_.size(); ++i) {
      auto d = node_decide(scenario_[i], states_[i], rngs_[i]);
      decisions_[i + 1] = d.transmit;
      staged_[i] = std::move(d.staged);
    }
    auto out = resolve_slot(decisions_);
    for (std::size_t i = 0; i < scenario_.size(); ++i)
      states_[i] = node_feedback(scenario_[i], staged_[i], decisions_[i + 1], out, rngs_[i]);
    return out;
  }

  const Scenario& scenario() const noexcept { return scenario_; }
  const std::vector<NodeState>& states() const noexcept { return states_; }
  std::size_t num_nodes() const noexcept { return scenario_.size(); }

 private:
  std::uint64_t seed_;
  std::uint64_t next_stream_ = 0;
  Scenario scenario_;
  std::vector<Rng> rngs_;
  std::vector<NodeState> states_;
  std::vector<bool> decisions_;
  std::vector<NodeState> staged_;
};

struct SlotRecord {
  long t = 0;
  bool agent_tx = false;
  SlotOutcome outcome;
};

using AgentPolicy = std::function<bool(long)>;

/// Runs T slots. Reproducible for a fixed (scenario, policy, seed).
inline std::vector<SlotRecord> simulate(const Scenario& scenario, const AgentPolicy& policy, long slots,
                                        std::uint64_t seed) {
  if (slots < 0) throw ConfigError("slot count must be non-negative");
  Channel ch(scenario, seed);
  std::vector<SlotRecord> trace;
  trace.reserve(static_cast<std::size_t>(slots));
  for (long t = 0; t < slots; ++t) {
    const bool tx = policy(t);
    trace.push_back({t, tx, ch.step(tx)});
  }
  return trace;
}

/// Fraction of slots with exactly one transmitter.
inline double sum_throughput(const std::vector<SlotRecord>& trace) {
  if (trace.empty()) return 0.0;
  long hits = 0;
  for (const auto& r : trace) hits += r.outcome.obs == Obs::Success;
  return static_cast<double>(hits) / static_cast<double>(trace.size());
}

/// One JSON object per line: {"t":..,"agentTx":..,"obs":..,"successNode":..|null}.
inline void write_trace_line(std::ostream& os, const SlotRecord& r) {
  os << "{\"t\":" << r.t << ",\"agentTx\":" << (r.agent_tx ? "true" : "false")
     << ",\"obs\":" << static_cast<int>(r.outcome.obs) << ",\"successNode\":";
  if (r.outcome.success_node)
    os << *r.outcome.success_node;
  else
    os << "null";
  os << "}\n";
}

}  // namespace gma::sim
