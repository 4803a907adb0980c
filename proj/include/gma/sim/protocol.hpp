#pragma once

// Slot-level MAC protocols of the existing nodes and AP feedback resolution.

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gma/errors.hpp"
#include "gma/rng.hpp"

namespace gma::sim {

struct QAloha {
  double q = 0.0;
};
struct FwAloha {
  int window = 1;
};
struct EbAloha {
  int window = 1;
  int max_stage = 2;
};
struct Tdma {
  int slot = 1;  // 1-based position inside the frame
  int frame = 10;
};

using ProtocolSpec = std::variant<QAloha, FwAloha, EbAloha, Tdma>;
using Scenario = std::vector<ProtocolSpec>;

struct QAlohaState {};
struct FwAlohaState {
  int counter = 0;
};
struct EbAlohaState {
  int counter = 0;
  int stage = 0;
};
struct TdmaState {
  int frame_pos = 1;
};

using NodeState = std::variant<QAlohaState, FwAlohaState, EbAlohaState, TdmaState>;

/// Channel observation broadcast by the AP.
enum class Obs : int { Idle = 0, Success = 1, Collision = 2 };

struct SlotOutcome {
  std::vector<int> tx_set;  // node 0 is the agent, 1..N the existing nodes
  Obs obs = Obs::Idle;
  std::optional<int> success_node;
};

inline void validate(const ProtocolSpec& spec) {
  std::visit(
      [](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, QAloha>) {
          if (!(p.q >= 0.0 && p.q <= 1.0)) throw ConfigError("q-ALOHA probability must lie in [0,1]");
        } else if constexpr (std::is_same_v<T, FwAloha>) {
          if (p.window < 1) throw ConfigError("FW-ALOHA window must be >= 1");
        } else if constexpr (std::is_same_v<T, EbAloha>) {
          if (p.window < 1) throw ConfigError("EB-ALOHA window must be >= 1");
          if (p.max_stage < 0) throw ConfigError("EB-ALOHA max backoff stage must be >= 0");
          if (p.max_stage > 20) throw ConfigError("EB-ALOHA max backoff stage too large");
        } else {
          if (p.frame < 1) throw ConfigError("TDMA frame length must be >= 1");
          if (p.slot < 1 || p.slot > p.frame) throw ConfigError("TDMA slot must lie in 1..frame");
        }
      },
      spec);
}

/// Window size at a given EB-ALOHA backoff stage: 2^stage * W.
inline int eb_window(const EbAloha& p, int stage) { return (1 << stage) * p.window; }

namespace detail {

[[noreturn]] inline void mismatch() { throw ConfigError("node state does not match its protocol variant"); }

template <class State>
const State& expect(const NodeState& s) {
  const auto* st = std::get_if<State>(&s);
  if (st == nullptr) mismatch();
  return *st;
}

}  // namespace detail

/// Checks that `state` is a legal state of `spec`.
inline void check_state(const ProtocolSpec& spec, const NodeState& state) {
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, QAloha>) {
          detail::expect<QAlohaState>(state);
        } else if constexpr (std::is_same_v<T, FwAloha>) {
          const auto& st = detail::expect<FwAlohaState>(state);
          if (st.counter < 0 || st.counter >= p.window) throw ConfigError("FW-ALOHA counter outside window");
        } else if constexpr (std::is_same_v<T, EbAloha>) {
          const auto& st = detail::expect<EbAlohaState>(state);
          if (st.stage < 0 || st.stage > p.max_stage) throw ConfigError("EB-ALOHA stage outside [0,b]");
          if (st.counter < 0 || st.counter >= eb_window(p, st.stage))
            throw ConfigError("EB-ALOHA counter outside current window");
        } else {
          const auto& st = detail::expect<TdmaState>(state);
          if (st.frame_pos < 1 || st.frame_pos > p.frame) throw ConfigError("TDMA frame position outside 1..F");
        }
      },
      spec);
}

/// State at t = 0: window counters drawn as if a transmission had just resolved, TDMA at frame slot 1.
inline NodeState initial_state(const ProtocolSpec& spec, Rng& rng) {
  return std::visit(
      [&](const auto& p) -> NodeState {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, QAloha>) {
          return QAlohaState{};
        } else if constexpr (std::is_same_v<T, FwAloha>) {
          return FwAlohaState{uniform_index(rng, p.window)};
        } else if constexpr (std::is_same_v<T, EbAloha>) {
          return EbAlohaState{uniform_index(rng, p.window), 0};
        } else {
          return TdmaState{1};
        }
      },
      spec);
}

struct Decision {
  bool transmit = false;
  NodeState staged;
};

/// Transmission decision for the current slot. The staged state carries counter decrements and
/// the frame advance; counter redraws happen in node_feedback once the slot is resolved.
inline Decision node_decide(const ProtocolSpec& spec, const NodeState& state, Rng& rng) {
  check_state(spec, state);
  return std::visit(
      [&](const auto& p) -> Decision {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, QAloha>) {
          // Always consume one draw so the stream position does not depend on q.
          const double u = uniform01(rng);
          return {u < p.q, state};
        } else if constexpr (std::is_same_v<T, FwAloha>) {
          auto st = std::get<FwAlohaState>(state);
          if (st.counter == 0) return {true, st};
          --st.counter;
          return {false, st};
        } else if constexpr (std::is_same_v<T, EbAloha>) {
          auto st = std::get<EbAlohaState>(state);
          if (st.counter == 0) return {true, st};
          --st.counter;
          return {false, st};
        } else {
          auto st = std::get<TdmaState>(state);
          const bool tx = st.frame_pos == p.slot;
          st.frame_pos = st.frame_pos % p.frame + 1;
          return {tx, st};
        }
      },
      spec);
}

/// Post-resolution update of a node's state given whether it transmitted and the slot outcome.
inline NodeState node_feedback(const ProtocolSpec& spec, const NodeState& staged, bool transmitted,
                               const SlotOutcome& outcome, Rng& rng) {
  return std::visit(
      [&](const auto& p) -> NodeState {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, QAloha>) {
          detail::expect<QAlohaState>(staged);
          return staged;
        } else if constexpr (std::is_same_v<T, FwAloha>) {
          auto st = detail::expect<FwAlohaState>(staged);
          if (transmitted) st.counter = uniform_index(rng, p.window);
          return st;
        } else if constexpr (std::is_same_v<T, EbAloha>) {
          auto st = detail::expect<EbAlohaState>(staged);
          if (transmitted) {
            if (outcome.obs == Obs::Collision) {
              st.stage = std::min(st.stage + 1, p.max_stage);
            } else {
              st.stage = 0;
            }
            st.counter = uniform_index(rng, eb_window(p, st.stage));
          }
          return st;
        } else {
          detail::expect<TdmaState>(staged);
          return staged;
        }
      },
      spec);
}

/// Resolves one slot from per-node decisions (index 0 is the agent).
inline SlotOutcome resolve_slot(const std::vector<bool>& decisions) {
  if (decisions.empty()) throw ConfigError("resolve_slot needs at least one node decision");
  SlotOutcome out;
  for (std::size_t i = 0; i < decisions.size(); ++i)
    if (decisions[i]) out.tx_set.push_back(static_cast<int>(i));
  if (out.tx_set.empty()) {
    out.obs = Obs::Idle;
  } else if (out.tx_set.size() == 1) {
    out.obs = Obs::Success;
    out.success_node = out.tx_set.front();
  } else {
    out.obs = Obs::Collision;
  }
  return out;
}


}  // namespace gma::sim
