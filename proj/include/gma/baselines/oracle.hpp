#pragma once

// Optimal long-run sum throughput for a scenario: closed forms where exact, otherwise relative
// value iteration over the joint node state with the agent seeing that state (an upper bound).

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "gma/sim/channel.hpp"
#include "gma/sim/scenario.hpp"

namespace gma::baselines {

enum class OracleKind { Analytic, ValueIterationGenie };

inline const char* to_string(OracleKind k) { return k == OracleKind::Analytic ? "analytic" : "valueIteration-genie"; }

/// Joint-state enumeration of the existing nodes. q-ALOHA nodes have a single (empty) state.
class JointStateSpace {
 public:
  explicit JointStateSpace(sim::Scenario scenario, std::size_t max_states = 2'000'000) : scenario_(std::move(scenario)) {
    if (scenario_.empty()) throw ConfigError("scenario needs at least one existing node");
    std::size_t total = 1;
    for (const auto& p : scenario_) {
      sim::validate(p);
      const std::size_t n = local_size(p);
      sizes_.push_back(n);
      if (total > max_states / n) throw UnsupportedError("joint state space of " + sim::label(scenario_) + " is too large");
      total *= n;
    }
    size_ = total;
  }

  std::size_t size() const noexcept { return size_; }
  const sim::Scenario& scenario() const noexcept { return scenario_; }

  static std::size_t local_size(const sim::ProtocolSpec& p) {
    return std::visit(
        [](const auto& s) -> std::size_t {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, sim::QAloha>) {
            return 1;
          } else if constexpr (std::is_same_v<T, sim::FwAloha>) {
            return static_cast<std::size_t>(s.window);
          } else if constexpr (std::is_same_v<T, sim::EbAloha>) {
            std::size_t n = 0;
            for (int st = 0; st <= s.max_stage; ++st) n += static_cast<std::size_t>(sim::eb_window(s, st));
            return n;
          } else {
            return static_cast<std::size_t>(s.frame);
          }
        },
        p);
  }

  static std::size_t local_index(const sim::ProtocolSpec& p, const sim::NodeState& st) {
    sim::check_state(p, st);
    return std::visit(
        [&](const auto& s) -> std::size_t {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, sim::QAloha>) {
            return 0;
          } else if constexpr (std::is_same_v<T, sim::FwAloha>) {
            return static_cast<std::size_t>(std::get<sim::FwAlohaState>(st).counter);
          } else if constexpr (std::is_same_v<T, sim::EbAloha>) {
            const auto& e = std::get<sim::EbAlohaState>(st);
            std::size_t off = 0;
            for (int k = 0; k < e.stage; ++k) off += static_cast<std::size_t>(sim::eb_window(s, k));
            return off + static_cast<std::size_t>(e.counter);
          } else {
            return static_cast<std::size_t>(std::get<sim::TdmaState>(st).frame_pos - 1);
          }
        },
        p);
  }

  static sim::NodeState local_state(const sim::ProtocolSpec& p, std::size_t i) {
    return std::visit(
        [&](const auto& s) -> sim::NodeState {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, sim::QAloha>) {
            return sim::QAlohaState{};
          } else if constexpr (std::is_same_v<T, sim::FwAloha>) {
            return sim::FwAlohaState{static_cast<int>(i)};
          } else if constexpr (std::is_same_v<T, sim::EbAloha>) {
            int stage = 0;
            while (i >= static_cast<std::size_t>(sim::eb_window(s, stage))) i -= static_cast<std::size_t>(sim::eb_window(s, stage++));
            return sim::EbAlohaState{static_cast<int>(i), stage};
          } else {
            return sim::TdmaState{static_cast<int>(i) + 1};
          }
        },
        p);
  }

  std::size_t index(const std::vector<sim::NodeState>& states) const {
    if (states.size() != scenario_.size()) throw ConfigError("node count mismatch");
    std::size_t idx = 0;
    for (std::size_t k = 0; k < scenario_.size(); ++k) idx = idx * sizes_[k] + local_index(scenario_[k], states[k]);
    return idx;
  }

  std::vector<std::size_t> decompose(std::size_t idx) const {
    std::vector<std::size_t> out(scenario_.size());
    for (std::size_t k = scenario_.size(); k-- > 0;) {
      out[k] = idx % sizes_[k];
      idx /= sizes_[k];
    }
    return out;
  }

  std::size_t compose(const std::vector<std::size_t>& locals) const {
    std::size_t idx = 0;
    for (std::size_t k = 0; k < scenario_.size(); ++k) idx = idx * sizes_[k] + locals[k];
    return idx;
  }

  const std::vector<std::size_t>& local_sizes() const noexcept { return sizes_; }

 private:
  sim::Scenario scenario_;
  std::vector<std::size_t> sizes_;
  std::size_t size_ = 0;
};

struct Successor {
  std::size_t state;
  double prob;
};

struct ActionModel {
  double success = 0.0;  // expected immediate reward (probability of exactly one transmitter)
  std::vector<Successor> next;
};

namespace detail {

/// Next-state distribution of one node, given whether it transmitted and the slot observation.
inline std::vector<Successor> local_next(const sim::ProtocolSpec& p, std::size_t local, bool transmitted, sim::Obs obs) {
  const auto st = JointStateSpace::local_state(p, local);
  std::vector<Successor> out;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, sim::QAloha>) {
          out.push_back({0, 1.0});
        } else if constexpr (std::is_same_v<T, sim::FwAloha>) {
          const int c = std::get<sim::FwAlohaState>(st).counter;
          if (transmitted) {
            for (int k = 0; k < s.window; ++k) out.push_back({static_cast<std::size_t>(k), 1.0 / s.window});
          } else {
            out.push_back({static_cast<std::size_t>(c - 1), 1.0});
          }
        } else if constexpr (std::is_same_v<T, sim::EbAloha>) {
          auto e = std::get<sim::EbAlohaState>(st);
          if (transmitted) {
            e.stage = obs == sim::Obs::Collision ? std::min(e.stage + 1, s.max_stage) : 0;
            const int w = sim::eb_window(s, e.stage);
            for (int k = 0; k < w; ++k)
              out.push_back({JointStateSpace::local_index(p, sim::EbAlohaState{k, e.stage}), 1.0 / w});
          } else {
            --e.counter;
            out.push_back({JointStateSpace::local_index(p, e), 1.0});
          }
        } else {
          const int pos = std::get<sim::TdmaState>(st).frame_pos;
          out.push_back({static_cast<std::size_t>(pos % s.frame), 1.0});
        }
      },
      p);
  return out;
}

}  // namespace detail

/// Expected reward and successor distribution for every (joint state, agent action).
inline std::vector<std::array<ActionModel, 2>> build_model(const JointStateSpace& space) {
  const auto& sc = space.scenario();
  const std::size_t n = sc.size();
  std::vector<std::size_t> coins;
  for (std::size_t k = 0; k < n; ++k)
    if (std::holds_alternative<sim::QAloha>(sc[k])) coins.push_back(k);
  if (coins.size() > 16) throw UnsupportedError("too many q-ALOHA nodes for exact enumeration");
  std::vector<std::array<ActionModel, 2>> model(space.size());
  std::vector<bool> tx(n);
  for (std::size_t s = 0; s < space.size(); ++s) {
    const auto locals = space.decompose(s);
    std::vector<bool> base(n, false);
    for (std::size_t k = 0; k < n; ++k) {
      const auto st = JointStateSpace::local_state(sc[k], locals[k]);
      if (auto* f = std::get_if<sim::FwAlohaState>(&st)) base[k] = f->counter == 0;
      if (auto* e = std::get_if<sim::EbAlohaState>(&st)) base[k] = e->counter == 0;
      if (auto* t = std::get_if<sim::TdmaState>(&st)) base[k] = t->frame_pos == std::get<sim::Tdma>(sc[k]).slot;
    }
    for (int a = 0; a < 2; ++a) {
      auto& am = model[s][static_cast<std::size_t>(a)];
      std::vector<double> dist;  // dense accumulation keyed by successor
      std::vector<std::size_t> touched;
      for (std::uint32_t mask = 0; mask < (1u << coins.size()); ++mask) {
        double pc = 1.0;
        tx = base;
        for (std::size_t j = 0; j < coins.size(); ++j) {
          const double q = std::get<sim::QAloha>(sc[coins[j]]).q;
          const bool on = (mask >> j) & 1u;
          pc *= on ? q : 1.0 - q;
          tx[coins[j]] = on;
        }
        if (pc == 0.0) continue;
        int count = a;
        for (bool b : tx) count += b;
        const auto obs = count == 0 ? sim::Obs::Idle : count == 1 ? sim::Obs::Success : sim::Obs::Collision;
        if (count == 1) am.success += pc;
        // Product of independent per-node successor distributions.
        std::vector<std::pair<std::vector<std::size_t>, double>> partial{{{}, pc}};
        for (std::size_t k = 0; k < n; ++k) {
          const auto nx = detail::local_next(sc[k], locals[k], tx[k], obs);
          std::vector<std::pair<std::vector<std::size_t>, double>> grown;
          grown.reserve(partial.size() * nx.size());
          for (const auto& [pre, pp] : partial)
            for (const auto& sx : nx) {
              auto v = pre;
              v.push_back(sx.state);
              grown.emplace_back(std::move(v), pp * sx.prob);
            }
          partial = std::move(grown);
        }
        for (const auto& [loc, pp] : partial) {
          const auto idx = space.compose(loc);
          auto it = std::find_if(am.next.begin(), am.next.end(), [&](const Successor& x) { return x.state == idx; });
          if (it == am.next.end()) {
            am.next.push_back({idx, pp});
          } else {
            it->prob += pp;
          }
        }
      }
      std::sort(am.next.begin(), am.next.end(), [](const Successor& x, const Successor& y) { return x.state < y.state; });
    }
  }
  return model;
}

struct GenieSolution {
  double gain = 0.0;
  std::vector<std::uint8_t> policy;  // per joint state: 1 = transmit
  int iterations = 0;
  double span = 0.0;
};

/// Relative value iteration on the aperiodic transform P' = (1 - tau) I + tau P. Ties resolve
/// toward staying silent.
inline GenieSolution solve_genie(const JointStateSpace& space, double tol = 1e-12, int max_iter = 1'000'000,
                                 double tau = 0.5) {
  const auto model = build_model(space);
  const std::size_t n = space.size();
  std::vector<double> h(n, 0.0), th(n, 0.0);
  GenieSolution sol;
  sol.policy.assign(n, 0);
  auto q_value = [&](std::size_t s, int a) {
    const auto& am = model[s][static_cast<std::size_t>(a)];
    double v = am.success;
    for (const auto& sx : am.next) v += sx.prob * h[sx.state];
    return tau * v + (1.0 - tau) * h[s];
  };
  for (int it = 1; it <= max_iter; ++it) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t s = 0; s < n; ++s) {
      const double q0 = q_value(s, 0), q1 = q_value(s, 1);
      th[s] = std::max(q0, q1);
      sol.policy[s] = q1 > q0 + 1e-12 ? 1 : 0;
      lo = std::min(lo, th[s] - h[s]);
      hi = std::max(hi, th[s] - h[s]);
    }
    const double ref = th[0];
    for (std::size_t s = 0; s < n; ++s) h[s] = th[s] - ref;
    sol.iterations = it;
    sol.span = hi - lo;
    sol.gain = 0.5 * (hi + lo) / tau;
    if (sol.span < tol) return sol;
  }
  throw NumericError("genie value iteration did not converge");
}

struct OracleResult {
  double value = 0.0;
  OracleKind kind = OracleKind::Analytic;
  std::string policy_sketch;
};

/// Closed form when the scenario is a lone TDMA node, a lone q-ALOHA node, or one TDMA plus one
/// q-ALOHA node.
inline std::optional<OracleResult> analytic_throughput(const sim::Scenario& sc) {
  const sim::Tdma* tdma = nullptr;
  const sim::QAloha* qa = nullptr;
  int others = 0;
  for (const auto& p : sc) {
    if (auto* t = std::get_if<sim::Tdma>(&p)) {
      if (tdma) return std::nullopt;
      tdma = t;
    } else if (auto* q = std::get_if<sim::QAloha>(&p)) {
      if (qa) return std::nullopt;
      qa = q;
    } else {
      ++others;
    }
  }
  if (others > 0 || (!tdma && !qa)) return std::nullopt;
  OracleResult r;
  r.kind = OracleKind::Analytic;
  if (tdma && !qa) {
    r.value = 1.0;
    r.policy_sketch = "transmit in every slot except the TDMA slot";
  } else if (qa && !tdma) {
    r.value = std::max(qa->q, 1.0 - qa->q);
    r.policy_sketch = qa->q < 0.5 ? "always transmit" : "never transmit";
  } else {
    const double f = tdma->frame;
    r.value = ((1.0 - qa->q) + (f - 1.0) * std::max(qa->q, 1.0 - qa->q)) / f;
    r.policy_sketch = std::string("silent in the TDMA slot; ") + (qa->q < 0.5 ? "transmit" : "silent") + " otherwise";
  }
  return r;
}

inline OracleResult optimal_throughput(const sim::Scenario& sc) {
  for (const auto& p : sc) sim::validate(p);
  if (auto a = analytic_throughput(sc)) return *a;
  const JointStateSpace space(sc);
  const auto sol = solve_genie(space);
  OracleResult r;
  r.value = std::clamp(sol.gain, 0.0, 1.0);
  r.kind = OracleKind::ValueIterationGenie;
  std::size_t tx = 0;
  for (auto b : sol.policy) tx += b;
  std::ostringstream os;
  os << "genie table over " << space.size() << " joint states, transmit in " << tx;
  r.policy_sketch = os.str();
  return r;
}

/// Agent decision from the full node state; the q-ALOHA coins of the current slot are not seen.
using GeniePolicy = std::function<bool(const std::vector<sim::NodeState>&)>;

inline GeniePolicy genie_policy(const sim::Scenario& sc) {
  auto space = std::make_shared<JointStateSpace>(sc);
  auto sol = std::make_shared<GenieSolution>(solve_genie(*space));
  return [space, sol](const std::vector<sim::NodeState>& st) { return sol->policy[space->index(st)] != 0; };
}

/// Policy realizing the oracle value (analytic rule or genie table).
inline GeniePolicy oracle_policy(const sim::Scenario& sc) {
  if (analytic_throughput(sc)) {
    return [sc](const std::vector<sim::NodeState>& st) {
      bool transmit = true;
      for (std::size_t k = 0; k < sc.size(); ++k) {
        if (auto* t = std::get_if<sim::Tdma>(&sc[k])) {
          if (std::get<sim::TdmaState>(st[k]).frame_pos == t->slot) return false;
        } else if (auto* q = std::get_if<sim::QAloha>(&sc[k])) {
          transmit = transmit && q->q < 0.5;
        }
      }
      return transmit;
    };
  }
  return genie_policy(sc);
}

struct RolloutEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  long slots = 0;
};

/// Monte Carlo sum throughput of a state-feedback policy.
inline RolloutEstimate rollout(const sim::Scenario& sc, const GeniePolicy& policy, long slots, std::uint64_t seed) {
  sim::Channel ch(sc, seed);
  long hits = 0;
  for (long t = 0; t < slots; ++t) hits += ch.step(policy(ch.states())).obs == sim::Obs::Success;
  RolloutEstimate r;
  r.slots = slots;
  if (slots > 0) {
    r.mean = static_cast<double>(hits) / static_cast<double>(slots);
    r.stderr_ = std::sqrt(r.mean * (1.0 - r.mean) / static_cast<double>(slots));
  }
  return r;
}

}  // namespace gma::baselines
