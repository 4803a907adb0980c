#include <gtest/gtest.h>

#include <cmath>

#include "gma/sim/channel.hpp"
#include "gma/sim/scenario.hpp"

using namespace gma;
using namespace gma::sim;

namespace {

bool decide(const ProtocolSpec& p, const NodeState& s, NodeState* staged = nullptr) {
  Rng rng = make_rng(1, 0);
  auto d = node_decide(p, s, rng);
  if (staged) *staged = d.staged;
  return d.transmit;
}

SlotOutcome outcome_of(std::vector<bool> d) { return resolve_slot(d); }

}  // namespace

TEST(NodeDecide, QAlohaOneAlwaysTransmits) {
  Rng rng = make_rng(3, 0);
  for (int i = 0; i < 1000; ++i) EXPECT_TRUE(node_decide(QAloha{1.0}, QAlohaState{}, rng).transmit);
}

TEST(NodeDecide, QAlohaZeroNeverTransmits) {
  Rng rng = make_rng(3, 0);
  for (int i = 0; i < 1000; ++i) EXPECT_FALSE(node_decide(QAloha{0.0}, QAlohaState{}, rng).transmit);
}

TEST(NodeDecide, TdmaTransmitsOnlyInItsSlot) {
  EXPECT_TRUE(decide(Tdma{5, 10}, TdmaState{5}));
  EXPECT_FALSE(decide(Tdma{5, 10}, TdmaState{6}));
}

TEST(NodeDecide, TdmaFramePositionWraps) {
  NodeState st;
  decide(Tdma{5, 10}, TdmaState{10}, &st);
  EXPECT_EQ(std::get<TdmaState>(st).frame_pos, 1);
}

TEST(NodeDecide, FwCounterDecrements) {
  NodeState st;
  EXPECT_FALSE(decide(FwAloha{3}, FwAlohaState{2}, &st));
  EXPECT_EQ(std::get<FwAlohaState>(st).counter, 1);
  EXPECT_TRUE(decide(FwAloha{3}, FwAlohaState{0}));
}

TEST(NodeDecide, VariantMismatchIsConfigError) {
  Rng rng = make_rng(1, 0);
  EXPECT_THROW(node_decide(Tdma{5, 10}, FwAlohaState{0}, rng), ConfigError);
  EXPECT_THROW(node_decide(QAloha{0.5}, TdmaState{1}, rng), ConfigError);
}

TEST(NodeDecide, InconsistentStateIsConfigError) {
  Rng rng = make_rng(1, 0);
  EXPECT_THROW(node_decide(FwAloha{3}, FwAlohaState{3}, rng), ConfigError);
  EXPECT_THROW(node_decide(Tdma{5, 10}, TdmaState{11}, rng), ConfigError);
  EXPECT_THROW(node_decide(EbAloha{2, 2}, EbAlohaState{0, 3}, rng), ConfigError);
}

TEST(ProtocolSpec, InvalidParametersRejected) {
  EXPECT_THROW(validate(QAloha{1.5}), ConfigError);
  EXPECT_THROW(validate(QAloha{-0.1}), ConfigError);
  EXPECT_THROW(validate(FwAloha{0}), ConfigError);
  EXPECT_THROW(validate((EbAloha{2, -1})), ConfigError);
  EXPECT_THROW(validate((Tdma{0, 10})), ConfigError);
  EXPECT_THROW(validate((Tdma{11, 10})), ConfigError);
}

TEST(NodeFeedback, EbCollisionDoublesWindow) {
  const EbAloha p{2, 2};
  const auto col = outcome_of({true, true});
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng = make_rng(s, 0);
    const auto st = std::get<EbAlohaState>(node_feedback(p, EbAlohaState{0, 0}, true, col, rng));
    EXPECT_EQ(st.stage, 1);
    EXPECT_GE(st.counter, 0);
    EXPECT_LE(st.counter, 3);
  }
}

TEST(NodeFeedback, EbStageCappedAtMax) {
  const EbAloha p{2, 2};
  Rng rng = make_rng(1, 0);
  const auto st = std::get<EbAlohaState>(node_feedback(p, EbAlohaState{0, 2}, true, outcome_of({true, true}), rng));
  EXPECT_EQ(st.stage, 2);
  EXPECT_LE(st.counter, 7);
}

TEST(NodeFeedback, EbSuccessResetsStage) {
  const EbAloha p{2, 2};
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng = make_rng(s, 0);
    const auto st = std::get<EbAlohaState>(node_feedback(p, EbAlohaState{0, 2}, true, outcome_of({false, true}), rng));
    EXPECT_EQ(st.stage, 0);
    EXPECT_LE(st.counter, 1);
  }
}

TEST(NodeFeedback, FwUnitWindowRedrawsZero) {
  Rng rng = make_rng(1, 0);
  const auto st = node_feedback(FwAloha{1}, FwAlohaState{0}, true, outcome_of({false, true}), rng);
  EXPECT_EQ(std::get<FwAlohaState>(st).counter, 0);
}

TEST(NodeFeedback, NonTransmitterKeepsStagedState) {
  Rng rng = make_rng(1, 0);
  const auto st = node_feedback(FwAloha{4}, FwAlohaState{2}, false, outcome_of({true, false}), rng);
  EXPECT_EQ(std::get<FwAlohaState>(st).counter, 2);
}

TEST(ResolveSlot, Examples) {
  auto idle = outcome_of({false, false});
  EXPECT_EQ(idle.obs, Obs::Idle);
  EXPECT_FALSE(idle.success_node);
  auto ok = outcome_of({true, false});
  EXPECT_EQ(ok.obs, Obs::Success);
  EXPECT_EQ(ok.success_node, 0);
  auto col = outcome_of({true, true});
  EXPECT_EQ(col.obs, Obs::Collision);
  EXPECT_FALSE(col.success_node);
}

TEST(ResolveSlot, EmptyIsConfigError) { EXPECT_THROW(resolve_slot({}), ConfigError); }

TEST(ResolveSlot, PropertyObservationMatchesTxSet) {
  Rng rng = make_rng(9, 0);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<bool> d(1 + uniform_index(rng, 5));
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = uniform01(rng) < 0.4;
    const auto out = resolve_slot(d);
    const auto n = std::count(d.begin(), d.end(), true);
    ASSERT_EQ(static_cast<long>(out.tx_set.size()), n);
    ASSERT_EQ(out.obs == Obs::Idle, n == 0);
    ASSERT_EQ(out.obs == Obs::Success, n == 1);
    ASSERT_EQ(out.obs == Obs::Collision, n >= 2);
    if (n == 1) {
      ASSERT_EQ(*out.success_node, out.tx_set.front());
    } else {
      ASSERT_FALSE(out.success_node);
    }
  }
}

TEST(Simulate, LoneTdmaExactTenth) {
  const auto trace = simulate({Tdma{5, 10}}, [](long) { return false; }, 10000, 1);
  EXPECT_EQ(sum_throughput(trace), 0.1);
}

TEST(Simulate, LoneQAlohaHalf) {
  const auto trace = simulate({QAloha{0.5}}, [](long) { return false; }, 100000, 2);
  EXPECT_NEAR(sum_throughput(trace), 0.5, 0.01);
}

TEST(Simulate, TwoQAlohaHalf) {
  const auto trace = simulate({QAloha{0.5}, QAloha{0.5}}, [](long) { return false; }, 100000, 3);
  EXPECT_NEAR(sum_throughput(trace), 0.5, 0.01);
}

TEST(Simulate, ZeroSlotsEmpty) {
  EXPECT_TRUE(simulate({Tdma{5, 10}}, [](long) { return true; }, 0, 1).empty());
  EXPECT_EQ(sum_throughput({}), 0.0);
}

TEST(Simulate, SameSeedBitIdentical) {
  const Scenario sc{QAloha{0.3}, FwAloha{3}, EbAloha{2, 2}, Tdma{4, 10}};
  auto pol = [](long t) { return t % 3 == 0; };
  const auto a = simulate(sc, pol, 5000, 42);
  const auto b = simulate(sc, pol, 5000, 42);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].outcome.tx_set, b[i].outcome.tx_set);
    ASSERT_EQ(a[i].outcome.obs, b[i].outcome.obs);
  }
}

TEST(Simulate, AddingNodeDoesNotPerturbOthers) {
  const auto a = simulate({QAloha{0.4}}, [](long) { return false; }, 3000, 7);
  const auto b = simulate({QAloha{0.4}, FwAloha{3}}, [](long) { return false; }, 3000, 7);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool node1_a = std::count(a[i].outcome.tx_set.begin(), a[i].outcome.tx_set.end(), 1) > 0;
    const bool node1_b = std::count(b[i].outcome.tx_set.begin(), b[i].outcome.tx_set.end(), 1) > 0;
    ASSERT_EQ(node1_a, node1_b);
  }
}

namespace {

std::vector<long> tx_times(const std::vector<SlotRecord>& trace, int node) {
  std::vector<long> t;
  for (const auto& r : trace)
    if (std::count(r.outcome.tx_set.begin(), r.outcome.tx_set.end(), node) > 0) t.push_back(r.t);
  return t;
}

}  // namespace

TEST(Simulate, TdmaOncePerFrameAtOffset) {
  const auto trace = simulate({Tdma{7, 10}}, [](long t) { return t % 2 == 0; }, 1000, 1);
  const auto t = tx_times(trace, 1);
  ASSERT_EQ(t.size(), 100u);
  for (long x : t) EXPECT_EQ(x % 10, 6);
}

TEST(Simulate, WindowGapsWithinBounds) {
  const auto fw = tx_times(simulate({FwAloha{4}}, [](long t) { return t % 5 == 0; }, 20000, 5), 1);
  for (std::size_t i = 1; i < fw.size(); ++i) {
    EXPECT_GE(fw[i] - fw[i - 1], 1);
    EXPECT_LE(fw[i] - fw[i - 1], 4);
  }
  const auto eb = tx_times(simulate({EbAloha{2, 2}}, [](long) { return true; }, 20000, 5), 1);
  long max_gap = 0;
  for (std::size_t i = 1; i < eb.size(); ++i) {
    EXPECT_GE(eb[i] - eb[i - 1], 1);
    EXPECT_LE(eb[i] - eb[i - 1], 8);
    max_gap = std::max(max_gap, eb[i] - eb[i - 1]);
  }
  EXPECT_GT(max_gap, 4);  // windows do grow under collisions
}

TEST(Simulate, LoneQAlohaWithinThreeStandardErrors) {
  for (double q : {0.1, 0.37, 0.8}) {
    const auto trace = simulate({QAloha{q}}, [](long) { return false; }, 100000, 11);
    const double se = std::sqrt(q * (1 - q) / 1e5);
    EXPECT_LE(std::abs(sum_throughput(trace) - q), 3 * se) << q;
  }
}

TEST(Scenario, ParseAndLabel) {
  const auto sc = parse_scenario("tdma:2+qaloha:0.1");
  ASSERT_EQ(sc.size(), 2u);
  EXPECT_EQ(label(sc), "TDMA(2)+q-ALOHA(0.1)");
  EXPECT_EQ(label(parse_scenario("ebaloha:3")), "EB-ALOHA(3)");
  EXPECT_EQ(std::get<EbAloha>(parse_scenario("ebaloha:3")[0]).max_stage, 2);
  EXPECT_EQ(std::get<Tdma>(parse_scenario("tdma:3:5")[0]).frame, 5);
  EXPECT_EQ(label(parse_scenario("fwaloha:4")), "FW-ALOHA(4)");
  EXPECT_THROW(parse_scenario("csma:1"), ConfigError);
  EXPECT_THROW(parse_scenario("tdma:12"), ConfigError);
  EXPECT_THROW(parse_scenario(""), ConfigError);
}

TEST(Channel, EmptyScenarioRejected) { EXPECT_THROW(Channel({}, 1), ConfigError); }
