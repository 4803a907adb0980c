#include <gtest/gtest.h>

#include <sstream>

#include "gma/meta/harness.hpp"

using namespace gma;
using namespace gma::meta;

namespace {

GmaConfig tiny() {
  GmaConfig c;
  c.env.history = 3;
  c.env.throughput_window = 20;
  c.hidden = 8;
  c.experts = 2;
  c.latent_dim = 2;
  c.batch_size = 8;
  c.context_size = 10;
  c.buffer_capacity = 50;
  return c;
}

env::TaskSpec tdma(int frame) {
  sim::Scenario s;
  for (int i = 1; i <= frame; ++i) s.push_back(sim::Tdma{i, frame + 1});
  return env::TaskSpec::from(s);
}

env::TaskSpec qaloha(double q) { return env::TaskSpec::from({sim::QAloha{q}}); }

Transition make_tr(long t, int history, Rng& rng) {
  Transition tr;
  tr.t = t;
  for (int i = 0; i < history; ++i) {
    tr.state.push_back(static_cast<std::uint8_t>(uniform_index(rng, 5)));
    tr.next_state.push_back(static_cast<std::uint8_t>(uniform_index(rng, 5)));
  }
  tr.action = uniform_index(rng, 2);
  tr.squashed = tr.action ? 0.5 : -0.5;
  tr.reward = uniform_index(rng, 2);
  return tr;
}

ReplayBuffer filled(int n, int history, Rng& rng, std::size_t cap = 1000) {
  ReplayBuffer b(cap);
  for (int i = 0; i < n; ++i) b.push(make_tr(i, history, rng));
  return b;
}

std::vector<std::uint64_t> hashes(const GmaAgent& a) {
  return {ad::value_hash(a.encoder.params), ad::value_hash(a.sac.actor),   ad::value_hash(a.sac.critic1),
          ad::value_hash(a.sac.critic2),    ad::value_hash(a.sac.target1), ad::value_hash(a.sac.target2),
          ad::value_hash(a.sac.temperature)};
}

}  // namespace

TEST(ReplayBuffer, FifoEviction) {
  ReplayBuffer b(3);
  Rng rng = make_rng(60, 0);
  for (int i = 0; i < 5; ++i) b.push(make_tr(i, 2, rng));
  EXPECT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].t, 2);
  EXPECT_EQ(b.back().t, 4);
  EXPECT_THROW(ReplayBuffer(0), ConfigError);
  ReplayBuffer empty(4);
  EXPECT_THROW(empty.sample(1, rng), UsageError);
}

TEST(ReplayBuffer, SampleWithoutReplacementInsideWindow) {
  Rng rng = make_rng(61, 0);
  const auto b = filled(200, 2, rng);
  for (int trial = 0; trial < 50; ++trial) {
    auto idx = b.sample(64, rng, 150);
    std::set<std::size_t> uniq(idx.begin(), idx.end());
    EXPECT_EQ(uniq.size(), 64u);
    EXPECT_GE(*uniq.begin(), 50u);
    EXPECT_LT(*uniq.rbegin(), 200u);
  }
  EXPECT_EQ(b.sample(300, rng).size(), 300u);
}

TEST(ReplayBuffer, BatchEncoding) {
  Rng rng = make_rng(62, 0);
  const auto b = filled(5, 3, rng);
  const auto batch = make_batch(b, {4, 1});
  EXPECT_EQ(batch.states.cols(), 15);
  EXPECT_EQ(batch.states.row(0).sum(), 3.0);
  EXPECT_EQ(batch.states(0, 5 * 0 + b[4].state[0]), 1.0);
  EXPECT_EQ(batch.rewards(1, 0), b[1].reward);
  EXPECT_EQ(batch.actions(0, 0), b[4].squashed);
  const auto ctx = make_context(b, {2}, 3);
  EXPECT_EQ(ctx.cols(), context_width(3));
  EXPECT_EQ(ctx(0, 15), b[2].action);
  EXPECT_EQ(ctx(0, 16), b[2].reward);
}

TEST(ContextCache, MatchesDirectEncoderPosterior) {
  auto cfg = tiny();
  GmaAgent agent(cfg, 1);
  Rng rng = make_rng(63, 0);
  const auto b = filled(25, cfg.env.history, rng);
  ContextCache cache(agent.encoder, cfg.env.history, 10);
  for (std::size_t i = 0; i < b.size(); ++i) cache.push(b[i]);
  EXPECT_EQ(cache.size(), 10u);
  EXPECT_EQ(cache.newest_time(), 24);
  std::vector<std::size_t> last10(10);
  std::iota(last10.begin(), last10.end(), 15u);
  const auto ctx = make_context(b, last10, cfg.env.history);
  const auto direct = agent.encoder.posteriors(ctx);
  const auto cached = cache.posterior();
  EXPECT_LT((cached.weights - agent.encoder.gate_weights(ctx)).cwiseAbs().maxCoeff(), 1e-12);
  for (std::size_t m = 0; m < direct.size(); ++m) {
    EXPECT_LT((cached.experts[m].mean - direct[m].mean).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT(((cached.experts[m].var - direct[m].var).array() / direct[m].var.array()).abs().maxCoeff(), 1e-12);
  }
}

TEST(ContextCache, EmptyFallsBackToPrior) {
  auto cfg = tiny();
  GmaAgent agent(cfg, 2);
  ContextCache cache(agent.encoder, cfg.env.history, 5);
  Rng a = make_rng(64, 0), b = make_rng(64, 0);
  EXPECT_EQ(cache.sample_z(a), moe::prior_sample(cfg.latent_dim, b));
  EXPECT_TRUE(cache.sample_z(a, true).isZero(0.0));
  EXPECT_EQ(cache.newest_time(), -1);
  EXPECT_THROW(cache.posterior(), UsageError);
}

TEST(Collect, ContextSeesOnlyPastAndFillsBuffer) {
  auto cfg = tiny();
  GmaAgent agent(cfg, 3);
  env::TaskEnv env(qaloha(0.3), cfg.env, 5);
  ReplayBuffer buf(static_cast<std::size_t>(cfg.buffer_capacity));
  Rng rng = make_rng(65, 0);
  const auto m = collect_phase(env, agent, buf, 30, rng);
  EXPECT_EQ(buf.size(), 30u);
  for (std::size_t i = 0; i < buf.size(); ++i) EXPECT_EQ(buf[i].t, static_cast<long>(i));
  // next_state of one transition is the state of the following one
  for (std::size_t i = 1; i < buf.size(); ++i) EXPECT_EQ(buf[i].state, buf[i - 1].next_state);
  EXPECT_GE(m.sum_throughput, 0.0);
  EXPECT_LE(m.sum_throughput, 1.0);
  EXPECT_NEAR(m.agent + m.existing, m.sum_throughput, 1e-15);
}

TEST(Collect, ReplayIsolatedPerTask) {
  auto cfg = tiny();
  GmaAgent agent(cfg, 4);
  env::TaskEnv e1(tdma(2), cfg.env, 1), e2(qaloha(0.9), cfg.env, 2);
  ReplayBuffer b1(50), b2(50);
  Rng rng = make_rng(66, 0);
  collect_phase(e1, agent, b1, 20, rng);
  const auto before = b1.size();
  collect_phase(e2, agent, b2, 20, rng);
  EXPECT_EQ(b1.size(), before);
  EXPECT_EQ(b2.size(), 20u);
}

TEST(OptimizeStep, SkipsTasksWithoutFullBatch) {
  auto cfg = tiny();
  GmaAgent agent(cfg, 5);
  Rng rng = make_rng(67, 0);
  std::vector<ReplayBuffer> bufs;
  bufs.push_back(filled(cfg.batch_size - 1, cfg.env.history, rng));
  const auto h = hashes(agent);
  EXPECT_EQ(optimize_step(agent, bufs, rng).tasks, 0);
  EXPECT_EQ(hashes(agent), h);
  bufs.push_back(filled(cfg.batch_size, cfg.env.history, rng));
  EXPECT_EQ(optimize_step(agent, bufs, rng).tasks, 1);
}

TEST(OptimizeStep, TargetMovesByEta) {
  auto cfg = tiny();
  cfg.eta = 0.25;
  GmaAgent agent(cfg, 6);
  Rng rng = make_rng(68, 0);
  std::vector<ReplayBuffer> bufs;
  bufs.push_back(filled(30, cfg.env.history, rng));
  bufs.push_back(filled(30, cfg.env.history, rng));
  const auto old_target = agent.sac.target1;
  const auto old_encoder = ad::value_hash(agent.encoder.params);
  const auto st = optimize_step(agent, bufs, rng);
  EXPECT_EQ(st.tasks, 2);
  EXPECT_NE(ad::value_hash(agent.encoder.params), old_encoder);
  for (std::size_t i = 0; i < old_target.all().size(); ++i) {
    const auto expected = (0.75 * old_target.all()[i].value + 0.25 * agent.sac.critic1.all()[i].value).eval();
    EXPECT_LT((agent.sac.target1.all()[i].value - expected).cwiseAbs().maxCoeff(), 1e-14);
  }
  EXPECT_GE(st.kl, 0.0);
  EXPECT_NEAR(st.encoder, st.critic1 + st.critic2 + cfg.beta * st.kl, 1e-12);
}

TEST(MetaTrain, ZeroUpdatesLeaveParameters) {
  auto cfg = tiny();
  const GmaAgent init(cfg, 7);
  const auto res = meta_train({tdma(2), qaloha(0.2)}, cfg, {2, 20, 0}, 7);
  EXPECT_EQ(hashes(res.agent), hashes(init));
  EXPECT_EQ(res.episodes.size(), 2u);
  EXPECT_TRUE(res.updates.empty());
}

TEST(MetaTrain, SameSeedSameCurves) {
  auto cfg = tiny();
  const std::vector<env::TaskSpec> tasks{tdma(2), qaloha(0.2)};
  int episodes_seen = 0;
  const auto a = meta_train(tasks, cfg, {2, 20, 3}, 11, {[&](const EpisodeMetrics&) { ++episodes_seen; }, {}});
  const auto b = meta_train(tasks, cfg, {2, 20, 3}, 11);
  EXPECT_EQ(episodes_seen, 2);
  EXPECT_EQ(hashes(a.agent), hashes(b.agent));
  ASSERT_EQ(a.updates.size(), 6u);
  for (std::size_t i = 0; i < a.updates.size(); ++i) {
    EXPECT_EQ(a.updates[i].critic1, b.updates[i].critic1);
    EXPECT_EQ(a.updates[i].actor, b.updates[i].actor);
    EXPECT_EQ(a.updates[i].update, static_cast<long>(i));
  }
  const auto c = meta_train(tasks, cfg, {2, 20, 3}, 12);
  EXPECT_NE(hashes(a.agent), hashes(c.agent));
}

TEST(MetaTrain, Errors) {
  auto cfg = tiny();
  EXPECT_THROW(meta_train({}, cfg, {}, 1), ConfigError);
  EXPECT_THROW(meta_train({tdma(2)}, cfg, {-1, 1, 1}, 1), ConfigError);
  cfg.gamma = 1.0;
  EXPECT_THROW(GmaAgent(cfg, 1), ConfigError);
}

TEST(MetaTest, EncoderFrozenAndScheduledUpdates) {
  auto cfg = tiny();
  GmaAgent agent(cfg, 8);
  const auto h = hashes(agent);
  TestSchedule sched;
  sched.collect_steps = 10;  // warmup 30
  sched.finetune_steps = {20, 40, 45, 60};
  sched.slots = 100;
  const auto tr = meta_test_finetune(agent, tdma(3), sched, 3);
  EXPECT_EQ(hashes(agent), h);
  EXPECT_EQ(tr.updates, 3);
  EXPECT_EQ(tr.success.size(), 100u);
  const auto again = meta_test_finetune(agent, tdma(3), sched, 3);
  EXPECT_EQ(again.success, tr.success);
}

TEST(MetaTest, ThroughputWindowHelpers) {
  OnlineTrace t;
  t.success = {1, 0, 1, 1};
  t.agent_success = {1, 0, 0, 1};
  EXPECT_EQ(t.throughput(0, 4), 0.75);
  EXPECT_EQ(t.throughput(1, 100), 2.0 / 3.0);
  EXPECT_EQ(t.agent_throughput(0, 2), 0.5);
  EXPECT_EQ(t.throughput(3, 3), 0.0);
}

TEST(Dynamic, WithoutChangesEqualsStaticRun) {
  auto cfg = tiny();
  GmaAgent agent(cfg, 9);
  DynamicSchedule sched;
  sched.segments = {{0, tdma(2).scenario}};
  sched.slots = 200;
  sched.update_every = 25;
  sched.updates_per_segment = 100;
  const auto dyn = dynamic_run(agent, sched, 4);
  OnlineOptions opt;
  opt.slots = 200;
  opt.update_at = [](long step) { return step % 25 == 0; };
  const auto stat = run_online(agent, tdma(2), opt, 4);
  EXPECT_EQ(dyn.success, stat.success);
  EXPECT_EQ(dyn.s0, stat.s0);
  EXPECT_EQ(dyn.updates, 8);
}

TEST(Dynamic, UpdateBudgetPerSegment) {
  auto cfg = tiny();
  GmaAgent agent(cfg, 10);
  DynamicSchedule sched;
  sched.segments = {{0, tdma(2).scenario}, {100, qaloha(0.5).scenario}, {200, tdma(4).scenario}};
  sched.slots = 300;
  sched.update_every = 10;
  sched.updates_per_segment = 2;
  EXPECT_EQ(dynamic_run(agent, sched, 5).updates, 6);
  sched.segments[1].at = 0;
  EXPECT_THROW(dynamic_run(agent, sched, 5), ConfigError);
}

TEST(Checkpoint, AgentRoundTrip) {
  auto cfg = tiny();
  auto res = meta_train({tdma(2)}, cfg, {1, 20, 2}, 13);
  std::stringstream ss;
  save_agent(ss, res.agent);
  const auto loaded = load_agent(ss);
  EXPECT_EQ(hashes(loaded), hashes(res.agent));
  EXPECT_EQ(loaded.config.experts, cfg.experts);
  EXPECT_EQ(loaded.config.init_log_alpha, cfg.init_log_alpha);
  std::stringstream bad("NOTANAGENTFILE");
  EXPECT_THROW(load_agent(bad), ConfigError);
}
