#pragma once

// Meta-training (per-task collection + joint optimization) and meta-testing (context
// accumulation, posterior sampling, scheduled fine-tuning) of the GMA agent.

#include <cmath>
#include <cstring>
#include <functional>
#include <istream>
#include <ostream>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gma/ad/checkpoint.hpp"
#include "gma/meta/buffers.hpp"

namespace gma::meta {

using moe::Row;
using ad::Var;

struct GmaConfig {
  env::EnvConfig env;  // history L, throughput window Z
  int hidden = 64;
  int trunk_layers = 2;
  int experts = 3;
  int latent_dim = 6;
  double gamma = 0.9;
  double beta = 1.0;
  double lr = 0.003;
  double eta = 0.005;
  double init_log_alpha = -3.0;  // alpha ~ 0.05, also the value restored at meta-test
  int buffer_capacity = 1000;
  int batch_size = 64;
  int context_size = 150;

  void validate() const {
    if (env.history < 1 || env.throughput_window < 1) throw ConfigError("history and throughput window must be >= 1");
    if (hidden < 1 || trunk_layers < 1 || experts < 1 || latent_dim < 1)
      throw ConfigError("network widths, experts and latent dimension must be >= 1");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("discount must lie in [0, 1)");
    if (!(beta >= 0.0)) throw ConfigError("KL weight must be non-negative");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("soft update rate must lie in [0, 1]");
    if (!std::isfinite(init_log_alpha)) throw ConfigError("initial log temperature must be finite");
    if (buffer_capacity < 1 || batch_size < 1 || context_size < 1)
      throw ConfigError("buffer, batch and context sizes must be >= 1");
  }

  moe::EncoderConfig encoder_config() const {
    return {context_width(env.history), hidden, trunk_layers, experts, latent_dim, 1e-6};
  }
  sac::SacConfig sac_config(bool conditioned = true) const {
    sac::SacConfig c;
    c.state_dim = state_width(env.history);
    c.latent_dim = conditioned ? latent_dim : 0;
    c.hidden = hidden;
    c.gamma = gamma;
    c.init_log_alpha = init_log_alpha;
    return c;
  }
  ad::AdamConfig adam() const { return {lr, 0.9, 0.999, 1e-8}; }
};

struct TrainSchedule {
  int episodes = 30;
  int collect_steps = 200;
  int updates_per_episode = 250;
};

struct TestSchedule {
  int collect_steps = 50;  // warmup is 3 * collect_steps
  std::vector<long> finetune_steps{200, 250, 300};
  long slots = 1000;
};

/// Encoder plus the SAC networks it conditions.
struct GmaAgent {
  GmaConfig config;
  moe::MoeEncoder encoder;
  sac::SacNets sac;

  GmaAgent() = default;
  GmaAgent(GmaConfig cfg, std::uint64_t seed)
      : config((cfg.validate(), cfg)), encoder(cfg.encoder_config(), derive_seed(seed, 101)), sac(cfg.sac_config(), derive_seed(seed, 102)) {}
};

struct UpdateStats {
  long update = 0;
  double critic1 = 0.0;
  double critic2 = 0.0;
  double kl = 0.0;
  double encoder = 0.0;
  double actor = 0.0;
  double temperature = 0.0;
  double alpha = 0.0;
  int tasks = 0;
};

struct TaskMetrics {
  std::string label;
  double sum_throughput = 0.0;  // successful slots / collected slots
  double agent = 0.0;
  double existing = 0.0;
  double jain = std::numeric_limits<double>::quiet_NaN();
};

struct EpisodeMetrics {
  int episode = 0;
  std::vector<TaskMetrics> tasks;
  UpdateStats last_update;
};

inline sac::Row state_row(const env::StateWindow& w) {
  const auto v = env::encode_state(w);
  return Eigen::Map<const sac::Row>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Runs one step of the agent in `env`: acts with latent z, stores nothing.
inline Transition env_transition(env::TaskEnv& env, const sac::SacNets& nets, const std::optional<Row>& z, Rng& rng,
                                 bool deterministic = false) {
  Transition tr;
  tr.state = env.state().categories();
  tr.t = env.time();
  const auto pol = sac::act(nets, state_row(env.state()), z ? *z : Row(Row::Zero(0)), rng, deterministic);
  const auto res = env.step(pol.action);
  tr.action = pol.action;
  tr.squashed = pol.squashed;
  tr.reward = res.reward;
  tr.next_state = env.state().categories();
  return tr;
}

/// Collects `steps` transitions into `buffer`. The context is re-initialized empty; before every
/// step z is re-drawn from the posterior of the latest min(U, collected) transitions (the prior
/// while empty).
inline TaskMetrics collect_phase(env::TaskEnv& env, const GmaAgent& agent, ReplayBuffer& buffer, int steps, Rng& rng) {
  env.reset();
  ContextCache context(agent.encoder, agent.config.env.history, static_cast<std::size_t>(agent.config.context_size));
  long hits = 0, agent_hits = 0;
  for (int i = 0; i < steps; ++i) {
    const Row z = context.sample_z(rng);
    auto tr = env_transition(env, agent.sac, z, rng);
    const bool success = tr.next_state.back() == 1 || tr.next_state.back() == 3;
    hits += success;
    agent_hits += tr.next_state.back() == 3;
    context.push(tr);
    buffer.push(std::move(tr));
  }
  TaskMetrics m;
  m.label = env.task().label;
  if (steps > 0) {
    m.sum_throughput = static_cast<double>(hits) / steps;
    m.agent = static_cast<double>(agent_hits) / steps;
    m.existing = m.sum_throughput - m.agent;
    if (hits > 0) m.jain = env::jain_index(m.agent, m.existing);
  }
  return m;
}

namespace detail {

struct TaskBatch {
  sac::Batch batch;
  std::optional<Row> z;
};

/// Actor, temperature and target updates shared by meta-training and fine-tuning.
inline void actor_temperature_targets(sac::SacNets& nets, const std::vector<TaskBatch>& tasks, const GmaConfig& cfg,
                                      Rng& rng, UpdateStats& stats) {
  const double alpha = nets.alpha();
  std::vector<ad::Matrix> log_probs;
  nets.actor.zero_grad();
  for (const auto& tb : tasks) {
    ad::Tape t;
    const auto al = sac::actor_loss(t, nets, tb.batch, tb.z, alpha, sac::draw_eps(tb.batch.size(), rng));
    t.backward(al.loss);
    stats.actor += al.loss.scalar();
    log_probs.push_back(al.log_prob);
  }
  ad::adam_step(nets.actor, cfg.adam(), "actor");
  nets.actor.zero_grad();

  nets.temperature.zero_grad();
  for (const auto& lp : log_probs) {
    ad::Tape t;
    Var loss = sac::temperature_loss(t, nets, lp);
    t.backward(loss);
    stats.temperature += loss.scalar();
  }
  ad::adam_step(nets.temperature, cfg.adam(), "temperature");
  nets.temperature.zero_grad();

  ad::soft_update(nets.target1, nets.critic1, cfg.eta);
  ad::soft_update(nets.target2, nets.critic2, cfg.eta);
  stats.alpha = nets.alpha();
}

}  // namespace detail

/// One joint gradient step over all tasks whose buffer holds at least a batch: critics, encoder,
/// actor, temperature (each on the loss summed over tasks), then target soft-updates.
inline UpdateStats optimize_step(GmaAgent& agent, const std::vector<ReplayBuffer>& buffers, Rng& rng) {
  const auto& cfg = agent.config;
  auto& nets = agent.sac;
  UpdateStats stats;
  const auto n = static_cast<std::size_t>(cfg.batch_size);
  std::vector<detail::TaskBatch> batches;
  const double alpha = nets.alpha();
  nets.critic1.zero_grad();
  nets.critic2.zero_grad();
  agent.encoder.params.zero_grad();
  for (const auto& buf : buffers) {
    if (buf.size() < n) continue;
    const auto ctx = make_context(buf, buf.sample(n, rng, static_cast<std::size_t>(cfg.context_size)), cfg.env.history);
    auto batch = make_batch(buf, buf.sample(n, rng));
    ad::Tape t;
    const auto post = agent.encoder.posterior(t, ctx, ad::Mode::Train);
    Var z = moe::MoeEncoder::sample(post, agent.encoder.draw_noise(rng));
    Var kl = moe::MoeEncoder::kl(post);
    const Row zval = z.value();
    const auto y = sac::critic_target(nets, batch, zval, alpha, sac::draw_eps(batch.size(), rng));
    const auto cl = sac::critic_loss(t, nets, batch, z, y);
    Var jen = sac::encoder_loss(cl, kl, cfg.beta);
    ad::require_finite(kl.value(), "encoder KL term");
    t.backward(jen);
    stats.critic1 += cl.q1.scalar();
    stats.critic2 += cl.q2.scalar();
    stats.kl += kl.scalar();
    stats.encoder += jen.scalar();
    ++stats.tasks;
    batches.push_back({std::move(batch), zval});
  }
  if (batches.empty()) return stats;
  ad::adam_step(nets.critic1, cfg.adam(), "critic 1");
  ad::adam_step(nets.critic2, cfg.adam(), "critic 2");
  ad::adam_step(agent.encoder.params, cfg.adam(), "encoder");
  nets.critic1.zero_grad();
  nets.critic2.zero_grad();
  agent.encoder.params.zero_grad();
  detail::actor_temperature_targets(nets, batches, cfg, rng, stats);
  return stats;
}

/// Single-task update with a fixed latent (or none): critics, actor, temperature, targets.
inline UpdateStats finetune_step(sac::SacNets& nets, const ReplayBuffer& buffer, const std::optional<Row>& z,
                                 const GmaConfig& cfg, Rng& rng) {
  UpdateStats stats;
  const auto n = static_cast<std::size_t>(cfg.batch_size);
  if (buffer.size() < n) return stats;
  auto batch = make_batch(buffer, buffer.sample(n, rng));
  const double alpha = nets.alpha();
  const auto y = sac::critic_target(nets, batch, z, alpha, sac::draw_eps(batch.size(), rng));
  nets.critic1.zero_grad();
  nets.critic2.zero_grad();
  {
    ad::Tape t;
    std::optional<Var> zv;
    if (z) zv = t.constant(*z);
    const auto cl = sac::critic_loss(t, nets, batch, zv, y);
    t.backward(ad::add(cl.q1, cl.q2));
    stats.critic1 = cl.q1.scalar();
    stats.critic2 = cl.q2.scalar();
  }
  ad::adam_step(nets.critic1, cfg.adam(), "critic 1");
  ad::adam_step(nets.critic2, cfg.adam(), "critic 2");
  nets.critic1.zero_grad();
  nets.critic2.zero_grad();
  stats.tasks = 1;
  std::vector<detail::TaskBatch> batches{{std::move(batch), z}};
  detail::actor_temperature_targets(nets, batches, cfg, rng, stats);
  return stats;
}

struct MetaTrainResult {
  GmaAgent agent;
  std::vector<EpisodeMetrics> episodes;
  std::vector<UpdateStats> updates;
};

struct MetaTrainCallbacks {
  std::function<void(const EpisodeMetrics&)> on_episode;
  std::function<void(const UpdateStats&)> on_update;
};

/// Alternates per-task collection and joint optimization for the configured episodes.
inline MetaTrainResult meta_train(const std::vector<env::TaskSpec>& tasks, const GmaConfig& cfg,
                                  const TrainSchedule& schedule, std::uint64_t seed,
                                  const MetaTrainCallbacks& callbacks = {}) {
  if (tasks.empty()) throw ConfigError("meta-training needs at least one task");
  if (schedule.episodes < 0 || schedule.collect_steps < 0 || schedule.updates_per_episode < 0)
    throw ConfigError("schedule counts must be non-negative");
  MetaTrainResult out{GmaAgent(cfg, seed), {}, {}};
  Rng rng = make_rng(seed, 7);
  std::vector<env::TaskEnv> envs;
  std::vector<ReplayBuffer> buffers;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    envs.emplace_back(tasks[k], cfg.env, derive_seed(seed, 1000 + k));
    buffers.emplace_back(static_cast<std::size_t>(cfg.buffer_capacity));
  }
  long update_index = 0;
  for (int ep = 0; ep < schedule.episodes; ++ep) {
    EpisodeMetrics em;
    em.episode = ep;
    for (std::size_t k = 0; k < tasks.size(); ++k)
      em.tasks.push_back(collect_phase(envs[k], out.agent, buffers[k], schedule.collect_steps, rng));
    for (int u = 0; u < schedule.updates_per_episode; ++u) {
      auto st = optimize_step(out.agent, buffers, rng);
      st.update = update_index++;
      if (callbacks.on_update) callbacks.on_update(st);
      out.updates.push_back(st);
      em.last_update = st;
    }
    if (callbacks.on_episode) callbacks.on_episode(em);
    out.episodes.push_back(std::move(em));
  }
  return out;
}

/// Per-slot record of an online run.
struct OnlineTrace {
  std::vector<std::uint8_t> success;  // exactly one transmitter
  std::vector<std::uint8_t> agent_success;
  std::vector<double> short_term_sum;  // S0 + SN over the last Z slots
  std::vector<double> s0, sn;
  int updates = 0;

  /// Fraction of successful slots in [from, to).
  double throughput(long from, long to) const {
    to = std::min<long>(to, static_cast<long>(success.size()));
    if (to <= from) return 0.0;
    long hits = 0;
    for (long i = from; i < to; ++i) hits += success[static_cast<std::size_t>(i)];
    return static_cast<double>(hits) / static_cast<double>(to - from);
  }
  double agent_throughput(long from, long to) const {
    to = std::min<long>(to, static_cast<long>(agent_success.size()));
    if (to <= from) return 0.0;
    long hits = 0;
    for (long i = from; i < to; ++i) hits += agent_success[static_cast<std::size_t>(i)];
    return static_cast<double>(hits) / static_cast<double>(to - from);
  }
};

/// Scenario switch at slot `at` (0-based slot index of the first slot under the new scenario).
struct ScenarioChange {
  long at = 0;
  sim::Scenario scenario;
};

struct OnlineOptions {
  long slots = 1000;
  /// 1-based step indices after which one update is performed.
  std::function<bool(long)> update_at;
  std::vector<ScenarioChange> changes;
  int max_updates_per_segment = -1;  // -1: unbounded
  bool deterministic = false;
};

inline void record_slot(OnlineTrace& tr, const env::TaskEnv& env, const Transition& t) {
  const auto last = t.next_state.back();
  tr.success.push_back(last == 1 || last == 3);
  tr.agent_success.push_back(last == 3);
  tr.s0.push_back(env.throughput().agent());
  tr.sn.push_back(env.throughput().existing());
  tr.short_term_sum.push_back(tr.s0.back() + tr.sn.back());
}

/// Meta-test style run with a frozen encoder: the first step uses z from the prior, later steps z
/// from the latest U transitions; actor/critics/temperature are fine-tuned at the requested steps.
/// The context is cleared at every scenario change.
inline OnlineTrace run_online(const GmaAgent& agent, const env::TaskSpec& task, const OnlineOptions& opt,
                              std::uint64_t seed) {
  const auto& cfg = agent.config;
  sac::SacNets nets = agent.sac;
  nets.reset_temperature();
  Rng rng = make_rng(seed, 17);
  env::TaskEnv env(task, cfg.env, derive_seed(seed, 18));
  env.reset();
  ReplayBuffer buffer(static_cast<std::size_t>(cfg.buffer_capacity));
  ContextCache context(agent.encoder, cfg.env.history, static_cast<std::size_t>(cfg.context_size));
  OnlineTrace trace;
  std::size_t next_change = 0;
  int segment_updates = 0;
  for (long t = 0; t < opt.slots; ++t) {
    if (next_change < opt.changes.size() && opt.changes[next_change].at == t) {
      env.set_scenario(opt.changes[next_change].scenario);
      context.clear();
      segment_updates = 0;
      ++next_change;
    }
    const Row z = context.sample_z(rng);
    auto tr = env_transition(env, nets, z, rng, opt.deterministic);
    record_slot(trace, env, tr);
    context.push(tr);
    buffer.push(std::move(tr));
    const long step = t + 1;
    const bool budget = opt.max_updates_per_segment < 0 || segment_updates < opt.max_updates_per_segment;
    if (opt.update_at && budget && opt.update_at(step)) {
      const Row zu = context.sample_z(rng);
      if (finetune_step(nets, buffer, zu, cfg, rng).tasks > 0) {
        ++segment_updates;
        ++trace.updates;
      }
    }
  }
  return trace;
}

/// Warmup of 3 * N_c steps, then updates at each step in T_ft, for `slots` steps in total.
inline OnlineTrace meta_test_finetune(const GmaAgent& agent, const env::TaskSpec& task, const TestSchedule& schedule,
                                      std::uint64_t seed, bool deterministic = false) {
  const std::set<long> steps(schedule.finetune_steps.begin(), schedule.finetune_steps.end());
  const long warmup = 3L * schedule.collect_steps;
  OnlineOptions opt;
  opt.slots = schedule.slots;
  opt.deterministic = deterministic;
  opt.update_at = [steps, warmup](long step) { return step >= warmup && steps.count(step) != 0; };
  return run_online(agent, task, opt, seed);
}

/// Scenario schedule for a dynamic run; the first entry must start at slot 0.
struct DynamicSchedule {
  std::vector<ScenarioChange> segments;
  long slots = 8000;
  int update_every = 50;
  int updates_per_segment = 16;
};

inline OnlineTrace dynamic_run(const GmaAgent& agent, const DynamicSchedule& sched, std::uint64_t seed, double nu = 0.0) {
  if (sched.segments.empty() || sched.segments.front().at != 0)
    throw ConfigError("dynamic schedule must start with a scenario at slot 0");
  for (std::size_t i = 1; i < sched.segments.size(); ++i)
    if (sched.segments[i].at <= sched.segments[i - 1].at) throw ConfigError("scenario change points must increase");
  OnlineOptions opt;
  opt.slots = sched.slots;
  opt.changes.assign(sched.segments.begin() + 1, sched.segments.end());
  opt.max_updates_per_segment = sched.updates_per_segment;
  const int every = sched.update_every;
  opt.update_at = [every](long step) { return every > 0 && step % every == 0; };
  return run_online(agent, env::TaskSpec::from(sched.segments.front().scenario, nu), opt, seed);
}

inline constexpr std::uint32_t kAgentFormatVersion = 1;
inline constexpr char kAgentMagic[8] = {'G', 'M', 'A', 'A', 'G', 'E', 'N', 'T'};

/// Writes a complete agent (configuration, all parameter stores and optimizer state).
inline void save_agent(std::ostream& os, const GmaAgent& agent) {
  using namespace ad::io;
  os.write(kAgentMagic, sizeof kAgentMagic);
  put<std::uint32_t>(os, kAgentFormatVersion);
  const auto& c = agent.config;
  for (int v : {c.env.history, c.env.throughput_window, c.hidden, c.trunk_layers, c.experts, c.latent_dim,
                c.buffer_capacity, c.batch_size, c.context_size})
    put<std::int32_t>(os, v);
  for (double v : {c.gamma, c.beta, c.lr, c.eta, c.init_log_alpha}) put<double>(os, v);
  for (const auto* s : {&agent.encoder.params, &agent.sac.actor, &agent.sac.critic1, &agent.sac.critic2,
                        &agent.sac.target1, &agent.sac.target2, &agent.sac.temperature})
    ad::save_store(os, *s);
  if (!os) throw ConfigError("failed to write agent checkpoint");
}

inline GmaAgent load_agent(std::istream& is) {
  using namespace ad::io;
  char magic[sizeof kAgentMagic];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kAgentMagic, sizeof magic) != 0) throw ConfigError("not an agent checkpoint");
  if (get<std::uint32_t>(is) != kAgentFormatVersion) throw ConfigError("unsupported agent checkpoint version");
  GmaConfig c;
  for (int* v : {&c.env.history, &c.env.throughput_window, &c.hidden, &c.trunk_layers, &c.experts, &c.latent_dim,
                 &c.buffer_capacity, &c.batch_size, &c.context_size})
    *v = get<std::int32_t>(is);
  for (double* v : {&c.gamma, &c.beta, &c.lr, &c.eta, &c.init_log_alpha}) *v = get<double>(is);
  GmaAgent agent(c, 0);
  for (auto* s : {&agent.encoder.params, &agent.sac.actor, &agent.sac.critic1, &agent.sac.critic2,
                  &agent.sac.target1, &agent.sac.target2, &agent.sac.temperature}) {
    auto loaded = ad::load_store(is);
    if (!loaded.same_layout(*s)) throw ConfigError("agent checkpoint layout does not match its configuration");
    *s = std::move(loaded);
  }
  return agent;
}

}  // namespace gma::meta
