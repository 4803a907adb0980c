#pragma once

// Command implementations behind the CLI. Every command writes its outputs into cfg.out and a
// run.json record; all files except run.json are a pure function of the config and seed.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "gma/baselines/learners.hpp"
#include "gma/baselines/oracle.hpp"
#include "gma/bench/presets.hpp"
#include "gma/bench/runtime.hpp"

namespace gma::bench {

namespace fs = std::filesystem;

inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// File-name-safe form of a scenario label.
inline std::string slug(const std::string& label) {
  std::string s;
  for (char c : label) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') {
      s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (c == '+') {
      s += '_';
    } else if (c == '(') {
      s += '-';
    }
  }
  return s;
}

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ConfigError("cannot write '" + p.string() + "'");
  return os;
}

struct RunRecord {
  std::string command;
  ExperimentConfig config;
  std::vector<std::string> files;
  json summary = json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write() const {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json j{{"command", command},
           {"config", to_json(config)},
           {"config_hash", hex(config_hash(config))},
           {"seed", config.seed},
           {"seeds", config.seeds},
           {"code_version", kCodeVersion},
           {"wall_clock_seconds", wall},
           {"files", files},
           {"summary", summary}};
    auto os = open_out(fs::path(config.out) / "run.json");
    os << j.dump(2) << "\n";
  }
};

inline double safe_jain(double s0, double sn) {
  return s0 + sn > 0.0 ? env::jain_index(s0, sn) : std::numeric_limits<double>::quiet_NaN();
}

/// Existing-node set driven by a fixed agent policy; writes trace.jsonl and metrics.csv.
inline json cmd_simulate(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.scenarios.size() != 1) throw ConfigError("simulate needs exactly one scenario");
  const auto scenario = sim::parse_scenario(cfg.scenarios.front());
  fs::create_directories(cfg.out);
  RunRecord rec{"simulate", cfg, {"trace.jsonl", "metrics.csv"}};

  baselines::GeniePolicy oracle;
  if (cfg.policy == "oracle") oracle = baselines::oracle_policy(scenario);
  sim::Channel ch(scenario, derive_seed(cfg.seed, 1));
  Rng prng = make_rng(cfg.seed, 2);
  env::ThroughputWindow window(cfg.hyper.env.throughput_window);
  auto trace = open_out(fs::path(cfg.out) / "trace.jsonl");
  auto metrics = open_out(fs::path(cfg.out) / "metrics.csv");
  metrics << "t,S0,SN,sum,jain\n";
  long hits = 0, agent_hits = 0;
  for (long t = 0; t < cfg.slots; ++t) {
    bool tx = false;
    if (cfg.policy == "always") {
      tx = true;
    } else if (cfg.policy == "random") {
      tx = uniform01(prng) < 0.5;
    } else if (cfg.policy == "oracle") {
      tx = oracle(ch.states());
    }
    sim::SlotRecord r{t, tx, ch.step(tx)};
    const bool agent_hit = r.outcome.success_node && *r.outcome.success_node == 0;
    const bool existing_hit = r.outcome.success_node && *r.outcome.success_node != 0;
    hits += agent_hit || existing_hit;
    agent_hits += agent_hit;
    window.push(agent_hit, existing_hit);
    sim::write_trace_line(trace, r);
    const double s0 = window.agent(), sn = window.existing();
    metrics << t << ',' << num(s0) << ',' << num(sn) << ',' << num(s0 + sn) << ',' << num(safe_jain(s0, sn)) << '\n';
  }
  const double n = cfg.slots > 0 ? static_cast<double>(cfg.slots) : 1.0;
  rec.summary = {{"scenario", sim::label(scenario)},
                 {"policy", cfg.policy},
                 {"slots", cfg.slots},
                 {"sum_throughput", cfg.slots > 0 ? hits / n : 0.0},
                 {"agent_throughput", cfg.slots > 0 ? agent_hits / n : 0.0}};
  rec.write();
  return rec.summary;
}

inline void save_checkpoint(const fs::path& p, const meta::GmaAgent& agent) {
  auto os = open_out(p);
  meta::save_agent(os, agent);
}

inline meta::GmaAgent load_checkpoint(const std::string& path) {
  if (path.empty()) throw ConfigError("a checkpoint path is required");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("missing checkpoint '" + path + "'");
  return meta::load_agent(is);
}

/// Meta-training on the configured task set; writes checkpoint.bin, episodes.csv, losses.csv.
inline json cmd_meta_train(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto tasks = resolve_tasks(cfg.tasks, cfg.nu);
  fs::create_directories(cfg.out);
  RunRecord rec{"meta-train", cfg, {"checkpoint.bin", "episodes.csv", "losses.csv"}};
  auto episodes = open_out(fs::path(cfg.out) / "episodes.csv");
  auto losses = open_out(fs::path(cfg.out) / "losses.csv");
  episodes << "episode,task,sum,agent,existing,jain\n";
  losses << "update,tasks,critic1,critic2,kl,encoder,actor,temperature,alpha\n";
  meta::MetaTrainCallbacks cb;
  cb.on_episode = [&](const meta::EpisodeMetrics& e) {
    for (const auto& m : e.tasks)
      episodes << e.episode << ',' << m.label << ',' << num(m.sum_throughput) << ',' << num(m.agent) << ','
               << num(m.existing) << ',' << num(m.jain) << '\n';
    episodes.flush();
    losses.flush();
  };
  cb.on_update = [&](const meta::UpdateStats& u) {
    losses << u.update << ',' << u.tasks << ',' << num(u.critic1) << ',' << num(u.critic2) << ',' << num(u.kl) << ','
           << num(u.encoder) << ',' << num(u.actor) << ',' << num(u.temperature) << ',' << num(u.alpha) << '\n';
  };
  const auto result = meta::meta_train(tasks, cfg.hyper, cfg.train, cfg.seed, cb);
  save_checkpoint(fs::path(cfg.out) / "checkpoint.bin", result.agent);
  json last = json::object();
  if (!result.episodes.empty())
    for (const auto& m : result.episodes.back().tasks) last[m.label] = m.sum_throughput;
  rec.summary = {{"tasks", resolve_scenarios(cfg.tasks)},
                 {"episodes", cfg.train.episodes},
                 {"checkpoint", (fs::path(cfg.out) / "checkpoint.bin").string()},
                 {"final_episode_sum_throughput", last}};
  rec.write();
  return rec.summary;
}

/// Mean and population standard deviation across runs, slot by slot.
inline void write_curve(const fs::path& p, const std::vector<meta::OnlineTrace>& runs) {
  auto os = open_out(p);
  os << "t,sum_mean,sum_std,s0_mean,sn_mean\n";
  if (runs.empty()) return;
  const std::size_t n = runs.front().short_term_sum.size();
  const double k = static_cast<double>(runs.size());
  for (std::size_t t = 0; t < n; ++t) {
    double m = 0.0, m2 = 0.0, s0 = 0.0, sn = 0.0;
    for (const auto& r : runs) {
      m += r.short_term_sum[t];
      m2 += r.short_term_sum[t] * r.short_term_sum[t];
      s0 += r.s0[t];
      sn += r.sn[t];
    }
    m /= k;
    const double var = std::max(0.0, m2 / k - m * m);
    os << t << ',' << num(m) << ',' << num(std::sqrt(var)) << ',' << num(s0 / k) << ',' << num(sn / k) << '\n';
  }
}

struct WindowStats {
  double mean = 0.0;
  double std = 0.0;
  double median = 0.0;
  double jain = std::numeric_limits<double>::quiet_NaN();
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Throughput over [from, to) per run, summarized across runs. Jain uses the run-averaged agent
/// and existing throughputs.
inline WindowStats window_stats(const std::vector<meta::OnlineTrace>& runs, long from, long to) {
  WindowStats s;
  std::vector<double> v;
  double a = 0.0, e = 0.0;
  for (const auto& r : runs) {
    const double sum = r.throughput(from, to);
    const double ag = r.agent_throughput(from, to);
    v.push_back(sum);
    a += ag;
    e += sum - ag;
  }
  if (v.empty()) return s;
  const double k = static_cast<double>(v.size());
  for (double x : v) s.mean += x / k;
  for (double x : v) s.std += (x - s.mean) * (x - s.mean) / k;
  s.std = std::sqrt(s.std);
  s.median = median_of(v);
  s.jain = safe_jain(a / k, e / k);
  return s;
}

inline std::vector<std::uint64_t> seed_list(const ExperimentConfig& cfg) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < cfg.seeds; ++i) out.push_back(cfg.seed + static_cast<std::uint64_t>(i));
  return out;
}

inline meta::TestSchedule test_schedule(const ExperimentConfig& cfg) {
  auto s = cfg.test;
  if (cfg.zero_shot) s.finetune_steps.clear();
  return s;
}

inline json dynamic_suite(const ExperimentConfig& cfg, const meta::GmaAgent& agent, RunRecord& rec) {
  const auto sched = dynamic_schedule(cfg);
  std::map<std::string, std::vector<meta::OnlineTrace>> runs;
  for (auto seed : seed_list(cfg)) {
    runs["gma"].push_back(meta::dynamic_run(agent, sched, seed, cfg.nu));
    if (cfg.baselines) {
      const auto pre = env::TaskSpec::from(sim::parse_scenario(cfg.baseline_pretrain), cfg.nu);
      baselines::ScratchSac sac(cfg.hyper, derive_seed(seed, 202));
      runs["scratch-sac"].push_back(baselines::baseline_dynamic_run(
          sac, pre, cfg.baseline_pretrain_slots, cfg.baseline_update_every, sched, cfg.hyper.env, seed));
      baselines::DqnConfig dc;
      dc.history = cfg.hyper.env.history;
      dc.gamma = cfg.hyper.gamma;
      dc.lr = cfg.hyper.lr;
      dc.batch_size = cfg.hyper.batch_size;
      baselines::DqnAgent dqn(dc, derive_seed(seed, 201));
      runs["dqn"].push_back(baselines::baseline_dynamic_run(dqn, pre, cfg.baseline_pretrain_slots,
                                                            cfg.baseline_update_every, sched, cfg.hyper.env, seed));
    }
  }
  auto seg_csv = open_out(fs::path(cfg.out) / "dynamic_segments.csv");
  seg_csv << "method,segment,scenario,from,to,mean,median,std,oracle\n";
  rec.files.push_back("dynamic_segments.csv");
  json out = json::object();
  for (const auto& [method, traces] : runs) {
    const auto file = "dynamic_" + method + ".csv";
    write_curve(fs::path(cfg.out) / file, traces);
    rec.files.push_back(file);
    for (std::size_t i = 0; i < sched.segments.size(); ++i) {
      const long end = i + 1 < sched.segments.size() ? sched.segments[i + 1].at : sched.slots;
      const long from = std::max(sched.segments[i].at, end - 500);
      const auto st = window_stats(traces, from, end);
      const auto orc = baselines::optimal_throughput(sched.segments[i].scenario);
      const auto lbl = sim::label(sched.segments[i].scenario);
      seg_csv << method << ',' << i << ',' << lbl << ',' << from << ',' << end << ',' << num(st.mean) << ','
              << num(st.median) << ',' << num(st.std) << ',' << num(orc.value) << '\n';
      out[method].push_back({{"scenario", lbl}, {"median", st.median}, {"oracle", orc.value}});
    }
  }
  return out;
}

/// Few-shot adaptation on each test environment over cfg.seeds seeds.
inline json cmd_meta_test(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto agent = load_checkpoint(cfg.checkpoint);
  fs::create_directories(cfg.out);
  RunRecord rec{"meta-test", cfg, {}};
  if (cfg.dynamic) {
    rec.summary = {{"dynamic", dynamic_suite(cfg, agent, rec)}};
    rec.write();
    return rec.summary;
  }
  const auto tasks = resolve_tasks(cfg.test_tasks, cfg.nu);
  const auto schedule = test_schedule(cfg);
  auto summary = open_out(fs::path(cfg.out) / "summary.csv");
  rec.files.push_back("summary.csv");
  summary << "env,method,mean,median,std,jain,oracle\n";
  json out = json::array();
  for (const auto& task : tasks) {
    std::map<std::string, std::vector<meta::OnlineTrace>> runs;
    for (auto seed : seed_list(cfg)) {
      runs["gma"].push_back(meta::meta_test_finetune(agent, task, schedule, seed, cfg.deterministic));
      if (cfg.baselines) {
        runs["scratch-sac"].push_back(
            baselines::sac_scratch_train(task, agent.config, schedule.slots, cfg.baseline_update_every, seed));
        baselines::DqnConfig dc;
        dc.history = agent.config.env.history;
        dc.gamma = agent.config.gamma;
        dc.lr = agent.config.lr;
        dc.batch_size = agent.config.batch_size;
        runs["dqn"].push_back(
            baselines::dqn_train(task, dc, agent.config.env, schedule.slots, cfg.baseline_update_every, seed));
      }
    }
    double oracle_value = std::numeric_limits<double>::quiet_NaN();
    try {
      oracle_value = baselines::optimal_throughput(task.scenario).value;
    } catch (const UnsupportedError&) {
    }
    for (const auto& [method, traces] : runs) {
      const auto file = "curve_" + slug(task.label) + (method == "gma" ? "" : "_" + method) + ".csv";
      write_curve(fs::path(cfg.out) / file, traces);
      rec.files.push_back(file);
      const auto st = window_stats(traces, cfg.eval_from, schedule.slots);
      summary << task.label << ',' << method << ',' << num(st.mean) << ',' << num(st.median) << ',' << num(st.std)
              << ',' << num(st.jain) << ',' << num(oracle_value) << '\n';
      out.push_back({{"env", task.label}, {"method", method}, {"mean", st.mean}, {"jain", st.jain}});
    }
  }
  rec.summary = {{"results", out}};
  rec.write();
  return rec.summary;
}

/// Oracle table; unsupported scenarios are flagged per row.
inline json cmd_oracle(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.scenarios.empty()) throw ConfigError("oracle needs at least one scenario");
  fs::create_directories(cfg.out);
  RunRecord rec{"oracle", cfg, {"oracle.csv"}};
  auto os = open_out(fs::path(cfg.out) / "oracle.csv");
  os << "scenarioLabel,value,kind,policySketch\n";
  json rows = json::array();
  for (const auto& spec : cfg.scenarios) {
    for (const auto& s : resolve_scenarios(spec)) {
      const auto sc = sim::parse_scenario(s);
      try {
        const auto r = baselines::optimal_throughput(sc);
        os << sim::label(sc) << ',' << num(r.value) << ',' << to_string(r.kind) << ",\"" << r.policy_sketch << "\"\n";
        rows.push_back({{"scenario", sim::label(sc)}, {"value", r.value}, {"kind", to_string(r.kind)}});
      } catch (const UnsupportedError& e) {
        os << sim::label(sc) << ",,unsupported,\"" << e.what() << "\"\n";
        rows.push_back({{"scenario", sim::label(sc)}, {"kind", "unsupported"}});
      }
    }
  }
  rec.summary = {{"rows", rows}};
  rec.write();
  return rec.summary;
}

/// One latent sample and the gate weights after `steps` zero-shot slots, per rollout and env.
inline json cmd_export_latents(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto agent = load_checkpoint(cfg.checkpoint);
  const auto tasks = resolve_tasks(cfg.test_tasks, cfg.nu);
  fs::create_directories(cfg.out);
  RunRecord rec{"export-latents", cfg, {"latents.csv"}};
  auto os = open_out(fs::path(cfg.out) / "latents.csv");
  const int d = agent.config.latent_dim, m = agent.config.experts;
  os << "envLabel";
  for (int i = 0; i < d; ++i) os << ",z" << i;
  for (int i = 0; i < m; ++i) os << ",g" << i;
  os << '\n';
  long rows = 0;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    for (int r = 0; r < cfg.latent_rollouts; ++r) {
      const auto seed = derive_seed(derive_seed(cfg.seed, k), static_cast<std::uint64_t>(r));
      Rng rng = make_rng(seed, 17);
      env::TaskEnv env(tasks[k], agent.config.env, derive_seed(seed, 18));
      env.reset();
      meta::ContextCache context(agent.encoder, agent.config.env.history,
                                 static_cast<std::size_t>(agent.config.context_size));
      for (long t = 0; t < cfg.latent_steps; ++t) {
        const auto z = context.sample_z(rng);
        context.push(meta::env_transition(env, agent.sac, z, rng));
      }
      const auto post = context.posterior();
      const auto mix = moe::sample_mixture(post.experts, post.weights, rng);
      os << tasks[k].label;
      for (int i = 0; i < d; ++i) os << ',' << num(mix.z(i));
      for (int i = 0; i < m; ++i) os << ',' << num(post.weights(i));
      os << '\n';
      ++rows;
    }
  }
  rec.summary = {{"rows", rows}};
  rec.write();
  return rec.summary;
}

}  // namespace gma::bench
