#pragma once

// Experiment configuration: JSON schema with defaults for every field, unknown keys rejected,
// and a hash over the canonical (fully resolved) dump.

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gma/meta/harness.hpp"

namespace gma::bench {

using nlohmann::json;

struct DynamicSegment {
  long at = 0;
  std::string scenario;
};

struct ExperimentConfig {
  // scenarios / task sets, as scenario strings ("tdma:5", "tdma:2+qaloha:0.1") or preset names
  std::vector<std::string> scenarios;
  std::string tasks = "trainset-8";
  std::string test_tasks = "test-6";

  std::string policy = "never";  // simulate: never | always | random | oracle
  long slots = 10000;

  std::uint64_t seed = 1;
  int seeds = 10;
  std::string out = "runs/out";
  std::string checkpoint;

  meta::GmaConfig hyper;
  double nu = 0.0;
  meta::TrainSchedule train;
  meta::TestSchedule test;
  long eval_from = 300;  // first slot of the reported throughput window
  bool zero_shot = false;
  bool deterministic = false;
  bool baselines = false;  // meta-test: also run scratch SAC and DQN
  int baseline_update_every = 5;

  bool dynamic = false;
  std::vector<DynamicSegment> dynamic_segments;
  long dynamic_slots = 8000;
  int dynamic_update_every = 50;
  int dynamic_updates_per_segment = 16;
  std::string baseline_pretrain = "tdma:7";
  long baseline_pretrain_slots = 2000;

  int latent_rollouts = 100;
  long latent_steps = 150;

  void validate() const;
};

namespace detail {

template <class T>
void take(const json& j, const char* key, T& dst, std::set<std::string>& seen) {
  seen.insert(key);
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const json& j, const std::set<std::string>& seen, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (seen.count(k) == 0) throw ConfigError("unknown config key '" + where + k + "'");
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  const auto& h = c.hyper;
  json segs = json::array();
  for (const auto& s : c.dynamic_segments) segs.push_back({{"at", s.at}, {"scenario", s.scenario}});
  return {
      {"scenarios", c.scenarios},
      {"tasks", c.tasks},
      {"test_tasks", c.test_tasks},
      {"policy", c.policy},
      {"slots", c.slots},
      {"seed", c.seed},
      {"seeds", c.seeds},
      {"out", c.out},
      {"checkpoint", c.checkpoint},
      {"nu", c.nu},
      {"hyper",
       {{"history", h.env.history},
        {"throughput_window", h.env.throughput_window},
        {"hidden", h.hidden},
        {"trunk_layers", h.trunk_layers},
        {"experts", h.experts},
        {"latent_dim", h.latent_dim},
        {"gamma", h.gamma},
        {"beta", h.beta},
        {"lr", h.lr},
        {"eta", h.eta},
        {"init_log_alpha", h.init_log_alpha},
        {"buffer_capacity", h.buffer_capacity},
        {"batch_size", h.batch_size},
        {"context_size", h.context_size}}},
      {"train",
       {{"episodes", c.train.episodes},
        {"collect_steps", c.train.collect_steps},
        {"updates_per_episode", c.train.updates_per_episode}}},
      {"test",
       {{"collect_steps", c.test.collect_steps},
        {"finetune_steps", c.test.finetune_steps},
        {"slots", c.test.slots},
        {"eval_from", c.eval_from},
        {"zero_shot", c.zero_shot},
        {"deterministic", c.deterministic},
        {"baselines", c.baselines},
        {"baseline_update_every", c.baseline_update_every}}},
      {"dynamic",
       {{"enabled", c.dynamic},
        {"segments", segs},
        {"slots", c.dynamic_slots},
        {"update_every", c.dynamic_update_every},
        {"updates_per_segment", c.dynamic_updates_per_segment},
        {"baseline_pretrain", c.baseline_pretrain},
        {"baseline_pretrain_slots", c.baseline_pretrain_slots}}},
      {"latents", {{"rollouts", c.latent_rollouts}, {"steps", c.latent_steps}}},
  };
}

inline ExperimentConfig from_json(const json& j) {
  ExperimentConfig c;
  std::set<std::string> seen;
  using detail::take;
  take(j, "scenarios", c.scenarios, seen);
  take(j, "tasks", c.tasks, seen);
  take(j, "test_tasks", c.test_tasks, seen);
  take(j, "policy", c.policy, seen);
  take(j, "slots", c.slots, seen);
  take(j, "seed", c.seed, seen);
  take(j, "seeds", c.seeds, seen);
  take(j, "out", c.out, seen);
  take(j, "checkpoint", c.checkpoint, seen);
  take(j, "nu", c.nu, seen);
  for (const char* section : {"hyper", "train", "test", "dynamic", "latents"}) seen.insert(section);
  detail::reject_unknown(j, seen, "");

  if (j.contains("hyper")) {
    const auto& s = j.at("hyper");
    std::set<std::string> k;
    auto& h = c.hyper;
    take(s, "history", h.env.history, k);
    take(s, "throughput_window", h.env.throughput_window, k);
    take(s, "hidden", h.hidden, k);
    take(s, "trunk_layers", h.trunk_layers, k);
    take(s, "experts", h.experts, k);
    take(s, "latent_dim", h.latent_dim, k);
    take(s, "gamma", h.gamma, k);
    take(s, "beta", h.beta, k);
    take(s, "lr", h.lr, k);
    take(s, "eta", h.eta, k);
    take(s, "init_log_alpha", h.init_log_alpha, k);
    take(s, "buffer_capacity", h.buffer_capacity, k);
    take(s, "batch_size", h.batch_size, k);
    take(s, "context_size", h.context_size, k);
    detail::reject_unknown(s, k, "hyper.");
  }
  if (j.contains("train")) {
    const auto& s = j.at("train");
    std::set<std::string> k;
    take(s, "episodes", c.train.episodes, k);
    take(s, "collect_steps", c.train.collect_steps, k);
    take(s, "updates_per_episode", c.train.updates_per_episode, k);
    detail::reject_unknown(s, k, "train.");
  }
  if (j.contains("test")) {
    const auto& s = j.at("test");
    std::set<std::string> k;
    take(s, "collect_steps", c.test.collect_steps, k);
    take(s, "finetune_steps", c.test.finetune_steps, k);
    take(s, "slots", c.test.slots, k);
    take(s, "eval_from", c.eval_from, k);
    take(s, "zero_shot", c.zero_shot, k);
    take(s, "deterministic", c.deterministic, k);
    take(s, "baselines", c.baselines, k);
    take(s, "baseline_update_every", c.baseline_update_every, k);
    detail::reject_unknown(s, k, "test.");
  }
  if (j.contains("dynamic")) {
    const auto& s = j.at("dynamic");
    std::set<std::string> k;
    take(s, "enabled", c.dynamic, k);
    take(s, "slots", c.dynamic_slots, k);
    take(s, "update_every", c.dynamic_update_every, k);
    take(s, "updates_per_segment", c.dynamic_updates_per_segment, k);
    take(s, "baseline_pretrain", c.baseline_pretrain, k);
    take(s, "baseline_pretrain_slots", c.baseline_pretrain_slots, k);
    k.insert("segments");
    detail::reject_unknown(s, k, "dynamic.");
    if (s.contains("segments")) {
      if (!s.at("segments").is_array()) throw ConfigError("dynamic.segments must be an array");
      for (const auto& e : s.at("segments")) {
        std::set<std::string> ek;
        DynamicSegment seg;
        take(e, "at", seg.at, ek);
        take(e, "scenario", seg.scenario, ek);
        detail::reject_unknown(e, ek, "dynamic.segments[].");
        c.dynamic_segments.push_back(seg);
      }
    }
  }
  if (j.contains("latents")) {
    const auto& s = j.at("latents");
    std::set<std::string> k;
    take(s, "rollouts", c.latent_rollouts, k);
    take(s, "steps", c.latent_steps, k);
    detail::reject_unknown(s, k, "latents.");
  }
  c.validate();
  return c;
}

inline void ExperimentConfig::validate() const {
  hyper.validate();
  if (!(nu >= 0.0 && nu <= 1.0)) throw ConfigError("nu must lie in [0, 1]");
  if (slots < 0) throw ConfigError("slots must be non-negative");
  if (seeds < 1) throw ConfigError("seeds must be >= 1");
  if (train.episodes < 0 || train.collect_steps < 0 || train.updates_per_episode < 0)
    throw ConfigError("train counts must be non-negative");
  if (test.collect_steps < 0 || test.slots < 0 || eval_from < 0) throw ConfigError("test counts must be non-negative");
  for (long s : test.finetune_steps)
    if (s < 1) throw ConfigError("fine-tune steps are 1-based");
  if (baseline_update_every < 1 || dynamic_update_every < 1) throw ConfigError("update periods must be >= 1");
  if (dynamic_slots < 0 || baseline_pretrain_slots < 0) throw ConfigError("dynamic slot counts must be non-negative");
  if (latent_rollouts < 0 || latent_steps < 1) throw ConfigError("latent export needs rollouts >= 0 and steps >= 1");
  static const std::set<std::string> policies{"never", "always", "random", "oracle"};
  if (policies.count(policy) == 0) throw ConfigError("unknown policy '" + policy + "'");
}

inline std::string canonical_dump(const ExperimentConfig& c) { return to_json(c).dump(); }

/// FNV-1a over the canonical dump; `out` is excluded since it names where results go.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("out");
  const auto s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
  return from_json(j);
}

}  // namespace gma::bench
