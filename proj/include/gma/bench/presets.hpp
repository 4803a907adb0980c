#pragma once

// Named task sets and scenario schedules.

#include <map>
#include <string>
#include <vector>

#include "gma/bench/config.hpp"

namespace gma::bench {

inline const std::map<std::string, std::vector<std::string>>& task_set_presets() {
  static const std::map<std::string, std::vector<std::string>> presets = [] {
    std::map<std::string, std::vector<std::string>> p;
    p["diversity-set-1"] = {"tdma:1", "tdma:2", "tdma:3", "tdma:5", "tdma:6", "tdma:7", "tdma:8", "tdma:9"};
    p["diversity-set-2"] = {"tdma:1", "tdma:3", "tdma:5", "tdma:6", "tdma:7", "tdma:9", "qaloha:0.1", "qaloha:0.7"};
    p["diversity-set-3"] = {"tdma:1",     "tdma:5",     "tdma:6",    "tdma:7",
                            "tdma:9",     "qaloha:0.1", "qaloha:0.7", "ebaloha:2"};
    p["diversity-set-4"] = {"tdma:1",     "tdma:5",    "tdma:9",    "qaloha:0.1",
                            "qaloha:0.7", "fwaloha:3", "fwaloha:4", "ebaloha:2"};
    p["trainset-8"] = p["diversity-set-4"];
    p["test-6"] = {"tdma:5", "qaloha:0.8", "fwaloha:2", "ebaloha:3", "tdma:2+qaloha:0.1", "tdma:3+qaloha:0.6"};
    const std::vector<std::string> q{"qaloha:0.1", "qaloha:0.7", "qaloha:0.5", "qaloha:0.3", "qaloha:0.9"};
    const std::vector<std::string> x{"tdma:1", "tdma:9", "tdma:5", "tdma:3", "tdma:7"};
    for (std::size_t n = 1; n <= q.size(); ++n) {
      p["qaloha-sweep-" + std::to_string(n)] = {q.begin(), q.begin() + static_cast<long>(n)};
      p["tdma-sweep-" + std::to_string(n)] = {x.begin(), x.begin() + static_cast<long>(n)};
    }
    return p;
  }();
  return presets;
}

/// Resolves a preset name or a comma-separated list of scenario strings.
inline std::vector<std::string> resolve_scenarios(const std::string& spec) {
  const auto& presets = task_set_presets();
  if (auto it = presets.find(spec); it != presets.end()) return it->second;
  if (spec.find(':') == std::string::npos) throw ConfigError("unknown preset '" + spec + "'");
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto comma = spec.find(',', start);
    const auto part = spec.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (part.empty()) throw ConfigError("empty scenario in list '" + spec + "'");
    sim::parse_scenario(part);
    out.push_back(part);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::vector<env::TaskSpec> resolve_tasks(const std::string& spec, double nu) {
  std::vector<env::TaskSpec> out;
  for (const auto& s : resolve_scenarios(spec)) out.push_back(env::TaskSpec::from(sim::parse_scenario(s), nu));
  return out;
}

/// Existing-node changes at slots 2000, 4000 and 6000.
inline std::vector<DynamicSegment> default_dynamic_segments() {
  return {{0, "tdma:4"}, {2000, "tdma:2+qaloha:0.1"}, {4000, "tdma:3+qaloha:0.2"}, {6000, "fwaloha:2"}};
}

inline meta::DynamicSchedule dynamic_schedule(const ExperimentConfig& c) {
  meta::DynamicSchedule s;
  const auto segs = c.dynamic_segments.empty() ? default_dynamic_segments() : c.dynamic_segments;
  for (const auto& seg : segs) s.segments.push_back({seg.at, sim::parse_scenario(seg.scenario)});
  s.slots = c.dynamic_slots;
  s.update_every = c.dynamic_update_every;
  s.updates_per_segment = c.dynamic_updates_per_segment;
  return s;
}

}  // namespace gma::bench
