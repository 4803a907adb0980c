// Command-line front end: simulate | meta-train | meta-test | oracle | export-latents.

#include <iostream>

#include <CLI11.hpp>

#include "gma/bench/commands.hpp"

namespace {

using gma::bench::ExperimentConfig;

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> seeds;
  std::optional<std::string> out;
  std::optional<std::string> preset;
  std::vector<std::string> scenarios;
  std::optional<std::string> policy;
  std::optional<long> slots;
  std::optional<int> episodes;
  std::optional<int> updates;
  std::optional<double> nu;
  std::optional<int> experts;
  std::optional<std::string> checkpoint;
  std::optional<int> rollouts;
  bool zero_shot = false;
  bool dynamic = false;
  bool baselines = false;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "JSON config file");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--seeds", o.seeds, "number of seeds (seed, seed+1, ...)");
  cmd->add_option("--out", o.out, "output directory");
}

ExperimentConfig resolve(const std::string& command, const Overrides& o) {
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : gma::bench::load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.seeds) c.seeds = *o.seeds;
  if (o.out) c.out = *o.out;
  if (o.preset) {
    if (command == "meta-train") {
      c.tasks = *o.preset;
    } else if (command == "oracle") {
      c.scenarios = {*o.preset};
    } else {
      c.test_tasks = *o.preset;
    }
    gma::bench::resolve_scenarios(*o.preset);
  }
  if (!o.scenarios.empty()) c.scenarios = o.scenarios;
  if (o.policy) c.policy = *o.policy;
  if (o.slots) {
    if (command == "simulate") {
      c.slots = *o.slots;
    } else if (c.dynamic || o.dynamic) {
      c.dynamic_slots = *o.slots;
    } else {
      c.test.slots = *o.slots;
    }
  }
  if (o.episodes) c.train.episodes = *o.episodes;
  if (o.updates) c.train.updates_per_episode = *o.updates;
  if (o.nu) c.nu = *o.nu;
  if (o.experts) c.hyper.experts = *o.experts;
  if (o.checkpoint) c.checkpoint = *o.checkpoint;
  if (o.rollouts) c.latent_rollouts = *o.rollouts;
  if (o.zero_shot) c.zero_shot = true;
  if (o.dynamic) c.dynamic = true;
  if (o.baselines) c.baselines = true;
  if (o.deterministic) c.deterministic = true;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  gma::bench::tune_allocator();
  CLI::App app{"GMA random-access meta-RL bench"};
  app.require_subcommand(1);
  Overrides o;

  auto* sim = app.add_subcommand("simulate", "run a fixed agent policy against a scenario");
  add_common(sim, o);
  sim->add_option("--scenario", o.scenarios, "scenario, e.g. tdma:5 or tdma:2+qaloha:0.1");
  sim->add_option("--policy", o.policy, "never | always | random | oracle");
  sim->add_option("--slots", o.slots, "number of slots");

  auto* train = app.add_subcommand("meta-train", "meta-train on a task set");
  add_common(train, o);
  train->add_option("--preset", o.preset, "task-set preset or comma-separated scenarios");
  train->add_option("--episodes", o.episodes, "training episodes");
  train->add_option("--updates", o.updates, "update calls per episode");
  train->add_option("--nu", o.nu, "fairness factor");
  train->add_option("--experts", o.experts, "number of experts M");

  auto* test = app.add_subcommand("meta-test", "adapt a checkpoint to test environments");
  add_common(test, o);
  test->add_option("--checkpoint", o.checkpoint, "checkpoint.bin from meta-train")->required();
  test->add_option("--preset", o.preset, "test-set preset or comma-separated scenarios");
  test->add_option("--slots", o.slots, "slots per run");
  test->add_option("--nu", o.nu, "fairness factor");
  test->add_flag("--zero-shot", o.zero_shot, "no fine-tuning updates");
  test->add_flag("--dynamic", o.dynamic, "run the scenario-change schedule");
  test->add_flag("--baselines", o.baselines, "also run scratch SAC and DQN");
  test->add_flag("--deterministic", o.deterministic, "act with the policy mean");

  auto* oracle = app.add_subcommand("oracle", "optimal throughput table");
  add_common(oracle, o);
  oracle->add_option("--scenario", o.scenarios, "scenarios (repeatable)");
  oracle->add_option("--preset", o.preset, "task-set preset");

  auto* lat = app.add_subcommand("export-latents", "write task latents and gate weights");
  add_common(lat, o);
  lat->add_option("--checkpoint", o.checkpoint, "checkpoint.bin from meta-train")->required();
  lat->add_option("--preset", o.preset, "environment preset or comma-separated scenarios");
  lat->add_option("--rollouts", o.rollouts, "rollouts per environment");

  CLI11_PARSE(app, argc, argv);
  try {
    const std::string command = app.get_subcommands().front()->get_name();
    const auto cfg = resolve(command, o);
    gma::bench::json summary;
    if (command == "simulate") {
      summary = gma::bench::cmd_simulate(cfg);
    } else if (command == "meta-train") {
      summary = gma::bench::cmd_meta_train(cfg);
    } else if (command == "meta-test") {
      summary = gma::bench::cmd_meta_test(cfg);
    } else if (command == "oracle") {
      summary = gma::bench::cmd_oracle(cfg);
    } else {
      summary = gma::bench::cmd_export_latents(cfg);
    }
    std::cout << summary.dump(2) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
