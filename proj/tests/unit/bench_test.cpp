#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "gma/bench/commands.hpp"

using namespace gma;
using namespace gma::bench;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("gma_bench_test_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.out = out.string();
  c.hyper.env.history = 3;
  c.hyper.env.throughput_window = 20;
  c.hyper.hidden = 8;
  c.hyper.experts = 2;
  c.hyper.latent_dim = 2;
  c.hyper.batch_size = 8;
  c.hyper.context_size = 10;
  c.hyper.buffer_capacity = 50;
  c.tasks = "tdma:2,qaloha:0.2";
  c.train = {1, 20, 2};
  return c;
}

}  // namespace

TEST(Config, JsonRoundTripAndHash) {
  ExperimentConfig c;
  c.scenarios = {"tdma:5"};
  c.nu = 0.5;
  c.hyper.experts = 1;
  c.train.episodes = 3;
  c.test.finetune_steps = {10, 20};
  c.dynamic_segments = {{0, "tdma:4"}, {100, "qaloha:0.3"}};
  const auto back = from_json(to_json(c));
  EXPECT_EQ(canonical_dump(back), canonical_dump(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  auto moved = c;
  moved.out = "elsewhere";
  EXPECT_EQ(config_hash(moved), config_hash(c));
  moved.seed = 2;
  EXPECT_NE(config_hash(moved), config_hash(c));
}

TEST(Config, UnknownKeysRejected) {
  auto j = to_json(ExperimentConfig{});
  j["hyper"]["foo"] = 1;
  try {
    from_json(j);
    FAIL() << "accepted an unknown key";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("hyper.foo"), std::string::npos);
  }
  auto top = to_json(ExperimentConfig{});
  top["bogus"] = true;
  EXPECT_THROW(from_json(top), ConfigError);
}

TEST(Config, Validation) {
  ExperimentConfig c;
  c.seeds = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.nu = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.policy = "sometimes";
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Presets, TaskSets) {
  const std::vector<std::string> set4{"tdma:1",     "tdma:5",    "tdma:9",    "qaloha:0.1",
                                      "qaloha:0.7", "fwaloha:3", "fwaloha:4", "ebaloha:2"};
  EXPECT_EQ(resolve_scenarios("trainset-8"), set4);
  EXPECT_EQ(resolve_scenarios("diversity-set-4"), set4);
  EXPECT_EQ(resolve_scenarios("test-6").size(), 6u);
  EXPECT_EQ(resolve_scenarios("qaloha-sweep-3"), (std::vector<std::string>{"qaloha:0.1", "qaloha:0.7", "qaloha:0.5"}));
  EXPECT_EQ(resolve_scenarios("tdma-sweep-2"), (std::vector<std::string>{"tdma:1", "tdma:9"}));
  for (int n = 1; n <= 4; ++n) {
    const auto a = resolve_scenarios("qaloha-sweep-" + std::to_string(n));
    const auto b = resolve_scenarios("qaloha-sweep-" + std::to_string(n + 1));
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
  EXPECT_EQ(resolve_scenarios("tdma:2,qaloha:0.1").size(), 2u);
  EXPECT_THROW(resolve_scenarios("no-such-set"), ConfigError);
  EXPECT_THROW(resolve_scenarios("tdma:2,,qaloha:0.1"), ConfigError);
}

TEST(Presets, DefaultDynamicSchedule) {
  const auto s = dynamic_schedule(ExperimentConfig{});
  ASSERT_EQ(s.segments.size(), 4u);
  EXPECT_EQ(s.segments[1].at, 2000);
  EXPECT_EQ(s.segments[3].at, 6000);
  EXPECT_EQ(s.slots, 8000);
}

TEST(Simulate, FixedPoliciesOnLowContentionAloha) {
  const auto dir = scratch_dir("sim");
  ExperimentConfig c;
  c.out = dir.string();
  c.scenarios = {"qaloha:0.1"};
  c.slots = 100000;
  c.policy = "never";
  EXPECT_NEAR(cmd_simulate(c)["sum_throughput"].get<double>(), 0.1, 0.005);
  c.policy = "always";
  const auto s = cmd_simulate(c);
  EXPECT_NEAR(s["sum_throughput"].get<double>(), 0.9, 0.005);
  EXPECT_EQ(s["agent_throughput"].get<double>(), s["sum_throughput"].get<double>());
  EXPECT_EQ(lines(dir / "metrics.csv").size(), 100001u);
  EXPECT_EQ(lines(dir / "trace.jsonl").size(), 100000u);
  EXPECT_TRUE(fs::exists(dir / "run.json"));
}

TEST(Simulate, ZeroSlotsGiveEmptyOutputs) {
  const auto dir = scratch_dir("sim0");
  ExperimentConfig c;
  c.out = dir.string();
  c.scenarios = {"tdma:5"};
  c.slots = 0;
  EXPECT_EQ(cmd_simulate(c)["sum_throughput"].get<double>(), 0.0);
  EXPECT_EQ(lines(dir / "metrics.csv").size(), 1u);
  EXPECT_EQ(fs::file_size(dir / "trace.jsonl"), 0u);
}

TEST(Simulate, OraclePolicyReachesOracle) {
  const auto dir = scratch_dir("simo");
  ExperimentConfig c;
  c.out = dir.string();
  c.scenarios = {"tdma:3+qaloha:0.6"};
  c.slots = 20000;
  c.policy = "oracle";
  EXPECT_NEAR(cmd_simulate(c)["sum_throughput"].get<double>(), 0.58, 0.015);
}

TEST(OracleCommand, CsvRows) {
  const auto dir = scratch_dir("oracle");
  ExperimentConfig c;
  c.out = dir.string();
  c.scenarios = {"test-6"};
  cmd_oracle(c);
  const auto l = lines(dir / "oracle.csv");
  ASSERT_EQ(l.size(), 7u);
  EXPECT_EQ(l[0], "scenarioLabel,value,kind,policySketch");
  EXPECT_NE(l[2].find(",0.8,analytic,"), std::string::npos);
  EXPECT_NE(l[3].find(",1,valueIteration-genie,"), std::string::npos);
  c.scenarios = {"ebaloha:8:6+ebaloha:8:6+ebaloha:8:6+ebaloha:8:6+ebaloha:8:6+ebaloha:8:6+ebaloha:8:6"};
  cmd_oracle(c);
  EXPECT_NE(lines(dir / "oracle.csv")[1].find(",,unsupported,"), std::string::npos);
}

TEST(MetaTrainCommand, ZeroEpisodesSavesInitialization) {
  const auto dir = scratch_dir("train0");
  auto c = tiny_config(dir);
  c.train.episodes = 0;
  cmd_meta_train(c);
  const auto loaded = load_checkpoint((dir / "checkpoint.bin").string());
  const meta::GmaAgent init(c.hyper, c.seed);
  EXPECT_EQ(ad::value_hash(loaded.encoder.params), ad::value_hash(init.encoder.params));
  EXPECT_EQ(ad::value_hash(loaded.sac.actor), ad::value_hash(init.sac.actor));
  EXPECT_EQ(lines(dir / "episodes.csv").size(), 1u);
}

TEST(MetaTrainCommand, OutputsAndDeterminism) {
  const auto a = scratch_dir("train_a"), b = scratch_dir("train_b");
  cmd_meta_train(tiny_config(a));
  cmd_meta_train(tiny_config(b));
  for (const char* f : {"checkpoint.bin", "episodes.csv", "losses.csv"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  EXPECT_EQ(lines(a / "episodes.csv").size(), 3u);
  EXPECT_EQ(lines(a / "losses.csv").size(), 3u);
}

TEST(MetaTestCommand, SummaryAndCurves) {
  const auto dir = scratch_dir("test");
  auto c = tiny_config(dir);
  cmd_meta_train(c);
  c.checkpoint = (dir / "checkpoint.bin").string();
  c.test_tasks = "tdma:5,qaloha:0.8";
  c.test = {5, {20, 25}, 60};
  c.eval_from = 30;
  c.seeds = 2;
  c.baselines = true;
  cmd_meta_test(c);
  const auto l = lines(dir / "summary.csv");
  ASSERT_EQ(l.size(), 7u);  // header + 2 envs x 3 methods
  EXPECT_EQ(l[0], "env,method,mean,median,std,jain,oracle");
  EXPECT_TRUE(fs::exists(dir / "curve_tdma-5.csv"));
  EXPECT_TRUE(fs::exists(dir / "curve_tdma-5_dqn.csv"));
  EXPECT_EQ(lines(dir / "curve_q-aloha-0.8_scratch-sac.csv").size(), 61u);
}

TEST(MetaTestCommand, DynamicSegmentsTable) {
  const auto dir = scratch_dir("dyn");
  auto c = tiny_config(dir);
  cmd_meta_train(c);
  c.checkpoint = (dir / "checkpoint.bin").string();
  c.dynamic = true;
  c.seeds = 1;
  c.dynamic_segments = {{0, "tdma:4"}, {100, "qaloha:0.2"}};
  c.dynamic_slots = 200;
  cmd_meta_test(c);
  const auto l = lines(dir / "dynamic_segments.csv");
  ASSERT_EQ(l.size(), 3u);
  EXPECT_NE(l[1].find("gma,0,"), std::string::npos);
  EXPECT_NE(l[2].find(",100,200,"), std::string::npos);
}

TEST(ExportLatents, RowsAndSingleExpertGate) {
  const auto dir = scratch_dir("lat");
  auto c = tiny_config(dir);
  c.hyper.experts = 1;
  cmd_meta_train(c);
  c.checkpoint = (dir / "checkpoint.bin").string();
  c.latent_rollouts = 3;
  c.latent_steps = 15;
  EXPECT_EQ(cmd_export_latents(c)["rows"].get<long>(), 18);
  const auto l = lines(dir / "latents.csv");
  ASSERT_EQ(l.size(), 19u);
  EXPECT_EQ(l[0], "envLabel,z0,z1,g0");
  for (std::size_t i = 1; i < l.size(); ++i) EXPECT_EQ(l[i].substr(l[i].rfind(',') + 1), "1");
}

TEST(Helpers, NumberFormattingAndMedian) {
  EXPECT_EQ(num(0.5), "0.5");
  EXPECT_EQ(num(std::nan("")), "nan");
  EXPECT_EQ(median_of({3, 1, 2}), 2.0);
  EXPECT_EQ(median_of({4, 1, 2, 3}), 2.5);
  EXPECT_TRUE(std::isnan(safe_jain(0.0, 0.0)));
  EXPECT_EQ(slug("TDMA(2)+q-ALOHA(0.1)"), "tdma-2_q-aloha-0.1");
}
