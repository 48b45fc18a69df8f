#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "g2pm/cli.hpp"
#include "g2pm/config.hpp"
#include "g2pm/dataset.hpp"
#include "g2pm/diagnostics.hpp"
#include "g2pm/error.hpp"
#include "test_util.hpp"

namespace g2pm {
namespace {

namespace fs = std::filesystem;
using cli::RunConfig;
using json = nlohmann::json;
using testing::TempDir;

int run(std::vector<std::string> args, std::vector<std::string> env = {}) {
  args.insert(args.begin(), "g2pm");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  std::vector<char*> envp;
  for (auto& e : env) envp.push_back(e.data());
  envp.push_back(nullptr);
  return cli::cli_main(static_cast<int>(args.size()), argv.data(), envp.data());
}

// Tiny model and schedule so end-to-end commands finish in well under a second.
std::vector<std::string> tiny_sets() {
  return {"--set", "model.hidden_dim=8",    "--set", "model.num_heads=2",        "--set", "model.enc_layers=1",
          "--set", "model.dec_layers=1",    "--set", "model.sub_enc_layers=1",   "--set", "tokenizer.walk_len=3",
          "--set", "tokenizer.num_patterns=4", "--set", "pretrain.batch_size=32", "--set", "pretrain.warmup_epochs=0"};
}

std::string gen_sbm(const TempDir& dir, const std::string& name, int seed = 7) {
  const auto out = (dir / name).string();
  EXPECT_EQ(run({"gen-synthetic", "--spec", "sbm", "--seed", std::to_string(seed), "--blocks", "20,20", "--out", out}),
            0);
  return out;
}

TEST(Config, RoundTripsThroughJson) {
  RunConfig a;
  a.model.hidden_dim = 48;
  a.run.seeds = {3, 9};
  RunConfig b;
  b.merge_json(a.to_json());
  EXPECT_EQ(b.to_json(), a.to_json());
}

TEST(Config, UnknownKeysAreNamed) {
  RunConfig c;
  try {
    c.merge_json(json{{"model.hiden_dim", 8}, {"pretrain.epochs", 2}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.hiden_dim"), std::string::npos);
  }
  EXPECT_THROW(c.set("nope.key", "1"), ConfigError);
  EXPECT_THROW(c.merge_json(json::array()), ConfigError);
}

TEST(Config, IllTypedValueIsConfigError) {
  RunConfig c;
  EXPECT_THROW(c.set("model.hidden_dim", "wide"), ConfigError);
  EXPECT_THROW(c.merge_json(json{{"model.hidden_dim", "wide"}}), ConfigError);
}

TEST(Config, SetParsesScalarsListsAndEnums) {
  RunConfig c;
  c.set("pretrain.mask_ratio", "0.25");
  c.set("run.seeds", "0,1,2");
  c.set("run.init", "scratch");
  EXPECT_DOUBLE_EQ(c.pretrain.mask_ratio, 0.25);
  EXPECT_EQ(c.run.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_EQ(c.run.init, downstream::InitFrom::scratch);
  c.set("run.seeds", "[4]");
  EXPECT_EQ(c.run.seeds, (std::vector<std::uint64_t>{4}));
}

TEST(Config, EnvNames) {
  EXPECT_EQ(cli::env_to_key("G2PM_MODEL__HIDDEN_DIM"), "model.hidden_dim");
  EXPECT_EQ(cli::env_to_key("G2PM_PRETRAIN__MASK_RATIO"), "pretrain.mask_ratio");
  EXPECT_EQ(cli::env_to_key("HOME"), "");
}

TEST(Config, ApplyEnvOverridesAndRejectsUnknown) {
  RunConfig c;
  std::string a = "G2PM_MODEL__HIDDEN_DIM=24", b = "PATH=/bin";
  std::vector<char*> env{a.data(), b.data(), nullptr};
  c.apply_env(env.data());
  EXPECT_EQ(c.model.hidden_dim, 24u);
  std::string bad = "G2PM_MODEL__WIDTH=3";
  std::vector<char*> env2{bad.data(), nullptr};
  try {
    c.apply_env(env2.data());
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("G2PM_MODEL__WIDTH"), std::string::npos);
  }
}

TEST(Config, ValidateRejectsEmptySeeds) {
  RunConfig c;
  c.run.seeds.clear();
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, LoadFile) {
  TempDir dir("cli");
  testing::write_file(dir / "c.json", R"({"pretrain.epochs": 7})");
  EXPECT_EQ(cli::load_config_file((dir / "c.json").string()).pretrain.epochs, 7u);
  testing::write_file(dir / "bad.json", "{");
  EXPECT_THROW(cli::load_config_file((dir / "bad.json").string()), ConfigError);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}), 2);
  EXPECT_EQ(run({"pretrain", "--no-such-flag"}), 2);
  TempDir dir("cli");
  const auto data = gen_sbm(dir, "d");
  EXPECT_EQ(run({"pretrain", "--data", data, "--out", (dir / "o").string(), "--set", "model.width=3"}), 2);
  EXPECT_EQ(run({"pretrain", "--data", data, "--out", (dir / "o").string()}, {"G2PM_MODEL__WIDTH=3"}), 2);
  EXPECT_EQ(run({"pretrain", "--data", data, "--out", (dir / "o").string(), "--set", "noequals"}), 2);
}

TEST(Cli, RuntimeErrorsExitOne) {
  TempDir dir("cli");
  EXPECT_EQ(run({"pretrain", "--data", (dir / "missing").string(), "--out", (dir / "o").string()}), 1);
}

TEST(Cli, GenSyntheticIsByteIdentical) {
  TempDir dir("cli");
  const auto a = gen_sbm(dir, "a"), b = gen_sbm(dir, "b"), c = gen_sbm(dir, "c", 8);
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto name = entry.path().filename();
    EXPECT_EQ(testing::read_file(entry.path()), testing::read_file(fs::path(b) / name)) << name;
    ++files;
  }
  EXPECT_GT(files, 0u);
  EXPECT_NE(testing::read_file(fs::path(a) / "edges.tsv"), testing::read_file(fs::path(c) / "edges.tsv"));
}

TEST(Cli, PretrainThenProbe) {
  TempDir dir("cli");
  const auto data = gen_sbm(dir, "d");
  const auto pre = (dir / "pre").string();
  auto args = std::vector<std::string>{"pretrain", "--data", data, "--out", pre, "--epochs", "2", "--seeds", "5"};
  for (auto s : tiny_sets()) args.push_back(s);
  ASSERT_EQ(run(args), 0);
  for (auto f : {"checkpoint.bin", "metrics.jsonl", "config.json"}) EXPECT_TRUE(fs::exists(fs::path(pre) / f)) << f;
  auto cfg = json::parse(testing::read_file(fs::path(pre) / "config.json"));
  EXPECT_EQ(cfg["model.hidden_dim"], 8);
  EXPECT_EQ(cfg["pretrain.epochs"], 2);

  const auto probe = (dir / "probe").string();
  args = {"probe", "--data", data, "--out", probe, "--checkpoint", (fs::path(pre) / "checkpoint.bin").string(),
          "--seeds", "0,1"};
  for (auto s : tiny_sets()) args.push_back(s);
  ASSERT_EQ(run(args), 0);
  auto rep = json::parse(testing::read_file(fs::path(probe) / "report.json"));
  EXPECT_EQ(rep["seeds"].size(), 2u);
  EXPECT_EQ(rep["values"].size(), 2u);
  EXPECT_EQ(rep["extra"]["encoder"], "pretrained");
  EXPECT_GE(rep["mean"].get<double>(), 0.0);
  EXPECT_LE(rep["mean"].get<double>(), 1.0);
}

TEST(Cli, ResumeContinuesFromCheckpoint) {
  TempDir dir("cli");
  const auto data = gen_sbm(dir, "d");
  auto args = std::vector<std::string>{"pretrain", "--data", data, "--out", (dir / "a").string(), "--epochs", "1"};
  for (auto s : tiny_sets()) args.push_back(s);
  ASSERT_EQ(run(args), 0);
  args = {"pretrain", "--data", data, "--out", (dir / "b").string(), "--epochs", "2",
          "--resume", (dir / "a" / "checkpoint.bin").string()};
  for (auto s : tiny_sets()) args.push_back(s);
  ASSERT_EQ(run(args), 0);
  EXPECT_TRUE(fs::exists(dir / "b" / "checkpoint.bin"));
}

TEST(Cli, GradCheckPassesAndWritesReport) {
  TempDir dir("cli");
  EXPECT_EQ(run({"grad-check", "--out", dir.path().string()}), 0);
  auto rep = json::parse(testing::read_file(dir / "grad_check.json"));
  EXPECT_LE(rep["max_rel_error"].get<double>(), 1e-4);
  EXPECT_EQ(run({"grad-check", "--tolerance", "0"}), 1);
}

TEST(Cli, WalkStatsReportAndTokenDump) {
  TempDir dir("cli");
  graph::GeneratorSpec spec;
  spec.kind = graph::GeneratorSpec::Kind::cycle;
  spec.n = 6;
  graph::write_dataset(graph::gen_synthetic(spec, 0), dir / "cyc");
  ASSERT_EQ(run({"walk-stats", "--data", (dir / "cyc").string(), "--samples", "2000", "--out", (dir / "ws").string(),
                 "--dump-tokens", (dir / "tok.jsonl").string(), "--walk-len", "4", "--num-patterns", "2"}),
            0);
  auto rep = json::parse(testing::read_file(dir / "ws" / "walk_stats.json"));
  EXPECT_GT(rep["pooled_p"].get<double>(), 0.01);
  EXPECT_EQ(rep["stall_rate"].get<double>(), 0.0);
  const auto dump = testing::read_file(dir / "tok.jsonl");
  EXPECT_EQ(std::count(dump.begin(), dump.end(), '\n'), 6);
  auto first = json::parse(dump.substr(0, dump.find('\n')));
  EXPECT_EQ(first["walks"].size(), 2u);
  EXPECT_EQ(first["walks"][0].size(), 5u);
}

TEST(WalkStats, IsolatedNodesStall) {
  auto g = testing::simple_graph(4, {{0, 1}, {1, 2}});
  diag::WalkStatsConfig c;
  c.samples_per_node = 1000;
  auto rep = diag::walk_stats(g, c);
  EXPECT_GT(rep.stall_rate, 0.0);
  EXPECT_GT(rep.pooled_p, 0.01);
}

TEST(WalkStats, DetectsRegularGraphLaw) {
  graph::GeneratorSpec spec;
  spec.kind = graph::GeneratorSpec::Kind::complete;
  spec.n = 5;
  auto ds = graph::gen_synthetic(spec, 0);
  diag::WalkStatsConfig c;
  c.samples_per_node = 20000;
  c.seed = 3;
  auto rep = diag::walk_stats(ds.graphs[0], c);
  EXPECT_EQ(rep.nodes.size(), 5u);
  EXPECT_EQ(rep.pooled_dof, 15u);
  EXPECT_GT(rep.pooled_p, 0.01);
  EXPECT_EQ(rep.stall_rate, 0.0);
}

}  // namespace
}  // namespace g2pm
