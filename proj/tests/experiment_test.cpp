// Copyright 2026 The moelab Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <variant>

#include "moelab/checkpoint.hpp"
#include "moelab/experiment.hpp"

namespace moelab {
namespace fs = std::filesystem;
namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.model.num_layers = 2;
  c.model.num_experts = 4;
  c.model.d_model = 16;
  c.model.d_ff = 16;
  c.train.steps = 40;
  c.train.eval_every = 0;
  c.train_samples = 64;
  c.eval_samples = 12;
  c.p_values = {0.0, 0.5};
  c.seeds = {0, 1, 2};
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("moelab_experiment_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

class ExperimentTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { model_ = new MoEModel(obtain_model(small_config())); }
  static void TearDownTestSuite() { delete model_; }
  static MoEModel* model_;
};

MoEModel* ExperimentTest::model_ = nullptr;

TEST(ExperimentConfig, JsonRoundTrip) {
  ExperimentConfig c = small_config();
  c.protocol.preset = "grouped";
  c.protocol.ranges = {{0, 1}, {1, 1}};
  c.clamp = true;
  c.transfer.overlap = true;
  c.task.kind = TaskKind::kComparison;
  const auto j = to_json(c);
  const ExperimentConfig back = experiment_config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(config_hash(back), config_hash(c));
  c.seeds.push_back(9);
  EXPECT_NE(config_hash(back), config_hash(c));
  c.checkpoint = "model.moem";
  EXPECT_EQ(experiment_config_from_json(to_json(c)).checkpoint, c.checkpoint);
}

TEST(ExperimentConfig, Validation) {
  ExperimentConfig c = small_config();
  c.seeds.clear();
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.p_values.clear();
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.p_values = {-0.1};
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.protocol.preset = "everything";
  EXPECT_THROW(c.validate(), ConfigError);
  auto j = to_json(small_config());
  j["surprise"] = 1;
  EXPECT_THROW(experiment_config_from_json(j), ConfigError);
  j = to_json(small_config());
  j["seeds"] = "zero";
  EXPECT_THROW(experiment_config_from_json(j), ConfigError);
}

TEST(ProtocolArms, PresetResolution) {
  ProtocolConfig p;
  EXPECT_EQ(protocol_arms(p, 3).size(), 3u);
  p.preset = "single-expert";
  p.expert = 2;
  auto arms = protocol_arms(p, 3);
  ASSERT_EQ(arms.size(), 1u);
  EXPECT_EQ(std::get<target::SingleExpert>(arms[0]).id, (ExpertId{0, 2}));
  p.preset = "cross-layer";
  arms = protocol_arms(p, 26);
  ASSERT_EQ(arms.size(), 4u);
  EXPECT_EQ(std::get<target::HighestFrequent>(arms[3]).layer, 25);
  p.preset = "grouped";
  arms = protocol_arms(p, 26);
  ASSERT_EQ(arms.size(), 3u);
  EXPECT_EQ(std::get<target::GroupedHighestFrequent>(arms[1]).ranges, (std::vector<LayerRange>{{8, 17}}));
  p.preset = "topk";
  p.layers = {1};
  arms = protocol_arms(p, 3);
  ASSERT_EQ(arms.size(), 1u);
  EXPECT_EQ(std::get<target::TopKFrequent>(arms[0]).k, 2);
}

TEST_F(ExperimentTest, ZeroPercentageCellsEqualBaseline) {
  const Report r = run_experiment(small_config(), *model_);
  ASSERT_EQ(r.arms.size(), 2u);
  for (const Arm& arm : r.arms) {
    ASSERT_EQ(arm.cells.size(), 6u);
    for (const Cell& c : arm.cells) {
      if (c.p != 0) continue;
      EXPECT_EQ(c.ica, r.baseline_ica);
      EXPECT_EQ(c.pia, r.baseline_pia);
    }
    EXPECT_EQ(arm.targets.size(), 4u);
  }
}

TEST_F(ExperimentTest, SummaryHasOneRowPerCellPlusBaseline) {
  const Report r = run_experiment(small_config(), *model_);
  const std::string csv = summary_csv(r);
  const auto lines = std::count(csv.begin(), csv.end(), '\n');
  EXPECT_EQ(lines, 1 + 1 + static_cast<long>(r.arms.size()) * 2 * 3);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "arm,p,seed,ica,pia,degenerate");
  const auto j = report_json(r);
  EXPECT_EQ(j["metadata"]["config_hash"], config_hash(r.config));
  EXPECT_EQ(j["arms"].size(), r.arms.size());
  EXPECT_TRUE(j.contains("comparison"));
}

TEST_F(ExperimentTest, EmittedReportIsReproducible) {
  ExperimentConfig c = small_config();
  const fs::path dir = scratch_dir("repro");
  c.checkpoint = dir / "model.moem";
  save_checkpoint(*model_, *c.checkpoint);
  emit_report(run_experiment(c), dir / "a");
  emit_report(run_experiment(c), dir / "b");
  for (const char* f : {"report.json", "summary.csv", "heatmap.csv", "compression.csv"})
    EXPECT_EQ(read_file(dir / "a" / f), read_file(dir / "b" / f)) << f;

  const Bytes report = read_file(dir / "a" / "report.json");
  const auto j = nlohmann::ordered_json::parse(report.begin(), report.end());
  emit_report(run_experiment(experiment_config_from_json(j["config"])), dir / "c");
  EXPECT_EQ(read_file(dir / "c" / "report.json"), report);
}

TEST_F(ExperimentTest, TrainingPathIsDeterministic) {
  const MoEModel again = obtain_model(small_config());
  EXPECT_TRUE(bitwise_equal(again, *model_));
}

TEST_F(ExperimentTest, Errors) {
  ExperimentConfig c = small_config();
  c.checkpoint = "/nonexistent/model.moem";
  EXPECT_THROW(run_experiment(c), IoError);
  const fs::path dir = scratch_dir("errors");
  write_file(dir / "junk.moem", Bytes{'n', 'o', 'p', 'e'});
  c.checkpoint = dir / "junk.moem";
  EXPECT_THROW(run_experiment(c), IoError);
  c = small_config();
  c.protocol.layers = {5};
  EXPECT_THROW(run_experiment(c, *model_), ConfigError);
  EXPECT_THROW(run_experiment(c), ConfigError);
}

TEST_F(ExperimentTest, RandomizePresetChangesOnlyTheTarget) {
  ExperimentConfig c = small_config();
  c.protocol.preset = "randomize";
  c.protocol.expert = 1;
  c.p_values = {0.5};
  c.seeds = {4};
  const Report r = run_experiment(c, *model_);
  ASSERT_EQ(r.arms.size(), 1u);
  EXPECT_EQ(r.arms[0].targets, (std::vector<ExpertId>{{0, 1}}));
  EXPECT_EQ(r.arms[0].cells.size(), 1u);
}

}  // namespace
}  // namespace moelab
