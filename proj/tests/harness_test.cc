#include "mece/harness.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "configs.h"
#include "mece/error.h"

namespace mece {
namespace {

namespace fs = std::filesystem;

fs::path FreshDir(const std::string& name) {
  fs::path dir = fs::path(::testing::TempDir()) / ("mece_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string ReadFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::vector<std::string>> ReadCsv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream s(line);
    std::string cell;
    while (std::getline(s, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

ExperimentConfig TinyExperiment() {
  ExperimentConfig c;
  c.coevo = testing::TinyConfig();
  c.coevo.budget = 1024;
  c.seeds = {0, 1};
  c.eval_envs = 3;
  c.eval_episodes = 1;
  c.eval_horizon = 40;
  return c;
}

TEST(ModeTest, NamesRoundTrip) {
  for (const auto& name : AblationModeNames()) {
    EXPECT_EQ(AblationModeName(AblationModeFromName(name)), name);
  }
  EXPECT_EQ(AblationModeNames().size(), 11u);
  try {
    AblationModeFromName("bogus");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
  }
}

TEST(ModeTest, StrategiesPerMode) {
  auto strategy = [](std::vector<AblationMode> modes) {
    return StrategyForModes(modes, std::nullopt, std::nullopt, 5);
  };
  EXPECT_EQ(strategy({AblationMode::kRandomMorph}).morph, MorphStrategy::kRandom);
  EXPECT_EQ(strategy({AblationMode::kPeriodicEnvsRandom}).env,
            EnvStrategy::kRandom);
  Strategy window = strategy({AblationMode::kFixedUpdateWindow});
  EXPECT_EQ(window.schedule, UpdateSchedule::kFixedWindow);
  EXPECT_EQ(window.window_period, 5);
  EXPECT_FALSE(strategy({AblationMode::kRewardI}).train_morph_policy);
  EXPECT_EQ(strategy({AblationMode::kRewardII}).morph_reward,
            MorphRewardKind::kProgress);
  EXPECT_EQ(strategy({AblationMode::kRewardIII}).env_reward,
            EnvRewardKind::kCrossMorphology);
  Strategy both = strategy(
      {AblationMode::kFixedMorphInitial, AblationMode::kFixedEnvsInitial});
  EXPECT_EQ(both.morph, MorphStrategy::kFixed);
  EXPECT_EQ(both.env, EnvStrategy::kFixed);
}

TEST(ModeTest, ConflictsAreRejected) {
  std::vector<AblationMode> same_hook{AblationMode::kRandomMorph,
                                      AblationMode::kFixedMorphInitial};
  EXPECT_THROW(StrategyForModes(same_hook, std::nullopt, std::nullopt, 4), Error);
  std::vector<AblationMode> with_original{AblationMode::kOriginal,
                                          AblationMode::kRandomMorph};
  EXPECT_THROW(StrategyForModes(with_original, std::nullopt, std::nullopt, 4),
               Error);
  std::vector<AblationMode> none;
  EXPECT_THROW(StrategyForModes(none, std::nullopt, std::nullopt, 4), Error);
}

TEST(ModeTest, FinalModesNeedArtifacts) {
  std::vector<AblationMode> morph{AblationMode::kFixedMorphFinal};
  EXPECT_THROW(StrategyForModes(morph, std::nullopt, std::nullopt, 4), Error);
  Morphology m = InitialMorphology(3);
  Strategy s = StrategyForModes(morph, m, std::nullopt, 4);
  EXPECT_EQ(*s.start_morphology, m);
  std::vector<AblationMode> env{AblationMode::kFixedEnvsFinal};
  EXPECT_THROW(StrategyForModes(env, std::nullopt, std::nullopt, 4), Error);
  EnvParams p;
  p.max_height = 1.0;
  EXPECT_EQ(*StrategyForModes(env, std::nullopt, p, 4).start_env, p);
}

TEST(ExperimentConfigTest, JsonRoundTrip) {
  ExperimentConfig c = TinyExperiment();
  c.modes = {AblationMode::kFixedMorphInitial, AblationMode::kFixedEnvsInitial};
  c.final_env = EnvParams{};
  ExperimentConfig back = ExperimentConfigFromJson(ExperimentConfigToJson(c));
  EXPECT_EQ(back.modes, c.modes);
  EXPECT_EQ(back.seeds, c.seeds);
  EXPECT_EQ(back.ModeLabel(), "fixed_morph_initial+fixed_envs_initial");
  EXPECT_TRUE(back.final_env.has_value());
  EXPECT_EQ(ExperimentConfigToJson(back), ExperimentConfigToJson(c));

  ExperimentConfig single = ExperimentConfigFromJson({{"modes", "random_morph"}});
  ASSERT_EQ(single.modes.size(), 1u);
  EXPECT_EQ(single.modes[0], AblationMode::kRandomMorph);
}

TEST(ExperimentConfigTest, ValidationCollectsProblems) {
  ExperimentConfig c;
  c.seeds.clear();
  c.eval_envs = 0;
  try {
    c.Validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
    std::string what = e.what();
    EXPECT_NE(what.find("seeds"), std::string::npos);
    EXPECT_NE(what.find("eval_envs"), std::string::npos);
  }
  EXPECT_THROW(ExperimentConfigFromJson(nlohmann::json::array()), Error);
  EXPECT_THROW(ExperimentConfigFromJson({{"seeds", "zero"}}), Error);
}

TEST(ExperimentConfigTest, LoadReportsParseErrors) {
  fs::path dir = FreshDir("load");
  std::ofstream(dir / "bad.json") << "{\"modes\": ";
  try {
    LoadExperimentConfig(dir / "bad.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
  }
  EXPECT_THROW(LoadExperimentConfig(dir / "missing.json"), Error);
}

TEST(EvalSuiteTest, DeterministicAndIsolated) {
  TerrainConfig terrain;
  EvalSuite a = MakeEvalSuite(EnvKind::kRoughTerrain, terrain, 11, 5);
  EvalSuite b = MakeEvalSuite(EnvKind::kRoughTerrain, terrain, 11, 5);
  ASSERT_EQ(a.params.size(), 5u);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.terrain_seeds, b.terrain_seeds);
  std::vector<EnvParams> training{EnvParams{}};
  EXPECT_FALSE(SuiteIntersects(a, training));
  training.push_back(a.params[3]);
  EXPECT_TRUE(SuiteIntersects(a, training));
}

TEST(MeanStdTest, PopulationStd) {
  std::vector<double> v{1.0, 3.0};
  MeanStd ms = ComputeMeanStd(v);
  EXPECT_DOUBLE_EQ(ms.mean, 2.0);
  EXPECT_DOUBLE_EQ(ms.std, 1.0);
  EXPECT_EQ(ComputeMeanStd({}).mean, 0.0);
}

TEST(RunTest, ZeroBudgetStillSummarizes) {
  ExperimentConfig c = TinyExperiment();
  c.coevo.budget = 0;
  fs::path dir = FreshDir("zero");
  RunSummary s = RunExperiment(c, dir);
  ASSERT_EQ(s.seeds.size(), 2u);
  for (const auto& seed : s.seeds) {
    EXPECT_TRUE(seed.ok) << seed.error;
    EXPECT_EQ(seed.env_returns.size(), 3u);
    EXPECT_TRUE(seed.structure_unchanged);
  }
  for (const char* f : {"config.json", "eval.json", "summary.json",
                        "seed_0/metrics.jsonl", "seed_1/checkpoint.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  ExportMetrics(dir);
  EXPECT_EQ(ReadFile(dir / "learning_curve.csv"),
            "step,mean_return,std_return,seeds\n");
  EXPECT_EQ(ReadFile(dir / "roughness_stages.csv"),
            "stage,step_begin,step_end,samples,roughness_mean,roughness_std\n");
}

TEST(RunTest, IdenticalRunsGiveIdenticalOutputs) {
  ExperimentConfig c = TinyExperiment();
  fs::path a = FreshDir("same_a"), b = FreshDir("same_b");
  RunExperiment(c, a);
  RunExperiment(c, b);
  EXPECT_EQ(ReadFile(a / "summary.json"), ReadFile(b / "summary.json"));
  EXPECT_EQ(ReadFile(a / "seed_1/metrics.jsonl"),
            ReadFile(b / "seed_1/metrics.jsonl"));
}

TEST(RunTest, FixedMorphologyKeepsStructure) {
  ExperimentConfig c = TinyExperiment();
  c.modes = {AblationMode::kFixedMorphInitial};
  RunSummary s = RunExperiment(c, FreshDir("fixed"));
  for (const auto& seed : s.seeds) {
    ASSERT_TRUE(seed.ok) << seed.error;
    EXPECT_TRUE(seed.structure_unchanged);
    EXPECT_EQ(seed.final_node_count, InitialMorphology(c.coevo.initial_lv1).size());
    EXPECT_TRUE(seed.heldout_isolated);
  }
}

TEST(RunTest, FailedSeedIsRecorded) {
  ExperimentConfig c = TinyExperiment();
  c.seeds = {0};
  fs::path dir = FreshDir("blocked");
  // a regular file where the seed directory should go
  std::ofstream(dir / "seed_0") << "x";
  RunSummary s = RunExperiment(c, dir);
  ASSERT_EQ(s.seeds.size(), 1u);
  EXPECT_FALSE(s.seeds[0].ok);
  EXPECT_FALSE(s.seeds[0].error.empty());
  EXPECT_TRUE(fs::exists(dir / "summary.json"));
}

TEST(CheckpointTest, RestoresPolicyAndArtifacts) {
  ExperimentConfig c = TinyExperiment();
  c.seeds = {3};
  fs::path dir = FreshDir("ckpt");
  RunExperiment(c, dir);
  nlohmann::json ckpt = LoadJson(dir / "seed_3/checkpoint.json");
  Morphology m = CheckpointMorphology(ckpt);
  EXPECT_TRUE(IsValid(m));
  EXPECT_NO_THROW(ValidateEnvParams(CheckpointEnv(ckpt), c.coevo.terrain));

  Engine engine(SeedConfig(c, 3));
  engine.Train();
  ControlPolicy restored = CheckpointControlPolicy(ckpt);
  EXPECT_EQ(restored.actor().values, engine.control_policy().actor().values);
  EXPECT_EQ(restored.critic().values, engine.control_policy().critic().values);
  EXPECT_THROW(CheckpointMorphology(nlohmann::json::object()), Error);
}

TEST(MetricsTest, CorruptLineNamesTheLine) {
  fs::path dir = FreshDir("corrupt");
  std::ofstream(dir / "m.jsonl") << "{\"event\": \"a\"}\n{\"event\": \"b\"}\n{oops\n";
  try {
    ReadMetricsLog(dir / "m.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
    EXPECT_NE(std::string(e.what()).find("m.jsonl:3"), std::string::npos);
  }
}

TEST(MetricsTest, ConstantRoughnessStages) {
  fs::path dir = FreshDir("constant");
  ExperimentConfig c;
  c.coevo.budget = 100;
  c.seeds = {0};
  std::ofstream(dir / "config.json") << ExperimentConfigToJson(c).dump();
  fs::create_directories(dir / "seed_0");
  std::ofstream log(dir / "seed_0/metrics.jsonl");
  for (int step = 10; step <= 100; step += 10) {
    nlohmann::json r = {{"event", "ppo_update"}, {"policy", "control"},
                        {"step", step},         {"roughness", 3.0},
                        {"mean_return", step * 0.5}};
    log << r.dump() << "\n";
  }
  log.close();
  ExportMetrics(dir);
  auto rows = ReadCsv(dir / "roughness_stages.csv");
  ASSERT_EQ(rows.size(), 11u);
  for (int i = 1; i <= 10; i++) {
    ASSERT_EQ(rows[i].size(), 6u);
    EXPECT_EQ(rows[i][0], std::to_string(i - 1));
    EXPECT_EQ(rows[i][1], std::to_string((i - 1) * 10));
    EXPECT_EQ(rows[i][3], "1");
    EXPECT_EQ(std::stod(rows[i][4]), 3.0);
    EXPECT_EQ(std::stod(rows[i][5]), 0.0);
  }
  auto curve = ReadCsv(dir / "learning_curve.csv");
  ASSERT_EQ(curve.size(), 11u);
  EXPECT_EQ(curve[10][0], "100");
  EXPECT_EQ(std::stod(curve[10][1]), 50.0);
}

TEST(MetricsTest, ExportMatchesRecomputation) {
  ExperimentConfig c = TinyExperiment();
  fs::path dir = FreshDir("export");
  RunExperiment(c, dir);
  ExportMetrics(dir);

  // recompute the stage means straight from the logs
  const int64_t budget = c.coevo.budget;
  std::vector<std::vector<double>> stage(10);
  for (uint64_t seed : c.seeds) {
    std::ifstream in(dir / ("seed_" + std::to_string(seed)) / "metrics.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      auto r = nlohmann::json::parse(line);
      if (r["event"] != "ppo_update" || r["policy"] != "control") continue;
      int64_t step = r["step"];
      int k = static_cast<int>((step - 1) * 10 / budget);
      stage[k].push_back(r["roughness"]);
    }
  }
  auto rows = ReadCsv(dir / "roughness_stages.csv");
  ASSERT_EQ(rows.size(), 11u);
  for (int k = 0; k < 10; k++) {
    EXPECT_EQ(std::stoi(rows[k + 1][3]), static_cast<int>(stage[k].size()));
    if (stage[k].empty()) continue;
    double mean = 0.0;
    for (double v : stage[k]) mean += v / stage[k].size();
    EXPECT_NEAR(std::stod(rows[k + 1][4]), mean, 1e-8 * std::max(1.0, mean));
  }
}

}  // namespace
}  // namespace mece
