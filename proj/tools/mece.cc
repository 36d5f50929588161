// Command-line front end: init-config, train, ablate, evaluate, export.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mece/error.h"
#include "mece/harness.h"

namespace {

namespace fs = std::filesystem;

int Fail(const std::string& kind, const std::string& message) {
  nlohmann::json err = {{"error", kind}, {"message", message}};
  std::cerr << err.dump() << std::endl;
  return 1;
}

mece::ExperimentConfig LoadOrDefault(const std::string& path) {
  if (path.empty()) return mece::ExperimentConfig{};
  return mece::LoadExperimentConfig(path);
}

// MECE_OUTPUT_DIR replaces the configured output directory.
fs::path OutputDir(const mece::ExperimentConfig& config) {
  if (const char* env = std::getenv("MECE_OUTPUT_DIR"); env && *env) {
    return env;
  }
  return config.output_dir;
}

void PrintSummary(const mece::RunSummary& summary, const fs::path& dir) {
  nlohmann::json out = mece::RunSummaryToJson(summary);
  out["run_dir"] = dir.string();
  std::cout << out.dump(2) << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Morphology and environment co-evolution trainer"};
  app.require_subcommand(1);

  std::string out_path;
  auto* init = app.add_subcommand("init-config", "write a full default config");
  init->add_option("-o,--output", out_path, "file to write (stdout if omitted)");

  std::string config_path;
  std::string checkpoint_path;
  auto* train = app.add_subcommand("train", "run every seed of an experiment");
  train->add_option("-c,--config", config_path, "experiment config JSON");

  std::string mode;
  auto* ablate = app.add_subcommand("ablate", "run an ablation mode");
  ablate->add_option("-c,--config", config_path, "base experiment config JSON");
  ablate->add_option("--mode", mode, "ablation mode")->required();
  ablate->add_option("--checkpoint", checkpoint_path,
                     "checkpoint of a prior run (fixed_*_final modes)");

  std::string eval_checkpoint;
  auto* evaluate = app.add_subcommand(
      "evaluate", "evaluate a checkpoint on the held-out suite");
  evaluate->add_option("--checkpoint", eval_checkpoint, "checkpoint JSON")
      ->required();
  evaluate->add_option("-c,--config", config_path,
                       "experiment config supplying the suite settings");

  std::string run_dir;
  auto* export_cmd = app.add_subcommand("export", "write CSV tables of a run");
  export_cmd->add_option("run_dir", run_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return Fail("usage", e.what());
  }

  try {
    if (*init) {
      std::string text =
          mece::ExperimentConfigToJson(mece::ExperimentConfig{}).dump(2) + "\n";
      if (out_path.empty()) {
        std::cout << text;
      } else {
        std::ofstream(out_path) << text;
      }
    } else if (*train) {
      mece::ExperimentConfig config = LoadOrDefault(config_path);
      fs::path dir = OutputDir(config);
      PrintSummary(mece::RunExperiment(config, dir), dir);
    } else if (*ablate) {
      mece::ExperimentConfig config = LoadOrDefault(config_path);
      config.modes = {mece::AblationModeFromName(mode)};
      if (!checkpoint_path.empty()) {
        nlohmann::json ckpt = mece::LoadJson(checkpoint_path);
        config.final_morphology = mece::CheckpointMorphology(ckpt);
        config.final_env = mece::CheckpointEnv(ckpt);
      }
      fs::path dir = OutputDir(config) / mode;
      PrintSummary(mece::RunExperiment(config, dir), dir);
    } else if (*evaluate) {
      mece::ExperimentConfig config = LoadOrDefault(config_path);
      nlohmann::json ckpt = mece::LoadJson(eval_checkpoint);
      mece::ControlPolicy policy = mece::CheckpointControlPolicy(ckpt);
      mece::Morphology morph = mece::CheckpointMorphology(ckpt);
      mece::SimConfig sim = config.coevo.sim;
      mece::TerrainConfig terrain = config.coevo.terrain;
      if (ckpt.contains("sim")) sim = mece::SimConfigFromJson(ckpt["sim"], sim);
      if (ckpt.contains("terrain")) {
        terrain = mece::TerrainConfigFromJson(ckpt["terrain"], terrain);
      }
      mece::EnvKind kind = ckpt.contains("env_kind")
                               ? mece::EnvKindFromName(ckpt["env_kind"])
                               : config.coevo.env_kind;
      mece::EvalSuite suite =
          mece::MakeEvalSuite(kind, terrain, config.eval_seed, config.eval_envs);
      std::vector<double> returns =
          mece::EvaluateOnSuite(policy, morph, suite, terrain,
                                config.eval_episodes, config.eval_horizon, sim);
      mece::MeanStd ms = mece::ComputeMeanStd(returns);
      nlohmann::json out = {{"checkpoint", eval_checkpoint},
                            {"env_returns", returns},
                            {"mean_return", ms.mean},
                            {"std_return", ms.std}};
      std::cout << out.dump(2) << std::endl;
    } else if (*export_cmd) {
      nlohmann::json out = nlohmann::json::array();
      for (const auto& path : mece::ExportMetrics(run_dir)) {
        out.push_back(path.string());
      }
      std::cout << out.dump() << std::endl;
    }
  } catch (const mece::Error& e) {
    return Fail(mece::ErrorKindName(e.kind()), e.what());
  } catch (const std::exception& e) {
    return Fail("internal", e.what());
  }
  return 0;
}
