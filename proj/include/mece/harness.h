#ifndef MECE_HARNESS_H_
#define MECE_HARNESS_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mece/coevo.h"
#include "mece/morphology.h"
#include "mece/policies.h"
#include "mece/sim2d.h"

namespace mece {

enum class AblationMode {
  kOriginal,
  kPeriodicEnvsRandom,
  kFixedEnvsInitial,
  kFixedEnvsFinal,
  kRandomMorph,
  kFixedMorphInitial,
  kFixedMorphFinal,
  kFixedUpdateWindow,
  kRewardI,
  kRewardII,
  kRewardIII,
};

const char* AblationModeName(AblationMode mode);
// Throws kValidation on an unknown name.
AblationMode AblationModeFromName(const std::string& name);
std::vector<std::string> AblationModeNames();

struct ExperimentConfig {
  CoEvoConfig coevo;
  // One mode, or several that touch different strategy hooks (for example
  // fixed_morph_initial together with fixed_envs_initial).
  std::vector<AblationMode> modes{AblationMode::kOriginal};
  std::vector<uint64_t> seeds{0, 1, 2};
  std::string output_dir = "runs/mece";

  // held-out evaluation
  uint64_t eval_seed = 20240;
  int eval_envs = 12;
  int eval_episodes = 2;  // terrains per held-out environment
  int eval_horizon = 1000;

  // artifacts of a prior run, required by the *_final modes
  std::optional<Morphology> final_morphology;
  std::optional<EnvParams> final_env;

  // Throws kValidation with every problem found.
  void Validate() const;
  std::string ModeLabel() const;  // names joined with '+'
};

nlohmann::json ExperimentConfigToJson(const ExperimentConfig& config);
// Missing fields keep the defaults. Throws kSchema on malformed fields.
ExperimentConfig ExperimentConfigFromJson(const nlohmann::json& doc);
ExperimentConfig LoadExperimentConfig(const std::filesystem::path& path);

// Strategy for `modes`. Throws kValidation when two modes share a hook or a
// *_final mode lacks its artifact.
Strategy StrategyForModes(std::span<const AblationMode> modes,
                          const std::optional<Morphology>& final_morphology,
                          const std::optional<EnvParams>& final_env,
                          int window_period);
// Engine config of one seed.
CoEvoConfig SeedConfig(const ExperimentConfig& config, uint64_t seed);

// ---------------------------------------------------------------------------
// Held-out evaluation.

struct EvalSuite {
  uint64_t seed = 0;
  std::vector<EnvParams> params;
  std::vector<uint64_t> terrain_seeds;  // first terrain seed of each env
};

// `count` environments drawn uniformly within bounds from a dedicated stream.
EvalSuite MakeEvalSuite(EnvKind kind, const TerrainConfig& terrain,
                        uint64_t seed, int count = 12);
// True when any suite environment equals a training environment.
bool SuiteIntersects(const EvalSuite& suite,
                     std::span<const EnvParams> training);

// Mean deterministic return per suite environment over `episodes` terrains.
std::vector<double> EvaluateOnSuite(const ControlPolicy& policy,
                                    const Morphology& morphology,
                                    const EvalSuite& suite,
                                    const TerrainConfig& terrain, int episodes,
                                    int horizon, const SimConfig& sim);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};
MeanStd ComputeMeanStd(std::span<const double> values);

// ---------------------------------------------------------------------------
// Runs.

struct SeedResult {
  uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<double> env_returns;  // one per suite environment
  double mean_return = 0.0;
  int final_node_count = 0;
  bool structure_unchanged = false;  // final morphology vs. the initial one
  bool heldout_isolated = true;
};

struct RunSummary {
  std::string mode;
  std::vector<SeedResult> seeds;
  MeanStd across_seeds;  // of per-seed means
  MeanStd across_all;    // over every seed x environment
};

nlohmann::json RunSummaryToJson(const RunSummary& summary);

// Trains every seed, evaluates on the suite and writes
//   <dir>/config.json, <dir>/seed_<s>/{metrics.jsonl,checkpoint.json},
//   <dir>/eval.json, <dir>/summary.json
// A failed seed is recorded and the others proceed.
RunSummary RunExperiment(const ExperimentConfig& config,
                         const std::filesystem::path& dir);

// Checkpoint artifacts for the *_final modes.
Morphology CheckpointMorphology(const nlohmann::json& checkpoint);
EnvParams CheckpointEnv(const nlohmann::json& checkpoint);
// Rebuilds the control policy stored in a checkpoint.
ControlPolicy CheckpointControlPolicy(const nlohmann::json& checkpoint);
nlohmann::json LoadJson(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Metrics export.

// Parses a JSON-lines log. Throws kParse naming the offending line.
std::vector<nlohmann::json> ReadMetricsLog(const std::filesystem::path& path);

struct CurvePoint {
  int64_t step = 0;
  double mean = 0.0;
  double std = 0.0;
  int seeds = 0;
};
// Control-update mean episode returns grouped by step across seeds.
std::vector<CurvePoint> LearningCurve(
    const std::vector<std::vector<nlohmann::json>>& logs);

struct StageRow {
  int stage = 0;
  int64_t step_begin = 0;
  int64_t step_end = 0;
  int samples = 0;
  double mean = 0.0;
  double std = 0.0;
};
// Training roughness per stage: the budget split into `stages` equal spans,
// one sample per control update, placed by the step it finished on.
std::vector<StageRow> RoughnessStages(
    const std::vector<std::vector<nlohmann::json>>& logs, int64_t budget,
    int stages = 10);

// Writes learning_curve.csv and roughness_stages.csv into `dir` from the seed
// logs below it. Returns the paths written.
std::vector<std::filesystem::path> ExportMetrics(
    const std::filesystem::path& dir);

}  // namespace mece

#endif  // MECE_HARNESS_H_
