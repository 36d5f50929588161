#include "mece/harness.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>

#include "mece/error.h"
#include "mece/rng.h"

namespace mece {
namespace {

struct ModeInfo {
  AblationMode mode;
  const char* name;
  const char* hook;  // at most one mode per hook
};

constexpr ModeInfo kModes[] = {
    {AblationMode::kOriginal, "original", ""},
    {AblationMode::kPeriodicEnvsRandom, "periodic_envs_random", "env"},
    {AblationMode::kFixedEnvsInitial, "fixed_envs_initial", "env"},
    {AblationMode::kFixedEnvsFinal, "fixed_envs_final", "env"},
    {AblationMode::kRandomMorph, "random_morph", "morph"},
    {AblationMode::kFixedMorphInitial, "fixed_morph_initial", "morph"},
    {AblationMode::kFixedMorphFinal, "fixed_morph_final", "morph"},
    {AblationMode::kFixedUpdateWindow, "fixed_update_window", "schedule"},
    {AblationMode::kRewardI, "reward_i", "morph_reward"},
    {AblationMode::kRewardII, "reward_ii", "morph_reward"},
    {AblationMode::kRewardIII, "reward_iii", "env_reward"},
};

const ModeInfo& Info(AblationMode mode) {
  for (const auto& info : kModes) {
    if (info.mode == mode) return info;
  }
  throw Error(ErrorKind::kValidation, "unknown ablation mode");
}

std::string SeedDirName(uint64_t seed) {
  return "seed_" + std::to_string(seed);
}

void WriteText(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorKind::kInput, "cannot write " + path.string());
  }
  out << text;
}

std::string FormatNumber(double v) {
  std::ostringstream out;
  out << std::setprecision(10) << v;
  return out.str();
}

}  // namespace

const char* AblationModeName(AblationMode mode) { return Info(mode).name; }

AblationMode AblationModeFromName(const std::string& name) {
  for (const auto& info : kModes) {
    if (name == info.name) return info.mode;
  }
  throw Error(ErrorKind::kValidation, "unknown ablation mode '" + name + "'");
}

std::vector<std::string> AblationModeNames() {
  std::vector<std::string> names;
  for (const auto& info : kModes) names.emplace_back(info.name);
  return names;
}

// ---------------------------------------------------------------------------

Strategy StrategyForModes(std::span<const AblationMode> modes,
                          const std::optional<Morphology>& final_morphology,
                          const std::optional<EnvParams>& final_env,
                          int window_period) {
  if (modes.empty()) {
    throw Error(ErrorKind::kValidation, "at least one ablation mode is required");
  }
  std::vector<std::string> hooks;
  for (AblationMode mode : modes) {
    const ModeInfo& info = Info(mode);
    if (mode == AblationMode::kOriginal && modes.size() > 1) {
      throw Error(ErrorKind::kValidation,
                  "mode 'original' cannot be combined with other modes");
    }
    if (std::find(hooks.begin(), hooks.end(), info.hook) != hooks.end()) {
      throw Error(ErrorKind::kValidation,
                  std::string("modes overlap on the ") + info.hook + " hook");
    }
    if (*info.hook) hooks.emplace_back(info.hook);
  }

  Strategy s;
  s.window_period = window_period;
  for (AblationMode mode : modes) {
    switch (mode) {
      case AblationMode::kOriginal:
        break;
      case AblationMode::kPeriodicEnvsRandom:
        s.env = EnvStrategy::kRandom;
        break;
      case AblationMode::kFixedEnvsInitial:
        s.env = EnvStrategy::kFixed;
        break;
      case AblationMode::kFixedEnvsFinal:
        if (!final_env) {
          throw Error(ErrorKind::kValidation,
                      "fixed_envs_final needs the final environment of a prior "
                      "run (--checkpoint)");
        }
        s.env = EnvStrategy::kFixed;
        s.start_env = final_env;
        break;
      case AblationMode::kRandomMorph:
        s.morph = MorphStrategy::kRandom;
        break;
      case AblationMode::kFixedMorphInitial:
        s.morph = MorphStrategy::kFixed;
        break;
      case AblationMode::kFixedMorphFinal:
        if (!final_morphology) {
          throw Error(ErrorKind::kValidation,
                      "fixed_morph_final needs the final morphology of a prior "
                      "run (--checkpoint)");
        }
        s.morph = MorphStrategy::kFixed;
        s.start_morphology = final_morphology;
        break;
      case AblationMode::kFixedUpdateWindow:
        s.schedule = UpdateSchedule::kFixedWindow;
        break;
      case AblationMode::kRewardI:
        s.train_morph_policy = false;
        break;
      case AblationMode::kRewardII:
        s.morph_reward = MorphRewardKind::kProgress;
        break;
      case AblationMode::kRewardIII:
        s.env_reward = EnvRewardKind::kCrossMorphology;
        break;
    }
  }
  return s;
}

CoEvoConfig SeedConfig(const ExperimentConfig& config, uint64_t seed) {
  CoEvoConfig c = config.coevo;
  c.seed = seed;
  c.strategy = StrategyForModes(config.modes, config.final_morphology,
                                config.final_env,
                                config.coevo.strategy.window_period);
  return c;
}

void ExperimentConfig::Validate() const {
  std::vector<std::string> problems;
  auto check = [&](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      problems.emplace_back(e.what());
    }
  };
  if (seeds.empty()) problems.emplace_back("seeds must not be empty");
  if (eval_envs < 1) problems.emplace_back("eval_envs must be >= 1");
  if (eval_episodes < 1) problems.emplace_back("eval_episodes must be >= 1");
  if (eval_horizon < 1) problems.emplace_back("eval_horizon must be >= 1");
  if (output_dir.empty()) problems.emplace_back("output_dir must not be empty");
  check([&] { SeedConfig(*this, seeds.empty() ? 0 : seeds.front()).Validate(); });
  if (!problems.empty()) {
    std::string message = "invalid experiment config:";
    for (const auto& p : problems) message += "\n  - " + p;
    throw Error(ErrorKind::kValidation, message);
  }
}

std::string ExperimentConfig::ModeLabel() const {
  std::string label;
  for (AblationMode mode : modes) {
    if (!label.empty()) label += "+";
    label += AblationModeName(mode);
  }
  return label;
}

nlohmann::json ExperimentConfigToJson(const ExperimentConfig& config) {
  nlohmann::json modes = nlohmann::json::array();
  for (AblationMode mode : config.modes) modes.push_back(AblationModeName(mode));
  return {{"coevo", CoEvoConfigToJson(config.coevo)},
          {"modes", modes},
          {"seeds", config.seeds},
          {"output_dir", config.output_dir},
          {"eval_seed", config.eval_seed},
          {"eval_envs", config.eval_envs},
          {"eval_episodes", config.eval_episodes},
          {"eval_horizon", config.eval_horizon},
          {"final_morphology", config.final_morphology
                                   ? MorphologyToJson(*config.final_morphology)
                                   : nlohmann::json(nullptr)},
          {"final_env", config.final_env ? EnvParamsToJson(*config.final_env)
                                         : nlohmann::json(nullptr)}};
}

ExperimentConfig ExperimentConfigFromJson(const nlohmann::json& doc) {
  ExperimentConfig c;
  if (!doc.is_object()) {
    throw Error(ErrorKind::kSchema, "experiment config must be a JSON object");
  }
  try {
    if (doc.contains("coevo")) c.coevo = CoEvoConfigFromJson(doc.at("coevo"));
    if (doc.contains("modes")) {
      c.modes.clear();
      const auto& modes = doc.at("modes");
      if (modes.is_string()) {
        c.modes.push_back(AblationModeFromName(modes.get<std::string>()));
      } else {
        for (const auto& m : modes) {
          c.modes.push_back(AblationModeFromName(m.get<std::string>()));
        }
      }
    }
    if (doc.contains("seeds")) c.seeds = doc.at("seeds").get<std::vector<uint64_t>>();
    c.output_dir = doc.value("output_dir", c.output_dir);
    c.eval_seed = doc.value("eval_seed", c.eval_seed);
    c.eval_envs = doc.value("eval_envs", c.eval_envs);
    c.eval_episodes = doc.value("eval_episodes", c.eval_episodes);
    c.eval_horizon = doc.value("eval_horizon", c.eval_horizon);
    if (doc.contains("final_morphology") && !doc.at("final_morphology").is_null()) {
      c.final_morphology = MorphologyFromJson(doc.at("final_morphology"));
    }
    if (doc.contains("final_env") && !doc.at("final_env").is_null()) {
      c.final_env = EnvParamsFromJson(doc.at("final_env"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kSchema, std::string("experiment config: ") + e.what());
  }
  return c;
}

nlohmann::json LoadJson(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kInput, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kParse, path.string() + ": " + e.what());
  }
}

ExperimentConfig LoadExperimentConfig(const std::filesystem::path& path) {
  return ExperimentConfigFromJson(LoadJson(path));
}

// ---------------------------------------------------------------------------

EvalSuite MakeEvalSuite(EnvKind kind, const TerrainConfig& terrain,
                        uint64_t seed, int count) {
  EvalSuite suite;
  suite.seed = seed;
  Rng rng(seed);
  for (int i = 0; i < count; i++) {
    suite.params.push_back(RandomEnvParams(kind, terrain, rng));
    suite.terrain_seeds.push_back(rng.NextU64());
  }
  return suite;
}

bool SuiteIntersects(const EvalSuite& suite,
                     std::span<const EnvParams> training) {
  for (const auto& p : suite.params) {
    for (const auto& t : training) {
      if (p == t) return true;
    }
  }
  return false;
}

std::vector<double> EvaluateOnSuite(const ControlPolicy& policy,
                                    const Morphology& morphology,
                                    const EvalSuite& suite,
                                    const TerrainConfig& terrain, int episodes,
                                    int horizon, const SimConfig& sim) {
  std::vector<EnvParams> params;
  std::vector<Heightfield> terrains;
  for (size_t j = 0; j < suite.params.size(); j++) {
    for (int k = 0; k < episodes; k++) {
      params.push_back(suite.params[j]);
      terrains.push_back(
          GenerateTerrain(suite.params[j], suite.terrain_seeds[j] + k, terrain));
    }
  }
  std::vector<double> returns =
      EvaluateEpisodes(policy, morphology, params, terrains, horizon, sim);
  std::vector<double> out;
  for (size_t j = 0; j < suite.params.size(); j++) {
    double sum = 0.0;
    for (int k = 0; k < episodes; k++) sum += returns[j * episodes + k];
    out.push_back(sum / episodes);
  }
  return out;
}

MeanStd ComputeMeanStd(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  for (double v : values) out.std += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(out.std / static_cast<double>(values.size()));
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json RunSummaryToJson(const RunSummary& summary) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : summary.seeds) {
    nlohmann::json entry = {{"seed", s.seed}, {"ok", s.ok}};
    if (s.ok) {
      entry["mean_return"] = s.mean_return;
      entry["env_returns"] = s.env_returns;
      entry["final_node_count"] = s.final_node_count;
      entry["structure_unchanged"] = s.structure_unchanged;
      entry["heldout_isolated"] = s.heldout_isolated;
    } else {
      entry["error"] = s.error;
    }
    seeds.push_back(std::move(entry));
  }
  return {{"mode", summary.mode},
          {"seeds", seeds},
          {"mean_over_seeds", summary.across_seeds.mean},
          {"std_over_seeds", summary.across_seeds.std},
          {"mean_over_all", summary.across_all.mean},
          {"std_over_all", summary.across_all.std}};
}

RunSummary RunExperiment(const ExperimentConfig& config,
                         const std::filesystem::path& dir) {
  config.Validate();
  std::filesystem::create_directories(dir);
  WriteText(dir / "config.json", ExperimentConfigToJson(config).dump(2) + "\n");

  const EvalSuite suite =
      MakeEvalSuite(config.coevo.env_kind, config.coevo.terrain,
                    config.eval_seed, config.eval_envs);
  RunSummary summary;
  summary.mode = config.ModeLabel();
  nlohmann::json eval = {{"suite_seed", suite.seed},
                         {"suite", nlohmann::json::array()},
                         {"seeds", nlohmann::json::array()}};
  for (const auto& p : suite.params) eval["suite"].push_back(EnvParamsToJson(p));

  std::vector<double> seed_means, all_returns;
  for (uint64_t seed : config.seeds) {
    SeedResult result;
    result.seed = seed;
    const std::filesystem::path seed_dir = dir / SeedDirName(seed);
    try {
      std::filesystem::create_directories(seed_dir);
      CoEvoConfig coevo = SeedConfig(config, seed);
      std::ofstream metrics(seed_dir / "metrics.jsonl", std::ios::binary);
      if (!metrics) {
        throw Error(ErrorKind::kInput, "cannot write metrics for seed " +
                                           std::to_string(seed));
      }
      Engine engine(coevo, &metrics);
      const Morphology initial = engine.morphology();
      engine.Train();
      metrics.flush();
      WriteText(seed_dir / "checkpoint.json", engine.Checkpoint().dump() + "\n");

      result.env_returns = EvaluateOnSuite(
          engine.control_policy(), engine.morphology(), suite,
          coevo.terrain, config.eval_episodes, config.eval_horizon, coevo.sim);
      result.mean_return = ComputeMeanStd(result.env_returns).mean;
      result.final_node_count = engine.morphology().size();
      result.structure_unchanged =
          engine.morphology().ParentIndices() == initial.ParentIndices();
      std::vector<EnvParams> seen = engine.training_envs();
      for (const auto& e : engine.sew().environments()) seen.push_back(e.params);
      result.heldout_isolated = !SuiteIntersects(suite, seen);
      result.ok = true;
      seed_means.push_back(result.mean_return);
      all_returns.insert(all_returns.end(), result.env_returns.begin(),
                         result.env_returns.end());
    } catch (const std::exception& e) {
      result.ok = false;
      result.error = e.what();
    }
    nlohmann::json entry = {{"seed", seed}, {"ok", result.ok}};
    if (result.ok) {
      entry["env_returns"] = result.env_returns;
      entry["mean_return"] = result.mean_return;
      entry["heldout_isolated"] = result.heldout_isolated;
    } else {
      entry["error"] = result.error;
    }
    eval["seeds"].push_back(std::move(entry));
    summary.seeds.push_back(std::move(result));
  }
  summary.across_seeds = ComputeMeanStd(seed_means);
  summary.across_all = ComputeMeanStd(all_returns);
  WriteText(dir / "eval.json", eval.dump(2) + "\n");
  WriteText(dir / "summary.json", RunSummaryToJson(summary).dump(2) + "\n");
  return summary;
}

Morphology CheckpointMorphology(const nlohmann::json& checkpoint) {
  if (!checkpoint.contains("morphology")) {
    throw Error(ErrorKind::kSchema, "checkpoint has no morphology");
  }
  return MorphologyFromJson(checkpoint.at("morphology"));
}

EnvParams CheckpointEnv(const nlohmann::json& checkpoint) {
  try {
    return EnvParamsFromJson(checkpoint.at("env_params"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kSchema, std::string("checkpoint env: ") + e.what());
  }
}

ControlPolicy CheckpointControlPolicy(const nlohmann::json& checkpoint) {
  try {
    NetSizes sizes = NetSizesFromJson(checkpoint.at("control_net"), NetSizes{});
    ControlPolicy policy(sizes, 0);
    ParamVectorFromJson(checkpoint.at("control_actor"), policy.actor());
    ParamVectorFromJson(checkpoint.at("control_critic"), policy.critic());
    return policy;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kSchema, std::string("checkpoint policy: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

std::vector<nlohmann::json> ReadMetricsLog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kInput, "cannot open " + path.string());
  std::vector<nlohmann::json> records;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    line_number++;
    if (line.empty()) continue;
    try {
      records.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorKind::kParse, path.string() + ":" +
                                         std::to_string(line_number) + ": " +
                                         e.what());
    }
  }
  return records;
}

namespace {

bool IsControlUpdate(const nlohmann::json& r) {
  return r.value("event", "") == "ppo_update" &&
         r.value("policy", "") == "control";
}

}  // namespace

std::vector<CurvePoint> LearningCurve(
    const std::vector<std::vector<nlohmann::json>>& logs) {
  std::map<int64_t, std::vector<double>> by_step;
  for (const auto& log : logs) {
    for (const auto& r : log) {
      if (!IsControlUpdate(r)) continue;
      const auto& mean = r.at("mean_return");
      if (mean.is_null()) continue;
      by_step[r.at("step").get<int64_t>()].push_back(mean.get<double>());
    }
  }
  std::vector<CurvePoint> curve;
  for (const auto& [step, values] : by_step) {
    MeanStd ms = ComputeMeanStd(values);
    curve.push_back({step, ms.mean, ms.std, static_cast<int>(values.size())});
  }
  return curve;
}

std::vector<StageRow> RoughnessStages(
    const std::vector<std::vector<nlohmann::json>>& logs, int64_t budget,
    int stages) {
  if (stages < 1) throw Error(ErrorKind::kValidation, "stages must be >= 1");
  std::vector<std::vector<double>> samples(stages);
  for (const auto& log : logs) {
    for (const auto& r : log) {
      if (!IsControlUpdate(r) || budget <= 0) continue;
      int64_t step = r.at("step").get<int64_t>();
      // an update finishing on step s covers steps up to s - 1
      int64_t s = std::clamp<int64_t>(step - 1, 0, budget - 1);
      int stage = static_cast<int>(s * stages / budget);
      samples[stage].push_back(r.at("roughness").get<double>());
    }
  }
  std::vector<StageRow> rows;
  for (int i = 0; i < stages; i++) {
    StageRow row;
    row.stage = i;
    row.step_begin = budget * i / stages;
    row.step_end = budget * (i + 1) / stages;
    row.samples = static_cast<int>(samples[i].size());
    MeanStd ms = ComputeMeanStd(samples[i]);
    row.mean = ms.mean;
    row.std = ms.std;
    rows.push_back(row);
  }
  return rows;
}

std::vector<std::filesystem::path> ExportMetrics(
    const std::filesystem::path& dir) {
  ExperimentConfig config = LoadExperimentConfig(dir / "config.json");
  std::vector<std::vector<nlohmann::json>> logs;
  for (uint64_t seed : config.seeds) {
    std::filesystem::path path = dir / SeedDirName(seed) / "metrics.jsonl";
    if (std::filesystem::exists(path)) logs.push_back(ReadMetricsLog(path));
  }

  std::ostringstream curve;
  curve << "step,mean_return,std_return,seeds\n";
  for (const auto& p : LearningCurve(logs)) {
    curve << p.step << ',' << FormatNumber(p.mean) << ','
          << FormatNumber(p.std) << ',' << p.seeds << '\n';
  }
  std::ostringstream stages;
  stages << "stage,step_begin,step_end,samples,roughness_mean,roughness_std\n";
  bool any = false;
  for (const auto& log : logs) {
    for (const auto& r : log) any |= IsControlUpdate(r);
  }
  if (any) {
    for (const auto& row : RoughnessStages(logs, config.coevo.budget)) {
      stages << row.stage << ',' << row.step_begin << ',' << row.step_end << ','
             << row.samples << ',';
      if (row.samples > 0) {
        stages << FormatNumber(row.mean) << ',' << FormatNumber(row.std);
      } else {
        stages << ',';
      }
      stages << '\n';
    }
  }
  std::vector<std::filesystem::path> written = {dir / "learning_curve.csv",
                                                dir / "roughness_stages.csv"};
  WriteText(written[0], curve.str());
  WriteText(written[1], stages.str());
  return written;
}

}  // namespace mece
