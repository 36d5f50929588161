#ifndef MECE_COEVO_H_
#define MECE_COEVO_H_

#include <cstdint>
#include <deque>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mece/morphology.h"
#include "mece/policies.h"
#include "mece/ppo.h"
#include "mece/rng.h"
#include "mece/sim2d.h"

namespace mece {

// ---------------------------------------------------------------------------
// Short evaluation window bookkeeping.

struct SewMorphology {
  int id = 0;
  Morphology morphology;
};

struct SewEnvironment {
  int id = 0;
  EnvParams params;
  uint64_t terrain_seed = 0;  // episode k of the window uses terrain_seed + k
};

// Most recent morphologies and environments, oldest first.
class SewHistory {
 public:
  SewHistory(int morph_capacity = 3, int env_capacity = 4);

  void PushMorphology(SewMorphology entry);
  void PushEnvironment(SewEnvironment entry);

  const std::deque<SewMorphology>& morphologies() const { return morphs_; }
  const std::deque<SewEnvironment>& environments() const { return envs_; }
  int morph_capacity() const { return morph_capacity_; }
  int env_capacity() const { return env_capacity_; }

 private:
  int morph_capacity_, env_capacity_;
  std::deque<SewMorphology> morphs_;
  std::deque<SewEnvironment> envs_;
};

// returns[i][j] = mean undiscounted return of morphology i in environment j.
struct ReturnsMatrix {
  std::vector<int> morph_ids;
  std::vector<int> env_ids;
  std::vector<std::vector<double>> values;

  int rows() const { return static_cast<int>(morph_ids.size()); }
  int cols() const { return static_cast<int>(env_ids.size()); }
  // Throws kState when either id is absent.
  double At(int morph_id, int env_id) const;
  bool Has(int morph_id, int env_id) const;
  double MeanAbs() const;
};

nlohmann::json ReturnsMatrixToJson(const ReturnsMatrix& m);
ReturnsMatrix ReturnsMatrixFromJson(const nlohmann::json& doc);

// r_m = mean_j [curr_j - prev_j] - lambda * cost. Throws kShape on a length
// mismatch or empty rows.
double ComputeMorphReward(std::span<const double> curr_row,
                          std::span<const double> prev_row, double action_cost,
                          double lambda);
// Same over the environment ids both matrices share, rows picked by id.
double ComputeMorphReward(const ReturnsMatrix& curr, int curr_morph_id,
                          const ReturnsMatrix& prev, int prev_morph_id,
                          double action_cost, double lambda);

struct EnvRewardResult {
  double r_e = 0.0;
  double progress = 0.0;  // P at this step
};
// P = R(theta_cur, G) - R(theta_prev, G); r_e = P - P_prev.
EnvRewardResult ComputeEnvReward(double return_current_env,
                                 double return_previous_env,
                                 double previous_progress);

// ---------------------------------------------------------------------------
// Strategy hooks used by the ablations.

enum class MorphStrategy { kPolicy, kRandom, kFixed };
enum class EnvStrategy { kPolicy, kRandom, kFixed };
enum class UpdateSchedule { kThreshold, kFixedWindow };
// kImprovement: mean return gain of the current over the previous morphology.
// kProgress: change of the morphology progress P^m between steps.
enum class MorphRewardKind { kImprovement, kProgress };
// kProgress: change of the environment progress P between steps.
// kCrossMorphology: mean over window morphologies of the return gain of the
// current over the previous environment, minus lambda times the action cost.
enum class EnvRewardKind { kProgress, kCrossMorphology };

struct Strategy {
  MorphStrategy morph = MorphStrategy::kPolicy;
  EnvStrategy env = EnvStrategy::kPolicy;
  UpdateSchedule schedule = UpdateSchedule::kThreshold;
  int window_period = 4;  // co-evo steps, kFixedWindow only
  bool train_morph_policy = true;
  MorphRewardKind morph_reward = MorphRewardKind::kImprovement;
  EnvRewardKind env_reward = EnvRewardKind::kProgress;
  // starting points that replace the defaults (the *_final ablations)
  std::optional<Morphology> start_morphology;
  std::optional<EnvParams> start_env;
};

struct CoEvoConfig {
  EnvKind env_kind = EnvKind::kRoughTerrain;
  int64_t budget = 500000;  // control-phase simulation steps
  int tau_max = 16384;
  int num_workers = 8;  // lockstep worlds during collection
  int terrain_pool = 16;

  PpoConfig control_ppo;
  PpoConfig morph_ppo;
  PpoConfig env_ppo;
  NetSizes control_net;
  NetSizes morph_net;
  NetSizes env_net;

  int sew_morphologies = 3;
  int sew_environments = 4;
  int n_eval = 4;
  int eval_horizon = 256;

  double lambda = 0.01;
  bool absolute_thresholds = false;
  double delta_m = 0.05;  // fraction of the running mean |return| unless absolute
  double delta_e = 0.05;
  double threshold_ema = 0.1;
  int meta_episode = 16;
  double morph_delta_scale = 0.1;
  double env_delta_scale = 0.1;

  int initial_lv1 = 2;
  int max_nodes = 16;
  std::optional<EnvParams> initial_env;

  Strategy strategy;
  SimConfig sim;
  TerrainConfig terrain;
  uint64_t seed = 0;

  CoEvoConfig();
  // Throws ErrorKind::kValidation.
  void Validate() const;
  EnvParams StartEnv() const;
};

nlohmann::json CoEvoConfigToJson(const CoEvoConfig& config);
// Missing fields keep the defaults of `defaults`.
CoEvoConfig CoEvoConfigFromJson(const nlohmann::json& doc,
                                const CoEvoConfig& defaults = {});

// ---------------------------------------------------------------------------
// Evaluation helpers.

// Deterministic (mean-action) episodes of `morphology`, one per
// (params[k], terrains[k]) pair, run in lockstep for at most `horizon` steps.
// Returns the undiscounted return of each episode.
std::vector<double> EvaluateEpisodes(const ControlPolicy& policy,
                                     const Morphology& morphology,
                                     std::span<const EnvParams> params,
                                     std::span<const Heightfield> terrains,
                                     int horizon, const SimConfig& sim);

// Morphology accepted by the simulator (placement succeeds).
bool Placeable(const Morphology& morphology, const SimConfig& sim);

// Transitions of the most recent control phase.
struct ControlDataset {
  ControlBatch samples;
  std::vector<double> rewards;
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<uint8_t> dones;
  std::vector<int> workers;

  explicit ControlDataset(const Morphology& morphology) : samples(morphology) {}
  int size() const { return samples.size(); }
};

struct CoEvoStepResult {
  bool baseline = false;  // first step: only records the returns matrix
  std::string decision = "none";  // "morph", "env" or "none"
  double r_m = 0.0;
  double r_e = 0.0;
  ReturnsMatrix returns;
};

// ---------------------------------------------------------------------------

class Engine {
 public:
  // Metrics are written as JSON lines to `metrics` when non-null.
  explicit Engine(CoEvoConfig config, std::ostream* metrics = nullptr);

  // Collects `steps` control steps with fixed morphology and environment and
  // runs a PPO update every control_ppo.batch_size steps.
  void TrainControlPhase(int64_t steps);
  ReturnsMatrix ShortEvalWindow() const;
  CoEvoStepResult CoEvoStep();
  // Alternates control phases and co-evo steps until the budget is spent.
  void Train();

  const CoEvoConfig& config() const { return config_; }
  const Morphology& morphology() const { return morph_; }
  const EnvParams& env_params() const { return env_; }
  int morph_id() const { return morph_id_; }
  int env_id() const { return env_id_; }
  int64_t steps() const { return steps_; }
  int coevo_steps() const { return coevo_steps_; }
  int morph_decisions() const { return morph_decisions_; }
  int env_decisions() const { return env_decisions_; }
  const SewHistory& sew() const { return sew_; }
  const ControlPolicy& control_policy() const { return control_; }
  ControlPolicy& mutable_control_policy() { return control_; }
  const MorphologyPolicy& morph_policy() const { return morph_policy_; }
  const EnvironmentPolicy& env_policy() const { return env_policy_; }
  const ControlDataset& dataset() const { return dataset_; }
  // every theta^E the control policy trained on
  const std::vector<EnvParams>& training_envs() const { return training_envs_; }
  double roughness() const { return roughness_; }

  nlohmann::json Checkpoint() const;

 private:
  void Emit(nlohmann::json record);
  nlohmann::json Context() const;
  void SetEnvironment(const EnvParams& params);
  void SetMorphology(const Morphology& morphology);
  void ChangeMorphology(CoEvoStepResult& result);
  void ChangeEnvironment(CoEvoStepResult& result);
  void FinishMorphTransition(double reward);
  void FinishEnvTransition(double reward);
  void UpdateMorphPolicy();
  void UpdateEnvPolicy();
  double EnvActionCost(const EnvParams& before, const EnvParams& after) const;

  CoEvoConfig config_;
  std::ostream* metrics_;

  Rng rollout_rng_, terrain_rng_, morph_rng_, env_rng_, control_ppo_rng_,
      meta_ppo_rng_, strategy_rng_;

  ControlPolicy control_;
  MorphologyPolicy morph_policy_;
  EnvironmentPolicy env_policy_;
  PpoOptimizers control_optim_, morph_optim_, env_optim_;

  Morphology morph_;
  EnvParams env_;
  int morph_id_ = 0, env_id_ = 0, next_morph_id_ = 0, next_env_id_ = 0;
  std::vector<Heightfield> terrains_;
  int next_terrain_ = 0;
  double roughness_ = 0.0;
  std::vector<EnvParams> training_envs_;

  SewHistory sew_;
  std::optional<ReturnsMatrix> prev_returns_;
  int prev_morph_id_ = 0;
  double progress_prev_ = 0.0;        // P for r_e
  double morph_progress_prev_ = 0.0;  // P^m for the progress-form r_m
  double abs_return_ema_ = 0.0;
  bool ema_initialized_ = false;

  // decision awaiting its reward at the next co-evo step
  std::optional<MorphSample> pending_morph_;
  double pending_morph_cost_ = 0.0;
  std::optional<EnvSample> pending_env_;
  double pending_env_cost_ = 0.0;
  bool last_changed_morph_ = false;
  bool last_changed_env_ = false;

  MorphBatch morph_buffer_;
  std::vector<double> morph_rewards_;
  std::vector<uint8_t> morph_dones_;
  EnvBatch env_buffer_;
  std::vector<double> env_rewards_;
  std::vector<uint8_t> env_dones_;

  int64_t steps_ = 0;
  int coevo_steps_ = 0;
  int morph_decisions_ = 0;
  int env_decisions_ = 0;
  int morph_transitions_ = 0;
  int env_transitions_ = 0;
  ControlDataset dataset_;
};

}  // namespace mece

#endif  // MECE_COEVO_H_
