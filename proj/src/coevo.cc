#include "mece/coevo.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "mece/error.h"

namespace mece {
namespace {

// stream tags for Rng::Derive
enum StreamTag : uint64_t {
  kRolloutStream = 1,
  kTerrainStream,
  kMorphStream,
  kEnvStream,
  kControlPpoStream,
  kMetaPpoStream,
  kStrategyStream,
  kControlInit,
  kMorphInit,
  kEnvInit,
};

Morphology StartMorphology(const CoEvoConfig& config) {
  if (config.strategy.start_morphology) {
    return *config.strategy.start_morphology;
  }
  return InitialMorphology(config.initial_lv1, config.max_nodes);
}

}  // namespace

// ---------------------------------------------------------------------------

SewHistory::SewHistory(int morph_capacity, int env_capacity)
    : morph_capacity_(morph_capacity), env_capacity_(env_capacity) {
  if (morph_capacity < 1 || env_capacity < 1) {
    throw Error(ErrorKind::kValidation, "sew capacities must be >= 1");
  }
}

void SewHistory::PushMorphology(SewMorphology entry) {
  morphs_.push_back(std::move(entry));
  while (static_cast<int>(morphs_.size()) > morph_capacity_) morphs_.pop_front();
}

void SewHistory::PushEnvironment(SewEnvironment entry) {
  envs_.push_back(std::move(entry));
  while (static_cast<int>(envs_.size()) > env_capacity_) envs_.pop_front();
}

bool ReturnsMatrix::Has(int morph_id, int env_id) const {
  return std::find(morph_ids.begin(), morph_ids.end(), morph_id) !=
             morph_ids.end() &&
         std::find(env_ids.begin(), env_ids.end(), env_id) != env_ids.end();
}

double ReturnsMatrix::At(int morph_id, int env_id) const {
  auto row = std::find(morph_ids.begin(), morph_ids.end(), morph_id);
  auto col = std::find(env_ids.begin(), env_ids.end(), env_id);
  if (row == morph_ids.end() || col == env_ids.end()) {
    throw Error(ErrorKind::kState,
                "returns matrix has no entry for morphology " +
                    std::to_string(morph_id) + ", environment " +
                    std::to_string(env_id));
  }
  return values[row - morph_ids.begin()][col - env_ids.begin()];
}

double ReturnsMatrix::MeanAbs() const {
  double sum = 0.0;
  int count = 0;
  for (const auto& row : values) {
    for (double v : row) {
      sum += std::abs(v);
      count++;
    }
  }
  return count ? sum / count : 0.0;
}

nlohmann::json ReturnsMatrixToJson(const ReturnsMatrix& m) {
  return {{"morph_ids", m.morph_ids},
          {"env_ids", m.env_ids},
          {"values", m.values}};
}

ReturnsMatrix ReturnsMatrixFromJson(const nlohmann::json& doc) {
  ReturnsMatrix m;
  try {
    m.morph_ids = doc.at("morph_ids").get<std::vector<int>>();
    m.env_ids = doc.at("env_ids").get<std::vector<int>>();
    m.values = doc.at("values").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kSchema, std::string("returns matrix: ") + e.what());
  }
  if (static_cast<int>(m.values.size()) != m.rows()) {
    throw Error(ErrorKind::kSchema, "returns matrix: row count mismatch");
  }
  for (const auto& row : m.values) {
    if (static_cast<int>(row.size()) != m.cols()) {
      throw Error(ErrorKind::kSchema, "returns matrix: column count mismatch");
    }
  }
  return m;
}

double ComputeMorphReward(std::span<const double> curr_row,
                          std::span<const double> prev_row, double action_cost,
                          double lambda) {
  if (curr_row.size() != prev_row.size() || curr_row.empty()) {
    throw Error(ErrorKind::kShape,
                "morph reward: rows must share a non-empty environment axis");
  }
  double sum = 0.0;
  for (size_t j = 0; j < curr_row.size(); j++) sum += curr_row[j] - prev_row[j];
  return sum / static_cast<double>(curr_row.size()) - lambda * action_cost;
}

double ComputeMorphReward(const ReturnsMatrix& curr, int curr_morph_id,
                          const ReturnsMatrix& prev, int prev_morph_id,
                          double action_cost, double lambda) {
  std::vector<double> a, b;
  for (int env_id : curr.env_ids) {
    if (std::find(prev.env_ids.begin(), prev.env_ids.end(), env_id) ==
        prev.env_ids.end()) {
      continue;
    }
    a.push_back(curr.At(curr_morph_id, env_id));
    b.push_back(prev.At(prev_morph_id, env_id));
  }
  return ComputeMorphReward(a, b, action_cost, lambda);
}

EnvRewardResult ComputeEnvReward(double return_current_env,
                                 double return_previous_env,
                                 double previous_progress) {
  EnvRewardResult out;
  out.progress = return_current_env - return_previous_env;
  out.r_e = out.progress - previous_progress;
  return out;
}

// ---------------------------------------------------------------------------

CoEvoConfig::CoEvoConfig() {
  control_ppo.policy_lr = 5e-5;
  control_ppo.value_lr = 3e-4;
  morph_ppo.policy_lr = 5e-5;
  morph_ppo.value_lr = 3e-4;
  morph_ppo.batch_size = 16;
  morph_ppo.minibatch_size = 16;
  env_ppo.policy_lr = 3e-4;
  env_ppo.value_lr = 3e-4;
  env_ppo.batch_size = 16;
  env_ppo.minibatch_size = 16;
  morph_net.policy_gnn = {256, 256, 256};
  env_net.policy_mlp = {200, 200};
}

void CoEvoConfig::Validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorKind::kValidation, "coevo config: " + what);
  };
  if (budget < 0) fail("budget must be >= 0");
  if (tau_max < 1) fail("tau_max must be >= 1");
  if (num_workers < 1) fail("num_workers must be >= 1");
  if (terrain_pool < 1) fail("terrain_pool must be >= 1");
  if (sew_morphologies < 1 || sew_environments < 1) {
    fail("sew sizes must be >= 1");
  }
  if (n_eval < 1 || eval_horizon < 1) fail("n_eval and eval_horizon must be >= 1");
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (!(threshold_ema > 0.0 && threshold_ema <= 1.0)) {
    fail("threshold_ema must be in (0, 1]");
  }
  if (meta_episode < 1) fail("meta_episode must be >= 1");
  if (initial_lv1 < 0 || initial_lv1 > kMaxChildren) {
    fail("initial_lv1 must be in [0, 3]");
  }
  if (max_nodes < 1 + initial_lv1) fail("max_nodes too small");
  if (strategy.window_period < 1) fail("window_period must be >= 1");
  control_ppo.Validate();
  morph_ppo.Validate();
  env_ppo.Validate();
  EnvParams start = StartEnv();
  if (start.kind != env_kind) fail("starting environment kind mismatch");
  ValidateEnvParams(start, terrain);
  if (strategy.start_morphology) {
    auto violations = mece::Validate(*strategy.start_morphology);
    if (!violations.empty()) fail("start morphology: " + violations.front());
  }
}

EnvParams CoEvoConfig::StartEnv() const {
  if (strategy.start_env) return *strategy.start_env;
  if (initial_env) return *initial_env;
  EnvParams params;
  params.kind = env_kind;
  // easy corner: low peaks, wide bumps, narrowest gap
  params.max_height = 0.1 * terrain.max_height_limit;
  params.height_variance = terrain.variance_hi;
  params.gap_width = terrain.gap_min;
  return params;
}

nlohmann::json CoEvoConfigToJson(const CoEvoConfig& c) {
  return {{"env_kind", EnvKindName(c.env_kind)},
          {"budget", c.budget},
          {"tau_max", c.tau_max},
          {"num_workers", c.num_workers},
          {"terrain_pool", c.terrain_pool},
          {"control_ppo", PpoConfigToJson(c.control_ppo)},
          {"morph_ppo", PpoConfigToJson(c.morph_ppo)},
          {"env_ppo", PpoConfigToJson(c.env_ppo)},
          {"control_net", NetSizesToJson(c.control_net)},
          {"morph_net", NetSizesToJson(c.morph_net)},
          {"env_net", NetSizesToJson(c.env_net)},
          {"sew_morphologies", c.sew_morphologies},
          {"sew_environments", c.sew_environments},
          {"n_eval", c.n_eval},
          {"eval_horizon", c.eval_horizon},
          {"lambda", c.lambda},
          {"absolute_thresholds", c.absolute_thresholds},
          {"delta_m", c.delta_m},
          {"delta_e", c.delta_e},
          {"threshold_ema", c.threshold_ema},
          {"meta_episode", c.meta_episode},
          {"morph_delta_scale", c.morph_delta_scale},
          {"env_delta_scale", c.env_delta_scale},
          {"initial_lv1", c.initial_lv1},
          {"max_nodes", c.max_nodes},
          {"initial_env", c.initial_env ? EnvParamsToJson(*c.initial_env)
                                        : nlohmann::json(nullptr)},
          {"window_period", c.strategy.window_period},
          {"sim", SimConfigToJson(c.sim)},
          {"terrain", TerrainConfigToJson(c.terrain)},
          {"seed", c.seed}};
}

CoEvoConfig CoEvoConfigFromJson(const nlohmann::json& doc,
                                const CoEvoConfig& defaults) {
  CoEvoConfig c = defaults;
  try {
    if (doc.contains("env_kind")) {
      c.env_kind = EnvKindFromName(doc.at("env_kind").get<std::string>());
    }
    c.budget = doc.value("budget", c.budget);
    c.tau_max = doc.value("tau_max", c.tau_max);
    c.num_workers = doc.value("num_workers", c.num_workers);
    c.terrain_pool = doc.value("terrain_pool", c.terrain_pool);
    if (doc.contains("control_ppo")) {
      c.control_ppo = PpoConfigFromJson(doc.at("control_ppo"), c.control_ppo);
    }
    if (doc.contains("morph_ppo")) {
      c.morph_ppo = PpoConfigFromJson(doc.at("morph_ppo"), c.morph_ppo);
    }
    if (doc.contains("env_ppo")) {
      c.env_ppo = PpoConfigFromJson(doc.at("env_ppo"), c.env_ppo);
    }
    if (doc.contains("control_net")) {
      c.control_net = NetSizesFromJson(doc.at("control_net"), c.control_net);
    }
    if (doc.contains("morph_net")) {
      c.morph_net = NetSizesFromJson(doc.at("morph_net"), c.morph_net);
    }
    if (doc.contains("env_net")) {
      c.env_net = NetSizesFromJson(doc.at("env_net"), c.env_net);
    }
    c.sew_morphologies = doc.value("sew_morphologies", c.sew_morphologies);
    c.sew_environments = doc.value("sew_environments", c.sew_environments);
    c.n_eval = doc.value("n_eval", c.n_eval);
    c.eval_horizon = doc.value("eval_horizon", c.eval_horizon);
    c.lambda = doc.value("lambda", c.lambda);
    c.absolute_thresholds =
        doc.value("absolute_thresholds", c.absolute_thresholds);
    c.delta_m = doc.value("delta_m", c.delta_m);
    c.delta_e = doc.value("delta_e", c.delta_e);
    c.threshold_ema = doc.value("threshold_ema", c.threshold_ema);
    c.meta_episode = doc.value("meta_episode", c.meta_episode);
    c.morph_delta_scale = doc.value("morph_delta_scale", c.morph_delta_scale);
    c.env_delta_scale = doc.value("env_delta_scale", c.env_delta_scale);
    c.initial_lv1 = doc.value("initial_lv1", c.initial_lv1);
    c.max_nodes = doc.value("max_nodes", c.max_nodes);
    if (doc.contains("initial_env") && !doc.at("initial_env").is_null()) {
      c.initial_env = EnvParamsFromJson(doc.at("initial_env"));
    }
    c.strategy.window_period =
        doc.value("window_period", c.strategy.window_period);
    if (doc.contains("sim")) c.sim = SimConfigFromJson(doc.at("sim"), c.sim);
    if (doc.contains("terrain")) {
      c.terrain = TerrainConfigFromJson(doc.at("terrain"), c.terrain);
    }
    c.seed = doc.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kSchema, std::string("coevo config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------

std::vector<double> EvaluateEpisodes(const ControlPolicy& policy,
                                     const Morphology& morphology,
                                     std::span<const EnvParams> params,
                                     std::span<const Heightfield> terrains,
                                     int horizon, const SimConfig& sim) {
  if (params.size() != terrains.size()) {
    throw Error(ErrorKind::kShape, "evaluate: params and terrains differ in size");
  }
  const int count = static_cast<int>(terrains.size());
  const int n = morphology.size();
  std::vector<std::unique_ptr<World>> worlds;
  std::vector<Eigen::MatrixXd> obs(count);
  std::vector<double> returns(count, 0.0);
  std::vector<int> active;
  for (int k = 0; k < count; k++) {
    worlds.push_back(
        std::make_unique<World>(morphology, terrains[k], params[k], sim));
    worlds[k]->Reset();
    obs[k] = worlds[k]->Observe();
    active.push_back(k);
  }
  GraphTopology graph = TopologyOf(morphology);
  RowMatrix features, actions;
  for (int t = 0; t < horizon && !active.empty(); t++) {
    features.resize(static_cast<Eigen::Index>(active.size()) * n,
                    kControlFeatures);
    for (size_t a = 0; a < active.size(); a++) {
      features.middleRows(static_cast<Eigen::Index>(a) * n, n) =
          ControlFeatures(obs[active[a]], morphology);
    }
    policy.ActBatch(graph, features, nullptr, &actions, nullptr, nullptr);
    std::vector<int> still;
    for (size_t a = 0; a < active.size(); a++) {
      int k = active[a];
      std::span<const double> torques(actions.data() + a * n, n);
      StepResult step = worlds[k]->Step(torques);
      returns[k] += step.reward;
      if (!step.done) {
        obs[k] = std::move(step.observation);
        still.push_back(k);
      }
    }
    active = std::move(still);
  }
  return returns;
}

bool Placeable(const Morphology& morphology, const SimConfig& sim) {
  EnvParams params;
  params.max_height = 0.0;
  World world(morphology, Heightfield{}, params, sim);
  try {
    world.Reset();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kPlacement) return false;
    throw;
  }
  return true;
}

// ---------------------------------------------------------------------------

Engine::Engine(CoEvoConfig config, std::ostream* metrics)
    : config_((config.Validate(), std::move(config))),
      metrics_(metrics),
      rollout_rng_(Rng(config_.seed).Derive(kRolloutStream)),
      terrain_rng_(Rng(config_.seed).Derive(kTerrainStream)),
      morph_rng_(Rng(config_.seed).Derive(kMorphStream)),
      env_rng_(Rng(config_.seed).Derive(kEnvStream)),
      control_ppo_rng_(Rng(config_.seed).Derive(kControlPpoStream)),
      meta_ppo_rng_(Rng(config_.seed).Derive(kMetaPpoStream)),
      strategy_rng_(Rng(config_.seed).Derive(kStrategyStream)),
      control_(config_.control_net, MixSeed(config_.seed ^ MixSeed(kControlInit))),
      morph_policy_(config_.morph_net,
                    MixSeed(config_.seed ^ MixSeed(kMorphInit)),
                    config_.morph_delta_scale),
      env_policy_(config_.env_kind, config_.terrain, config_.env_net,
                  MixSeed(config_.seed ^ MixSeed(kEnvInit)),
                  config_.env_delta_scale),
      morph_(StartMorphology(config_)),
      sew_(config_.sew_morphologies, config_.sew_environments),
      dataset_(morph_) {
  auto make_optim = [](const PpoConfig& ppo, int actor_size, int critic_size) {
    return PpoOptimizers{
        Adam(actor_size, ppo.policy_lr, ppo.adam_beta1, ppo.adam_beta2,
             ppo.adam_eps),
        Adam(critic_size, ppo.value_lr, ppo.adam_beta1, ppo.adam_beta2,
             ppo.adam_eps)};
  };
  control_optim_ = make_optim(config_.control_ppo, control_.actor().size(),
                              control_.critic().size());
  morph_optim_ = make_optim(config_.morph_ppo, morph_policy_.actor().size(),
                            morph_policy_.critic().size());
  env_optim_ = make_optim(config_.env_ppo, env_policy_.actor().size(),
                          env_policy_.critic().size());
  if (!Placeable(morph_, config_.sim)) {
    throw Error(ErrorKind::kPlacement, "starting morphology cannot be placed");
  }
  SetMorphology(morph_);
  SetEnvironment(config_.StartEnv());
}

void Engine::Emit(nlohmann::json record) {
  if (!metrics_) return;
  (*metrics_) << record.dump() << '\n';
}

nlohmann::json Engine::Context() const {
  return {{"step", steps_},
          {"coevo_step", coevo_steps_},
          {"theta_E", EnvParamsToJson(env_)},
          {"env_id", env_id_},
          {"morph_id", morph_id_},
          {"morph_node_count", morph_.size()},
          {"roughness", roughness_}};
}

void Engine::SetMorphology(const Morphology& morphology) {
  morph_ = morphology;
  morph_id_ = next_morph_id_++;
  sew_.PushMorphology({morph_id_, morph_});
}

void Engine::SetEnvironment(const EnvParams& params) {
  ValidateEnvParams(params, config_.terrain);
  env_ = params;
  env_id_ = next_env_id_++;
  terrains_.clear();
  double rough = 0.0;
  for (int k = 0; k < config_.terrain_pool; k++) {
    terrains_.push_back(
        GenerateTerrain(env_, terrain_rng_.NextU64(), config_.terrain));
    rough += Roughness(terrains_.back());
  }
  roughness_ = rough / config_.terrain_pool;
  next_terrain_ = 0;
  training_envs_.push_back(env_);
  sew_.PushEnvironment({env_id_, env_, terrain_rng_.NextU64()});
}

void Engine::TrainControlPhase(int64_t steps) {
  if (steps <= 0) return;
  dataset_ = ControlDataset(morph_);
  const int n = morph_.size();
  const int num_workers = config_.num_workers;
  const int batch_size = config_.control_ppo.batch_size;
  const GraphTopology graph = TopologyOf(morph_);

  struct Worker {
    std::unique_ptr<World> world;
    Eigen::MatrixXd obs;
    double ret = 0.0;
  };
  std::vector<Worker> workers(num_workers);
  auto reset = [&](Worker& w) {
    const Heightfield& terrain = terrains_[next_terrain_];
    next_terrain_ = (next_terrain_ + 1) % static_cast<int>(terrains_.size());
    w.world = std::make_unique<World>(morph_, terrain, env_, config_.sim);
    w.world->Reset();
    w.obs = w.world->Observe();
    w.ret = 0.0;
  };
  for (auto& w : workers) reset(w);

  ControlBatch chunk(morph_);
  chunk.Reserve(batch_size);
  std::vector<double> rewards, log_probs, values;
  std::vector<uint8_t> dones;
  std::vector<int> owner;
  std::vector<double> finished;

  auto update = [&]() {
    // bootstrap values of every worker's current observation
    RowMatrix current(static_cast<Eigen::Index>(num_workers) * n,
                      kControlFeatures);
    for (int w = 0; w < num_workers; w++) {
      current.middleRows(static_cast<Eigen::Index>(w) * n, n) =
          ControlFeatures(workers[w].obs, morph_);
    }
    std::vector<double> bootstrap = control_.ValueBatch(graph, current);
    PpoTargets targets;
    targets.old_log_probs = log_probs;
    targets.advantages.assign(chunk.size(), 0.0);
    targets.returns.assign(chunk.size(), 0.0);
    for (int w = 0; w < num_workers; w++) {
      std::vector<int> idx;
      for (int i = 0; i < chunk.size(); i++) {
        if (owner[i] == w) idx.push_back(i);
      }
      if (idx.empty()) continue;
      std::vector<double> r, v;
      std::vector<uint8_t> d;
      for (int i : idx) {
        r.push_back(rewards[i]);
        v.push_back(values[i]);
        d.push_back(dones[i]);
      }
      GaeResult gae = ComputeGae(r, v, bootstrap[w], d,
                                 config_.control_ppo.gamma,
                                 config_.control_ppo.lambda);
      for (size_t k = 0; k < idx.size(); k++) {
        targets.advantages[idx[k]] = gae.advantages[k];
        targets.returns[idx[k]] = gae.returns[k];
      }
    }
    nlohmann::json record = Context();
    record["event"] = "ppo_update";
    record["policy"] = "control";
    record["episodes"] = finished.size();
    if (finished.empty()) {
      record["mean_return"] = nullptr;
    } else {
      double mean = 0.0;
      for (double f : finished) mean += f;
      record["mean_return"] = mean / finished.size();
    }
    try {
      PpoStats stats = PpoUpdate(control_, chunk, std::move(targets),
                                 config_.control_ppo, control_optim_,
                                 control_ppo_rng_);
      record["stats"] = PpoStatsToJson(stats);
      record["aborted"] = false;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumeric) throw;
      record["aborted"] = true;
      record["error"] = e.what();
    }
    Emit(std::move(record));

    for (int i = 0; i < chunk.size(); i++) {
      dataset_.samples.Append(
          chunk.features.middleRows(static_cast<Eigen::Index>(i) * n, n),
          std::span<const double>(chunk.actions.data() + i * n, n));
    }
    dataset_.rewards.insert(dataset_.rewards.end(), rewards.begin(),
                            rewards.end());
    dataset_.log_probs.insert(dataset_.log_probs.end(), log_probs.begin(),
                              log_probs.end());
    dataset_.values.insert(dataset_.values.end(), values.begin(), values.end());
    dataset_.dones.insert(dataset_.dones.end(), dones.begin(), dones.end());
    dataset_.workers.insert(dataset_.workers.end(), owner.begin(), owner.end());
    chunk.Clear();
    rewards.clear();
    log_probs.clear();
    values.clear();
    dones.clear();
    owner.clear();
    finished.clear();
  };

  RowMatrix features, actions;
  std::vector<double> step_logp, step_values;
  int64_t remaining = steps;
  while (remaining > 0) {
    const int active = static_cast<int>(std::min<int64_t>(
        {num_workers, remaining, batch_size - chunk.size()}));
    features.resize(static_cast<Eigen::Index>(active) * n, kControlFeatures);
    for (int w = 0; w < active; w++) {
      features.middleRows(static_cast<Eigen::Index>(w) * n, n) =
          ControlFeatures(workers[w].obs, morph_);
    }
    control_.ActBatch(graph, features, &rollout_rng_, &actions, &step_logp,
                      &step_values);
    for (int w = 0; w < active; w++) {
      std::span<const double> torques(actions.data() + w * n, n);
      StepResult step = workers[w].world->Step(torques);
      chunk.Append(features.middleRows(static_cast<Eigen::Index>(w) * n, n),
                   torques);
      rewards.push_back(step.reward);
      log_probs.push_back(step_logp[w]);
      values.push_back(step_values[w]);
      dones.push_back(step.done ? 1 : 0);
      owner.push_back(w);
      workers[w].ret += step.reward;
      if (step.done) {
        finished.push_back(workers[w].ret);
        reset(workers[w]);
      } else {
        workers[w].obs = std::move(step.observation);
      }
    }
    steps_ += active;
    remaining -= active;
    if (chunk.size() >= batch_size || remaining == 0) update();
  }
}

ReturnsMatrix Engine::ShortEvalWindow() const {
  ReturnsMatrix out;
  const auto& morphs = sew_.morphologies();
  const auto& envs = sew_.environments();
  if (morphs.empty() || envs.empty()) {
    throw Error(ErrorKind::kState, "short evaluation window on an empty history");
  }
  std::vector<EnvParams> params;
  std::vector<Heightfield> terrains;
  for (const auto& env : envs) {
    out.env_ids.push_back(env.id);
    for (int k = 0; k < config_.n_eval; k++) {
      params.push_back(env.params);
      terrains.push_back(
          GenerateTerrain(env.params, env.terrain_seed + k, config_.terrain));
    }
  }
  for (const auto& entry : morphs) {
    out.morph_ids.push_back(entry.id);
    std::vector<double> returns =
        EvaluateEpisodes(control_, entry.morphology, params, terrains,
                         config_.eval_horizon, config_.sim);
    std::vector<double> row;
    for (size_t j = 0; j < envs.size(); j++) {
      double sum = 0.0;
      for (int k = 0; k < config_.n_eval; k++) {
        sum += returns[j * config_.n_eval + k];
      }
      row.push_back(sum / config_.n_eval);
    }
    out.values.push_back(std::move(row));
  }
  return out;
}

double Engine::EnvActionCost(const EnvParams& before,
                             const EnvParams& after) const {
  double cost = 0.0;
  for (int i = 0; i < TerrainConfig::NumControlled(config_.env_kind); i++) {
    auto [lo, hi] = config_.terrain.Bounds(config_.env_kind, i);
    double d = (config_.terrain.Get(after, i) - config_.terrain.Get(before, i)) /
               (hi - lo);
    cost += d * d;
  }
  return cost;
}

CoEvoStepResult Engine::CoEvoStep() {
  coevo_steps_++;
  CoEvoStepResult result;
  ReturnsMatrix curr = ShortEvalWindow();

  const double mean_abs = curr.MeanAbs();
  if (!ema_initialized_) {
    abs_return_ema_ = mean_abs;
    ema_initialized_ = true;
  } else {
    abs_return_ema_ += config_.threshold_ema * (mean_abs - abs_return_ema_);
  }
  const double delta_m = config_.absolute_thresholds
                             ? config_.delta_m
                             : config_.delta_m * abs_return_ema_;
  const double delta_e = config_.absolute_thresholds
                             ? config_.delta_e
                             : config_.delta_e * abs_return_ema_;

  const auto& morphs = sew_.morphologies();
  const auto& envs = sew_.environments();
  std::optional<int> prev_env_id, prev_hist_morph_id;
  if (envs.size() >= 2) prev_env_id = envs[envs.size() - 2].id;
  if (morphs.size() >= 2) prev_hist_morph_id = morphs[morphs.size() - 2].id;

  // P for the current morphology across the two latest environments
  EnvRewardResult env_reward = ComputeEnvReward(
      curr.At(morph_id_, env_id_),
      prev_env_id ? curr.At(morph_id_, *prev_env_id)
                  : curr.At(morph_id_, env_id_),
      progress_prev_);
  // P^m across the two latest morphologies over all window environments
  double morph_progress = 0.0;
  if (prev_hist_morph_id) {
    std::vector<double> a, b;
    for (int env_id : curr.env_ids) {
      a.push_back(curr.At(morph_id_, env_id));
      b.push_back(curr.At(*prev_hist_morph_id, env_id));
    }
    morph_progress = ComputeMorphReward(a, b, 0.0, 0.0);
  }
  // environment gain averaged over the window morphologies
  double cross_progress = 0.0;
  if (prev_env_id) {
    for (int morph_id : curr.morph_ids) {
      cross_progress +=
          curr.At(morph_id, env_id_) - curr.At(morph_id, *prev_env_id);
    }
    cross_progress /= curr.rows();
  }

  const double morph_cost = last_changed_morph_ ? pending_morph_cost_ : 0.0;
  const double env_cost = last_changed_env_ ? pending_env_cost_ : 0.0;
  result.baseline = !prev_returns_.has_value();
  if (!result.baseline) {
    switch (config_.strategy.morph_reward) {
      case MorphRewardKind::kImprovement: {
        bool shared = false;
        for (int env_id : curr.env_ids) {
          shared |= std::find(prev_returns_->env_ids.begin(),
                              prev_returns_->env_ids.end(),
                              env_id) != prev_returns_->env_ids.end();
        }
        result.r_m = shared ? ComputeMorphReward(curr, morph_id_, *prev_returns_,
                                                 prev_morph_id_, morph_cost,
                                                 config_.lambda)
                            : -config_.lambda * morph_cost;
        break;
      }
      case MorphRewardKind::kProgress:
        result.r_m = morph_progress - morph_progress_prev_;
        break;
    }
    switch (config_.strategy.env_reward) {
      case EnvRewardKind::kProgress:
        result.r_e = env_reward.r_e;
        break;
      case EnvRewardKind::kCrossMorphology:
        result.r_e = cross_progress - config_.lambda * env_cost;
        break;
    }
    if (pending_morph_) FinishMorphTransition(result.r_m);
    if (pending_env_) FinishEnvTransition(result.r_e);
  }
  pending_morph_.reset();
  pending_env_.reset();

  const Strategy& strategy = config_.strategy;
  const bool morph_enabled = strategy.morph != MorphStrategy::kFixed;
  const bool env_enabled = strategy.env != EnvStrategy::kFixed;
  if (!result.baseline) {
    if (strategy.schedule == UpdateSchedule::kThreshold) {
      if (morph_enabled && result.r_m <= delta_m) {
        result.decision = "morph";
      } else if (env_enabled && result.r_e <= delta_e) {
        result.decision = "env";
      }
    } else if (coevo_steps_ % strategy.window_period == 0) {
      // alternate, starting with the morphology
      bool want_morph = (coevo_steps_ / strategy.window_period) % 2 == 1;
      if (want_morph && !morph_enabled) want_morph = false;
      if (!want_morph && !env_enabled) want_morph = morph_enabled;
      if (want_morph && morph_enabled) {
        result.decision = "morph";
      } else if (!want_morph && env_enabled) {
        result.decision = "env";
      }
    }
  }

  nlohmann::json record = Context();
  record["event"] = "sew_eval";
  record["baseline"] = result.baseline;
  record["returns_matrix"] = ReturnsMatrixToJson(curr);
  record["prev_returns_matrix"] = prev_returns_
                                      ? ReturnsMatrixToJson(*prev_returns_)
                                      : nlohmann::json(nullptr);
  record["prev_morph_id"] = prev_returns_ ? nlohmann::json(prev_morph_id_)
                                          : nlohmann::json(nullptr);
  record["prev_env_id"] = prev_env_id ? nlohmann::json(*prev_env_id)
                                      : nlohmann::json(nullptr);
  record["prev_hist_morph_id"] = prev_hist_morph_id
                                     ? nlohmann::json(*prev_hist_morph_id)
                                     : nlohmann::json(nullptr);
  record["morph_action_cost"] = morph_cost;
  record["env_action_cost"] = env_cost;
  record["lambda"] = config_.lambda;
  record["p"] = env_reward.progress;
  record["p_prev"] = progress_prev_;
  record["p_m"] = morph_progress;
  record["p_m_prev"] = morph_progress_prev_;
  record["cross_progress"] = cross_progress;
  record["r_m"] = result.baseline ? nlohmann::json(nullptr)
                                  : nlohmann::json(result.r_m);
  record["r_e"] = result.baseline ? nlohmann::json(nullptr)
                                  : nlohmann::json(result.r_e);
  record["delta_m"] = delta_m;
  record["delta_e"] = delta_e;
  record["decision"] = result.decision;
  Emit(std::move(record));

  progress_prev_ = env_reward.progress;
  morph_progress_prev_ = morph_progress;
  prev_morph_id_ = morph_id_;
  prev_returns_ = curr;
  last_changed_morph_ = false;
  last_changed_env_ = false;

  if (result.decision == "morph") {
    ChangeMorphology(result);
  } else if (result.decision == "env") {
    ChangeEnvironment(result);
  }
  result.returns = std::move(curr);
  return result;
}

void Engine::ChangeMorphology(CoEvoStepResult& /*result*/) {
  MorphAction action;
  std::optional<MorphSample> sample;
  if (config_.strategy.morph == MorphStrategy::kPolicy) {
    sample = morph_policy_.Act(morph_, morph_rng_);
    action = sample->action;
  } else {
    action = RandomMorphAction(morph_, strategy_rng_, config_.morph_delta_scale);
  }
  MorphOutcome outcome = ApplyMorphAction(morph_, action);
  const bool placeable = Placeable(outcome.morphology, config_.sim);
  if (placeable) SetMorphology(outcome.morphology);
  morph_decisions_++;
  pending_morph_cost_ = outcome.ActionCost();
  last_changed_morph_ = true;
  if (sample && config_.strategy.train_morph_policy) pending_morph_ = sample;

  nlohmann::json record = Context();
  record["event"] = "morph_change";
  record["added"] = outcome.added;
  record["deleted"] = outcome.deleted;
  record["rejected"] = outcome.rejected;
  record["placement_rejected"] = !placeable;
  record["action_cost"] = pending_morph_cost_;
  record["morphology"] = MorphologyToJson(morph_);
  Emit(std::move(record));
}

void Engine::ChangeEnvironment(CoEvoStepResult& /*result*/) {
  const EnvParams before = env_;
  EnvParams after;
  std::optional<EnvSample> sample;
  if (config_.strategy.env == EnvStrategy::kPolicy) {
    sample = env_policy_.Act(morph_, env_, env_rng_);
    after = sample->after;
  } else {
    after = RandomEnvParams(config_.env_kind, config_.terrain, strategy_rng_);
  }
  SetEnvironment(after);
  env_decisions_++;
  pending_env_cost_ = EnvActionCost(before, after);
  last_changed_env_ = true;
  if (sample) pending_env_ = sample;

  nlohmann::json record = Context();
  record["event"] = "env_change";
  record["action_cost"] = pending_env_cost_;
  Emit(std::move(record));
}

void Engine::FinishMorphTransition(double reward) {
  morph_buffer_.samples.push_back(std::move(*pending_morph_));
  morph_rewards_.push_back(reward);
  const int finished = ++morph_transitions_;
  morph_dones_.push_back(finished % config_.meta_episode == 0 ? 1 : 0);
  if (morph_buffer_.size() >= config_.morph_ppo.batch_size) UpdateMorphPolicy();
}

void Engine::FinishEnvTransition(double reward) {
  env_buffer_.samples.push_back(std::move(*pending_env_));
  env_rewards_.push_back(reward);
  const int finished = ++env_transitions_;
  env_dones_.push_back(finished % config_.meta_episode == 0 ? 1 : 0);
  if (env_buffer_.size() >= config_.env_ppo.batch_size) UpdateEnvPolicy();
}

void Engine::UpdateMorphPolicy() {
  std::vector<double> values, old_logp;
  for (const auto& s : morph_buffer_.samples) {
    values.push_back(s.value);
    old_logp.push_back(s.log_prob);
  }
  const double bootstrap = morph_policy_.Value(morph_);
  GaeResult gae = ComputeGae(morph_rewards_, values, bootstrap, morph_dones_,
                             config_.morph_ppo.gamma, config_.morph_ppo.lambda);
  PpoTargets targets{std::move(old_logp), std::move(gae.advantages),
                     std::move(gae.returns)};
  nlohmann::json record = Context();
  record["event"] = "ppo_update";
  record["policy"] = "morph";
  try {
    PpoStats stats = PpoUpdate(morph_policy_, morph_buffer_, std::move(targets),
                               config_.morph_ppo, morph_optim_, meta_ppo_rng_);
    record["stats"] = PpoStatsToJson(stats);
    record["aborted"] = false;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kNumeric) throw;
    record["aborted"] = true;
    record["error"] = e.what();
  }
  Emit(std::move(record));
  morph_buffer_.samples.clear();
  morph_rewards_.clear();
  morph_dones_.clear();
}

void Engine::UpdateEnvPolicy() {
  std::vector<double> values, old_logp;
  for (const auto& s : env_buffer_.samples) {
    values.push_back(s.value);
    old_logp.push_back(s.log_prob);
  }
  const double bootstrap = env_policy_.Value(morph_, env_);
  GaeResult gae = ComputeGae(env_rewards_, values, bootstrap, env_dones_,
                             config_.env_ppo.gamma, config_.env_ppo.lambda);
  PpoTargets targets{std::move(old_logp), std::move(gae.advantages),
                     std::move(gae.returns)};
  nlohmann::json record = Context();
  record["event"] = "ppo_update";
  record["policy"] = "env";
  try {
    PpoStats stats = PpoUpdate(env_policy_, env_buffer_, std::move(targets),
                               config_.env_ppo, env_optim_, meta_ppo_rng_);
    record["stats"] = PpoStatsToJson(stats);
    record["aborted"] = false;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kNumeric) throw;
    record["aborted"] = true;
    record["error"] = e.what();
  }
  Emit(std::move(record));
  env_buffer_.samples.clear();
  env_rewards_.clear();
  env_dones_.clear();
}

void Engine::Train() {
  while (steps_ < config_.budget) {
    int64_t phase = std::min<int64_t>(config_.tau_max, config_.budget - steps_);
    TrainControlPhase(phase);
    CoEvoStep();
  }
}

nlohmann::json Engine::Checkpoint() const {
  nlohmann::json sew_morphs = nlohmann::json::array();
  for (const auto& m : sew_.morphologies()) {
    sew_morphs.push_back({{"id", m.id}, {"morphology", MorphologyToJson(m.morphology)}});
  }
  nlohmann::json sew_envs = nlohmann::json::array();
  for (const auto& e : sew_.environments()) {
    sew_envs.push_back({{"id", e.id},
                        {"params", EnvParamsToJson(e.params)},
                        {"terrain_seed", e.terrain_seed}});
  }
  nlohmann::json training = nlohmann::json::array();
  for (const auto& p : training_envs_) training.push_back(EnvParamsToJson(p));
  return {{"version", 1},
          {"seed", config_.seed},
          {"step", steps_},
          {"coevo_step", coevo_steps_},
          {"env_kind", EnvKindName(config_.env_kind)},
          {"morphology", MorphologyToJson(morph_)},
          {"env_params", EnvParamsToJson(env_)},
          {"sim", SimConfigToJson(config_.sim)},
          {"terrain", TerrainConfigToJson(config_.terrain)},
          {"control_net", NetSizesToJson(config_.control_net)},
          {"control_actor", ParamVectorToJson(control_.actor())},
          {"control_critic", ParamVectorToJson(control_.critic())},
          {"morph_actor", ParamVectorToJson(morph_policy_.actor())},
          {"morph_critic", ParamVectorToJson(morph_policy_.critic())},
          {"env_actor", ParamVectorToJson(env_policy_.actor())},
          {"env_critic", ParamVectorToJson(env_policy_.critic())},
          {"sew", {{"morphologies", sew_morphs}, {"environments", sew_envs}}},
          {"training_envs", training}};
}

}  // namespace mece
