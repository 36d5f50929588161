#include "mece/policies.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "mece/error.h"

namespace mece {
namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;

// final-layer scale for near-zero initial actions
constexpr double kPolicyHeadScale = 0.01;

std::vector<int> WithDefault(const std::vector<int>& v, std::vector<int> dflt) {
  return v.empty() ? dflt : v;
}

}  // namespace

RowMatrix ControlFeatures(const Eigen::MatrixXd& observation,
                          const Morphology& morphology) {
  const int n = morphology.size();
  if (observation.rows() != n || observation.cols() != kObsSize) {
    throw Error(ErrorKind::kShape,
                "control features: observation is " +
                    std::to_string(observation.rows()) + "x" +
                    std::to_string(observation.cols()) + ", expected " +
                    std::to_string(n) + "x" + std::to_string(kObsSize));
  }
  RowMatrix x(n, kControlFeatures);
  for (int u = 0; u < n; u++) {
    for (int c = 0; c < kObsSize; c++) x(u, c) = observation(u, c);
    const auto& attrs = morphology.nodes()[u].attrs;
    for (int c = 0; c < kNumAttrs; c++) x(u, kObsSize + c) = attrs[c];
  }
  return x;
}

RowMatrix MorphFeatures(const Morphology& morphology) {
  const int n = morphology.size();
  std::vector<int> children = morphology.ChildCounts();
  RowMatrix x(n, kMorphFeatures);
  for (int u = 0; u < n; u++) {
    const auto& node = morphology.nodes()[u];
    for (int c = 0; c < kNumAttrs; c++) x(u, c) = node.attrs[c];
    x(u, kNumAttrs) = node.parent == kNoParent ? 1.0 : 0.0;
    x(u, kNumAttrs + 1) = children[u] / static_cast<double>(kMaxChildren);
  }
  return x;
}

GraphTopology TopologyOf(const Morphology& morphology) {
  std::vector<int> parents = morphology.ParentIndices();
  return GraphTopology::FromParents(parents);
}

nlohmann::json NetSizesToJson(const NetSizes& s) {
  return {{"policy_gnn", s.policy_gnn},
          {"policy_mlp", s.policy_mlp},
          {"value_gnn", s.value_gnn},
          {"value_mlp", s.value_mlp},
          {"init_log_std", s.init_log_std}};
}

NetSizes NetSizesFromJson(const nlohmann::json& doc, const NetSizes& d) {
  NetSizes s = d;
  s.policy_gnn = doc.value("policy_gnn", s.policy_gnn);
  s.policy_mlp = doc.value("policy_mlp", s.policy_mlp);
  s.value_gnn = doc.value("value_gnn", s.value_gnn);
  s.value_mlp = doc.value("value_mlp", s.value_mlp);
  s.init_log_std = doc.value("init_log_std", s.init_log_std);
  return s;
}

// ---------------------------------------------------------------------------

ControlBatch::ControlBatch(const Morphology& morphology)
    : graph(TopologyOf(morphology)), num_nodes(morphology.size()) {
  features.resize(0, kControlFeatures);
  actions.resize(0, num_nodes);
}

void ControlBatch::Reserve(int count) {
  if (count <= actions.rows()) return;
  features.conservativeResize(static_cast<Eigen::Index>(count) * num_nodes,
                              kControlFeatures);
  actions.conservativeResize(count, num_nodes);
}

void ControlBatch::Append(const RowMatrix& node_features,
                          std::span<const double> action) {
  if (node_features.rows() != num_nodes ||
      node_features.cols() != kControlFeatures ||
      static_cast<int>(action.size()) != num_nodes) {
    throw Error(ErrorKind::kShape, "control batch: sample shape mismatch");
  }
  if (used_ >= actions.rows()) Reserve(std::max(64, 2 * used_));
  features.middleRows(static_cast<Eigen::Index>(used_) * num_nodes,
                      num_nodes) = node_features;
  for (int u = 0; u < num_nodes; u++) actions(used_, u) = action[u];
  used_++;
}

void ControlBatch::Clear() { used_ = 0; }

ControlPolicy::ControlPolicy(const NetSizes& sizes, uint64_t seed) {
  trunk_ = GraphNet(actor_, "control.trunk", kControlFeatures, sizes.policy_gnn);
  head_ = Dense(actor_, "control.mean", trunk_.output_size(), 1);
  log_std_ = actor_.Allocate("control.log_std", 1, 1);
  value_ = PooledGraphNet(critic_, "control.value", kControlFeatures,
                          sizes.value_gnn, 0, sizes.value_mlp, 1);
  Rng rng(seed);
  trunk_.Init(actor_, rng);
  head_.Init(actor_, rng, kPolicyHeadScale);
  actor_.values(log_std_) = sizes.init_log_std;
  value_.Init(critic_, rng, 1.0);
}

RowMatrix ControlPolicy::Mean(const GraphTopology& graph, const RowMatrix& x,
                              GraphNet::Cache* cache) const {
  RowMatrix h = trunk_.Forward(actor_.values, graph, x, cache);
  return head_.Forward(actor_.values, h);  // (B*n) x 1
}

void ControlPolicy::ActBatch(const GraphTopology& graph,
                             const RowMatrix& features, Rng* rng,
                             RowMatrix* actions, std::vector<double>* log_probs,
                             std::vector<double>* values) const {
  const int n = graph.num_nodes;
  RowMatrix mean = Mean(graph, features, nullptr);
  const int batch = static_cast<int>(mean.rows() / n);
  const double ls = log_std();
  const double std = std::exp(ls);
  actions->resize(batch, n);
  if (log_probs) log_probs->assign(batch, 0.0);
  for (int b = 0; b < batch; b++) {
    double logp = 0.0;
    for (int u = 0; u < n; u++) {
      double mu = mean(b * n + u, 0);
      double a = rng ? mu + std * rng->Normal() : mu;
      (*actions)(b, u) = a;
      double z = (a - mu) / std;
      logp += -0.5 * z * z - ls - kHalfLog2Pi;
    }
    if (log_probs) (*log_probs)[b] = logp;
  }
  if (values) *values = ValueBatch(graph, features);
}

std::vector<double> ControlPolicy::ValueBatch(const GraphTopology& graph,
                                              const RowMatrix& features) const {
  RowMatrix v = value_.Forward(critic_.values, graph, features, RowMatrix());
  return std::vector<double>(v.data(), v.data() + v.rows());
}

ControlAction ControlPolicy::Act(const Eigen::MatrixXd& observation,
                                 const Morphology& morphology, Rng& rng,
                                 bool deterministic) const {
  RowMatrix x = ControlFeatures(observation, morphology);
  GraphTopology graph = TopologyOf(morphology);
  RowMatrix actions;
  std::vector<double> logp, values;
  ActBatch(graph, x, deterministic ? nullptr : &rng, &actions, &logp, &values);
  ControlAction out;
  out.torques.assign(actions.data(), actions.data() + actions.cols());
  out.log_prob = logp[0];
  out.value = values[0];
  return out;
}

double ControlPolicy::LogProb(const Eigen::MatrixXd& observation,
                              const Morphology& morphology,
                              std::span<const double> action) const {
  RowMatrix x = ControlFeatures(observation, morphology);
  RowMatrix mean = Mean(TopologyOf(morphology), x, nullptr);
  if (static_cast<int>(action.size()) != morphology.size()) {
    throw Error(ErrorKind::kShape, "control log-prob: action size mismatch");
  }
  std::vector<double> mu(mean.data(), mean.data() + mean.rows());
  std::vector<double> ls(action.size(), log_std());
  return GaussianLogProb(action, mu, ls);
}

void ControlPolicy::Gather(const ControlBatch& batch, std::span<const int> idx,
                           RowMatrix& x, RowMatrix* actions) const {
  const int n = batch.num_nodes;
  const int count = static_cast<int>(idx.size());
  x.resize(static_cast<Eigen::Index>(count) * n, kControlFeatures);
  if (actions) actions->resize(count, n);
  for (int k = 0; k < count; k++) {
    int i = idx[k];
    if (i < 0 || i >= batch.size()) {
      throw Error(ErrorKind::kShape, "control batch index out of range");
    }
    x.middleRows(static_cast<Eigen::Index>(k) * n, n) =
        batch.features.middleRows(static_cast<Eigen::Index>(i) * n, n);
    if (actions) actions->row(k) = batch.actions.row(i);
  }
}

std::vector<double> ControlPolicy::LogProbs(const ControlBatch& batch,
                                            std::span<const int> idx,
                                            ActorPass* pass) const {
  ActorPass local;
  ActorPass& p = pass ? *pass : local;
  Gather(batch, idx, p.x, &p.actions);
  p.mean = Mean(batch.graph, p.x, &p.trunk);
  const int n = batch.num_nodes;
  const double ls = log_std();
  const double inv_std = std::exp(-ls);
  std::vector<double> out(idx.size());
  for (size_t k = 0; k < idx.size(); k++) {
    double logp = 0.0;
    for (int u = 0; u < n; u++) {
      double z = (p.actions(k, u) - p.mean(k * n + u, 0)) * inv_std;
      logp += -0.5 * z * z - ls - kHalfLog2Pi;
    }
    out[k] = logp;
  }
  return out;
}

void ControlPolicy::LogProbBackward(const ControlBatch& batch,
                                    std::span<const int> idx,
                                    const ActorPass& pass,
                                    std::span<const double> dlogp,
                                    Vector& grad) const {
  const int n = batch.num_nodes;
  const double ls = log_std();
  const double inv_var = std::exp(-2.0 * ls);
  RowMatrix dmean(pass.mean.rows(), 1);
  double dls = 0.0;
  for (size_t k = 0; k < idx.size(); k++) {
    for (int u = 0; u < n; u++) {
      double diff = pass.actions(k, u) - pass.mean(k * n + u, 0);
      dmean(k * n + u, 0) = dlogp[k] * diff * inv_var;
      dls += dlogp[k] * (diff * diff * inv_var - 1.0);
    }
  }
  grad(log_std_) += dls;
  const RowMatrix& h = pass.trunk.outputs.empty() ? pass.x
                                                  : pass.trunk.outputs.back();
  RowMatrix dh = head_.Backward(actor_.values, h, dmean, grad);
  trunk_.Backward(actor_.values, batch.graph, pass.trunk, dh, grad);
}

std::vector<double> ControlPolicy::Values(const ControlBatch& batch,
                                          std::span<const int> idx,
                                          CriticPass* pass) const {
  CriticPass local;
  CriticPass& p = pass ? *pass : local;
  Gather(batch, idx, p.x, nullptr);
  RowMatrix v =
      value_.Forward(critic_.values, batch.graph, p.x, RowMatrix(), &p.net);
  return std::vector<double>(v.data(), v.data() + v.rows());
}

void ControlPolicy::ValueBackward(const ControlBatch& batch,
                                  std::span<const int> /*idx*/,
                                  const CriticPass& pass,
                                  std::span<const double> dvalue,
                                  Vector& grad) const {
  RowMatrix dy(dvalue.size(), 1);
  for (size_t k = 0; k < dvalue.size(); k++) dy(k, 0) = dvalue[k];
  value_.Backward(critic_.values, batch.graph, pass.net, dy, grad);
}

// ---------------------------------------------------------------------------

MorphologyPolicy::MorphologyPolicy(const NetSizes& sizes, uint64_t seed,
                                   double delta_scale)
    : delta_scale_(delta_scale) {
  trunk_ = GraphNet(actor_, "morph.trunk", kMorphFeatures, sizes.policy_gnn);
  logits_ = Dense(actor_, "morph.topology", trunk_.output_size(),
                  kNumTopologyChoices);
  mean_ = Dense(actor_, "morph.delta_mean", trunk_.output_size(), kNumAttrs);
  log_std_ = actor_.Allocate("morph.delta_log_std", 1, kNumAttrs);
  value_ = PooledGraphNet(critic_, "morph.value", kMorphFeatures,
                          sizes.value_gnn, 0, sizes.value_mlp, 1);
  Rng rng(seed);
  trunk_.Init(actor_, rng);
  logits_.Init(actor_, rng, kPolicyHeadScale);
  mean_.Init(actor_, rng, kPolicyHeadScale);
  actor_.values.segment(log_std_, kNumAttrs).setConstant(sizes.init_log_std);
  value_.Init(critic_, rng, 1.0);
}

void MorphologyPolicy::Heads(const Morphology& morphology, RowMatrix* logits,
                             RowMatrix* mean) const {
  RowMatrix h = trunk_.Forward(actor_.values, TopologyOf(morphology),
                               MorphFeatures(morphology));
  if (logits) *logits = logits_.Forward(actor_.values, h);
  if (mean) *mean = mean_.Forward(actor_.values, h);
}

MorphAction MorphologyPolicy::ToAction(std::span<const int> choices,
                                       const RowMatrix& u) const {
  MorphAction action;
  const int n = static_cast<int>(choices.size());
  action.topology.resize(n);
  action.deltas.resize(n);
  for (int v = 0; v < n; v++) {
    action.topology[v] = static_cast<TopologyChoice>(choices[v]);
    for (int d = 0; d < kNumAttrs; d++) {
      action.deltas[v][d] = delta_scale_ * std::clamp(u(v, d), -1.0, 1.0);
    }
  }
  return action;
}

MorphSample MorphologyPolicy::Act(const Morphology& morphology, Rng& rng,
                                  bool deterministic) const {
  RowMatrix logits, mean;
  Heads(morphology, &logits, &mean);
  const int n = morphology.size();
  MorphSample s;
  s.state = morphology;
  s.choices.resize(n);
  s.u.resize(n, kNumAttrs);
  for (int v = 0; v < n; v++) {
    std::span<const double> row(logits.data() + v * kNumTopologyChoices,
                                kNumTopologyChoices);
    if (deterministic) {
      s.choices[v] = static_cast<int>(std::max_element(row.begin(), row.end()) -
                                      row.begin());
    } else {
      s.choices[v] = SampleCategorical(row, rng);
    }
    for (int d = 0; d < kNumAttrs; d++) {
      double ls = actor_.values(log_std_ + d);
      s.u(v, d) = deterministic ? mean(v, d) : SampleGaussian(mean(v, d), ls, rng);
    }
  }
  s.action = ToAction(s.choices, s.u);
  s.log_prob = LogProb(morphology, s.choices, s.u);
  s.value = Value(morphology);
  return s;
}

double MorphologyPolicy::Value(const Morphology& morphology) const {
  RowMatrix v = value_.Forward(critic_.values, TopologyOf(morphology),
                               MorphFeatures(morphology), RowMatrix());
  return v(0, 0);
}

double MorphologyPolicy::LogProb(const Morphology& morphology,
                                 std::span<const int> choices,
                                 const RowMatrix& u) const {
  RowMatrix logits, mean;
  Heads(morphology, &logits, &mean);
  const int n = morphology.size();
  if (static_cast<int>(choices.size()) != n || u.rows() != n ||
      u.cols() != kNumAttrs) {
    throw Error(ErrorKind::kShape, "morph log-prob: action shape mismatch");
  }
  std::vector<double> ls(actor_.values.data() + log_std_,
                         actor_.values.data() + log_std_ + kNumAttrs);
  double logp = 0.0;
  for (int v = 0; v < n; v++) {
    Vector lsm = LogSoftmax(std::span<const double>(
        logits.data() + v * kNumTopologyChoices, kNumTopologyChoices));
    logp += lsm(choices[v]);
    logp += GaussianLogProb(
        std::span<const double>(u.data() + v * kNumAttrs, kNumAttrs),
        std::span<const double>(mean.data() + v * kNumAttrs, kNumAttrs), ls);
  }
  return logp;
}

std::vector<double> MorphologyPolicy::LogProbs(const MorphBatch& batch,
                                               std::span<const int> idx,
                                               ActorPass* pass) const {
  ActorPass local;
  ActorPass& p = pass ? *pass : local;
  const int count = static_cast<int>(idx.size());
  p.x.resize(count);
  p.logits.resize(count);
  p.mean.resize(count);
  p.trunk.resize(count);
  std::vector<double> out(count);
  for (int k = 0; k < count; k++) {
    const MorphSample& s = batch.samples.at(idx[k]);
    p.x[k] = MorphFeatures(s.state);
    RowMatrix h = trunk_.Forward(actor_.values, TopologyOf(s.state), p.x[k],
                                 &p.trunk[k]);
    p.logits[k] = logits_.Forward(actor_.values, h);
    p.mean[k] = mean_.Forward(actor_.values, h);
    double logp = 0.0;
    for (int v = 0; v < s.state.size(); v++) {
      Vector lsm = LogSoftmax(std::span<const double>(
          p.logits[k].data() + v * kNumTopologyChoices, kNumTopologyChoices));
      logp += lsm(s.choices[v]);
      for (int d = 0; d < kNumAttrs; d++) {
        double ls = actor_.values(log_std_ + d);
        double z = (s.u(v, d) - p.mean[k](v, d)) * std::exp(-ls);
        logp += -0.5 * z * z - ls - kHalfLog2Pi;
      }
    }
    out[k] = logp;
  }
  return out;
}

void MorphologyPolicy::LogProbBackward(const MorphBatch& batch,
                                       std::span<const int> idx,
                                       const ActorPass& pass,
                                       std::span<const double> dlogp,
                                       Vector& grad) const {
  for (size_t k = 0; k < idx.size(); k++) {
    const MorphSample& s = batch.samples.at(idx[k]);
    const int n = s.state.size();
    RowMatrix dlogits(n, kNumTopologyChoices), dmean(n, kNumAttrs);
    for (int v = 0; v < n; v++) {
      Vector lsm = LogSoftmax(std::span<const double>(
          pass.logits[k].data() + v * kNumTopologyChoices,
          kNumTopologyChoices));
      for (int c = 0; c < kNumTopologyChoices; c++) {
        double onehot = c == s.choices[v] ? 1.0 : 0.0;
        dlogits(v, c) = dlogp[k] * (onehot - std::exp(lsm(c)));
      }
      for (int d = 0; d < kNumAttrs; d++) {
        double ls = actor_.values(log_std_ + d);
        double diff = s.u(v, d) - pass.mean[k](v, d);
        double inv_var = std::exp(-2.0 * ls);
        dmean(v, d) = dlogp[k] * diff * inv_var;
        grad(log_std_ + d) += dlogp[k] * (diff * diff * inv_var - 1.0);
      }
    }
    const RowMatrix& h = pass.trunk[k].outputs.empty()
                             ? pass.x[k]
                             : pass.trunk[k].outputs.back();
    RowMatrix dh = logits_.Backward(actor_.values, h, dlogits, grad);
    dh += mean_.Backward(actor_.values, h, dmean, grad);
    trunk_.Backward(actor_.values, TopologyOf(s.state), pass.trunk[k], dh, grad);
  }
}

std::vector<double> MorphologyPolicy::Values(const MorphBatch& batch,
                                             std::span<const int> idx,
                                             CriticPass* pass) const {
  CriticPass local;
  CriticPass& p = pass ? *pass : local;
  const int count = static_cast<int>(idx.size());
  p.x.resize(count);
  p.net.resize(count);
  std::vector<double> out(count);
  for (int k = 0; k < count; k++) {
    const MorphSample& s = batch.samples.at(idx[k]);
    p.x[k] = MorphFeatures(s.state);
    RowMatrix v = value_.Forward(critic_.values, TopologyOf(s.state), p.x[k],
                                 RowMatrix(), &p.net[k]);
    out[k] = v(0, 0);
  }
  return out;
}

void MorphologyPolicy::ValueBackward(const MorphBatch& batch,
                                     std::span<const int> idx,
                                     const CriticPass& pass,
                                     std::span<const double> dvalue,
                                     Vector& grad) const {
  for (size_t k = 0; k < idx.size(); k++) {
    const MorphSample& s = batch.samples.at(idx[k]);
    RowMatrix dy(1, 1);
    dy(0, 0) = dvalue[k];
    value_.Backward(critic_.values, TopologyOf(s.state), pass.net[k], dy, grad);
  }
}

MorphAction RandomMorphAction(const Morphology& morphology, Rng& rng,
                              double delta_scale) {
  MorphAction action;
  const int n = morphology.size();
  action.topology.resize(n);
  action.deltas.resize(n);
  for (int v = 0; v < n; v++) {
    action.topology[v] =
        static_cast<TopologyChoice>(rng.UniformInt(kNumTopologyChoices));
    for (int d = 0; d < kNumAttrs; d++) {
      action.deltas[v][d] = rng.Uniform(-delta_scale, delta_scale);
    }
  }
  return action;
}

// ---------------------------------------------------------------------------

EnvironmentPolicy::EnvironmentPolicy(EnvKind kind, const TerrainConfig& terrain,
                                     const NetSizes& sizes, uint64_t seed,
                                     double delta_scale)
    : kind_(kind),
      terrain_(terrain),
      dims_(TerrainConfig::NumControlled(kind)),
      delta_scale_(delta_scale) {
  net_ = PooledGraphNet(actor_, "env.policy", kMorphFeatures, sizes.policy_gnn,
                        dims_, WithDefault(sizes.policy_mlp, {200, 200}),
                        dims_);
  log_std_ = actor_.Allocate("env.log_std", 1, dims_);
  value_ = PooledGraphNet(critic_, "env.value", kMorphFeatures,
                          sizes.value_gnn, dims_, sizes.value_mlp, 1);
  Rng rng(seed);
  net_.Init(actor_, rng, kPolicyHeadScale);
  actor_.values.segment(log_std_, dims_).setConstant(sizes.init_log_std);
  value_.Init(critic_, rng, 1.0);
}

RowMatrix EnvironmentPolicy::Normalized(const EnvParams& params) const {
  RowMatrix out(1, dims_);
  for (int i = 0; i < dims_; i++) {
    auto [lo, hi] = terrain_.Bounds(kind_, i);
    out(0, i) = 2.0 * (terrain_.Get(params, i) - lo) / (hi - lo) - 1.0;
  }
  return out;
}

EnvParams EnvironmentPolicy::ApplyDelta(const EnvParams& before,
                                        std::span<const double> u) const {
  if (static_cast<int>(u.size()) != dims_) {
    throw Error(ErrorKind::kShape, "env delta: dimension mismatch");
  }
  EnvParams after = before;
  for (int i = 0; i < dims_; i++) {
    auto [lo, hi] = terrain_.Bounds(kind_, i);
    double v = terrain_.Get(before, i) + delta_scale_ * (hi - lo) * u[i];
    terrain_.Set(after, i, std::clamp(v, lo, hi));
  }
  return after;
}

std::vector<double> EnvironmentPolicy::Mean(const Morphology& morphology,
                                            const EnvParams& params) const {
  RowMatrix m = net_.Forward(actor_.values, TopologyOf(morphology),
                             MorphFeatures(morphology), Normalized(params));
  return std::vector<double>(m.data(), m.data() + dims_);
}

EnvSample EnvironmentPolicy::Act(const Morphology& morphology,
                                 const EnvParams& params, Rng& rng,
                                 bool deterministic) const {
  if (params.kind != kind_) {
    throw Error(ErrorKind::kValidation, "env policy: env kind mismatch");
  }
  EnvSample s;
  s.morphology = morphology;
  s.before = params;
  std::vector<double> mean = Mean(morphology, params);
  s.u.resize(dims_);
  for (int i = 0; i < dims_; i++) {
    double ls = actor_.values(log_std_ + i);
    s.u[i] = deterministic ? mean[i] : SampleGaussian(mean[i], ls, rng);
  }
  s.after = ApplyDelta(params, s.u);
  s.log_prob = LogProb(morphology, params, s.u);
  s.value = Value(morphology, params);
  return s;
}

double EnvironmentPolicy::Value(const Morphology& morphology,
                                const EnvParams& params) const {
  RowMatrix v = value_.Forward(critic_.values, TopologyOf(morphology),
                               MorphFeatures(morphology), Normalized(params));
  return v(0, 0);
}

double EnvironmentPolicy::LogProb(const Morphology& morphology,
                                  const EnvParams& params,
                                  std::span<const double> u) const {
  if (static_cast<int>(u.size()) != dims_) {
    throw Error(ErrorKind::kShape, "env log-prob: dimension mismatch");
  }
  std::vector<double> mean = Mean(morphology, params);
  std::vector<double> ls(actor_.values.data() + log_std_,
                         actor_.values.data() + log_std_ + dims_);
  return GaussianLogProb(u, mean, ls);
}

std::vector<double> EnvironmentPolicy::LogProbs(const EnvBatch& batch,
                                                std::span<const int> idx,
                                                ActorPass* pass) const {
  ActorPass local;
  ActorPass& p = pass ? *pass : local;
  const int count = static_cast<int>(idx.size());
  p.x.resize(count);
  p.mean.resize(count);
  p.net.resize(count);
  std::vector<double> out(count);
  for (int k = 0; k < count; k++) {
    const EnvSample& s = batch.samples.at(idx[k]);
    p.x[k] = MorphFeatures(s.morphology);
    p.mean[k] = net_.Forward(actor_.values, TopologyOf(s.morphology), p.x[k],
                             Normalized(s.before), &p.net[k]);
    double logp = 0.0;
    for (int i = 0; i < dims_; i++) {
      double ls = actor_.values(log_std_ + i);
      double z = (s.u[i] - p.mean[k](0, i)) * std::exp(-ls);
      logp += -0.5 * z * z - ls - kHalfLog2Pi;
    }
    out[k] = logp;
  }
  return out;
}

void EnvironmentPolicy::LogProbBackward(const EnvBatch& batch,
                                        std::span<const int> idx,
                                        const ActorPass& pass,
                                        std::span<const double> dlogp,
                                        Vector& grad) const {
  for (size_t k = 0; k < idx.size(); k++) {
    const EnvSample& s = batch.samples.at(idx[k]);
    RowMatrix dmean(1, dims_);
    for (int i = 0; i < dims_; i++) {
      double ls = actor_.values(log_std_ + i);
      double diff = s.u[i] - pass.mean[k](0, i);
      double inv_var = std::exp(-2.0 * ls);
      dmean(0, i) = dlogp[k] * diff * inv_var;
      grad(log_std_ + i) += dlogp[k] * (diff * diff * inv_var - 1.0);
    }
    net_.Backward(actor_.values, TopologyOf(s.morphology), pass.net[k], dmean,
                  grad);
  }
}

std::vector<double> EnvironmentPolicy::Values(const EnvBatch& batch,
                                              std::span<const int> idx,
                                              CriticPass* pass) const {
  CriticPass local;
  CriticPass& p = pass ? *pass : local;
  const int count = static_cast<int>(idx.size());
  p.x.resize(count);
  p.net.resize(count);
  std::vector<double> out(count);
  for (int k = 0; k < count; k++) {
    const EnvSample& s = batch.samples.at(idx[k]);
    p.x[k] = MorphFeatures(s.morphology);
    RowMatrix v = value_.Forward(critic_.values, TopologyOf(s.morphology),
                                 p.x[k], Normalized(s.before), &p.net[k]);
    out[k] = v(0, 0);
  }
  return out;
}

void EnvironmentPolicy::ValueBackward(const EnvBatch& batch,
                                      std::span<const int> idx,
                                      const CriticPass& pass,
                                      std::span<const double> dvalue,
                                      Vector& grad) const {
  for (size_t k = 0; k < idx.size(); k++) {
    const EnvSample& s = batch.samples.at(idx[k]);
    RowMatrix dy(1, 1);
    dy(0, 0) = dvalue[k];
    value_.Backward(critic_.values, TopologyOf(s.morphology), pass.net[k], dy,
                    grad);
  }
}

EnvParams RandomEnvParams(EnvKind kind, const TerrainConfig& terrain,
                          Rng& rng) {
  EnvParams params;
  params.kind = kind;
  for (int i = 0; i < TerrainConfig::NumControlled(kind); i++) {
    auto [lo, hi] = terrain.Bounds(kind, i);
    terrain.Set(params, i, rng.Uniform(lo, hi));
  }
  return params;
}

}  // namespace mece
