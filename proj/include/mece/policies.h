#ifndef MECE_POLICIES_H_
#define MECE_POLICIES_H_

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mece/morphology.h"
#include "mece/nets.h"
#include "mece/rng.h"
#include "mece/sim2d.h"

namespace mece {

// control input per joint: observation row followed by the joint attributes
inline constexpr int kControlFeatures = kObsSize + kNumAttrs;
// morphology input per joint: attributes, head flag, child count / 3
inline constexpr int kMorphFeatures = kNumAttrs + 2;

RowMatrix ControlFeatures(const Eigen::MatrixXd& observation,
                          const Morphology& morphology);
RowMatrix MorphFeatures(const Morphology& morphology);
GraphTopology TopologyOf(const Morphology& morphology);

struct NetSizes {
  std::vector<int> policy_gnn{64, 64, 64};
  std::vector<int> policy_mlp;  // environment policy only
  std::vector<int> value_gnn{64, 64, 64};
  std::vector<int> value_mlp{512, 256};
  double init_log_std = 0.0;
};

nlohmann::json NetSizesToJson(const NetSizes& sizes);
NetSizes NetSizesFromJson(const nlohmann::json& doc, const NetSizes& defaults);

// ---------------------------------------------------------------------------
// Control policy pi: shared GNN trunk, per-joint Gaussian torque, pooled GNN
// critic.

struct ControlAction {
  std::vector<double> torques;  // sampled, unclipped; the world clips
  double log_prob = 0.0;
  double value = 0.0;
};

// Transitions of one morphology, stacked for batched evaluation.
struct ControlBatch {
  GraphTopology graph;
  int num_nodes = 0;
  RowMatrix features;  // (capacity * num_nodes) x kControlFeatures
  RowMatrix actions;   // capacity x num_nodes; rows past size() are unused

  explicit ControlBatch(const Morphology& morphology);
  int size() const { return used_; }
  void Reserve(int count);
  void Append(const RowMatrix& node_features, std::span<const double> action);
  void Clear();

 private:
  int used_ = 0;
  friend class ControlPolicy;
};

class ControlPolicy {
 public:
  struct ActorPass {
    RowMatrix x, actions, mean;
    GraphNet::Cache trunk;
  };
  struct CriticPass {
    RowMatrix x;
    PooledGraphNet::Cache net;
  };

  ControlPolicy(const NetSizes& sizes, uint64_t seed);

  ParamVector& actor() { return actor_; }
  ParamVector& critic() { return critic_; }
  const ParamVector& actor() const { return actor_; }
  const ParamVector& critic() const { return critic_; }
  double log_std() const { return actor_.values(log_std_); }

  // One world. deterministic = true returns the mean action.
  ControlAction Act(const Eigen::MatrixXd& observation,
                    const Morphology& morphology, Rng& rng,
                    bool deterministic = false) const;

  // B stacked worlds sharing `graph`. rng == nullptr gives mean actions.
  // actions: B x n. log_probs / values may be null.
  void ActBatch(const GraphTopology& graph, const RowMatrix& features,
                Rng* rng, RowMatrix* actions, std::vector<double>* log_probs,
                std::vector<double>* values) const;
  std::vector<double> ValueBatch(const GraphTopology& graph,
                                 const RowMatrix& features) const;

  // independent density evaluation of a given action
  double LogProb(const Eigen::MatrixXd& observation,
                 const Morphology& morphology,
                 std::span<const double> action) const;

  std::vector<double> LogProbs(const ControlBatch& batch,
                               std::span<const int> idx, ActorPass* pass) const;
  void LogProbBackward(const ControlBatch& batch, std::span<const int> idx,
                       const ActorPass& pass, std::span<const double> dlogp,
                       Vector& grad) const;
  std::vector<double> Values(const ControlBatch& batch,
                             std::span<const int> idx, CriticPass* pass) const;
  void ValueBackward(const ControlBatch& batch, std::span<const int> idx,
                     const CriticPass& pass, std::span<const double> dvalue,
                     Vector& grad) const;

 private:
  RowMatrix Mean(const GraphTopology& graph, const RowMatrix& x,
                 GraphNet::Cache* cache) const;
  void Gather(const ControlBatch& batch, std::span<const int> idx,
              RowMatrix& x, RowMatrix* actions) const;

  ParamVector actor_, critic_;
  GraphNet trunk_;
  Dense head_;
  int log_std_ = 0;
  PooledGraphNet value_;
};

// ---------------------------------------------------------------------------
// Morphology policy pi_m: per-node categorical topology choice and Gaussian
// attribute deltas. The delta applied is delta_scale * clip(u, -1, 1) and the
// log-prob is taken on the raw sample u.

struct MorphSample {
  Morphology state;
  std::vector<int> choices;  // TopologyChoice per node
  RowMatrix u;               // n x kNumAttrs raw Gaussian samples
  MorphAction action;
  double log_prob = 0.0;
  double value = 0.0;
};

struct MorphBatch {
  std::vector<MorphSample> samples;
  int size() const { return static_cast<int>(samples.size()); }
};

class MorphologyPolicy {
 public:
  struct ActorPass {
    std::vector<RowMatrix> x, logits, mean;
    std::vector<GraphNet::Cache> trunk;
  };
  struct CriticPass {
    std::vector<RowMatrix> x;
    std::vector<PooledGraphNet::Cache> net;
  };

  MorphologyPolicy(const NetSizes& sizes, uint64_t seed,
                   double delta_scale = 0.1);

  ParamVector& actor() { return actor_; }
  ParamVector& critic() { return critic_; }
  const ParamVector& actor() const { return actor_; }
  const ParamVector& critic() const { return critic_; }
  double delta_scale() const { return delta_scale_; }
  int log_std_offset() const { return log_std_; }

  // deterministic = true takes the argmax choice and the mean deltas
  MorphSample Act(const Morphology& morphology, Rng& rng,
                  bool deterministic = false) const;
  double Value(const Morphology& morphology) const;
  double LogProb(const Morphology& morphology, std::span<const int> choices,
                 const RowMatrix& u) const;
  // per-node logits (n x 3) and delta means (n x kNumAttrs)
  void Heads(const Morphology& morphology, RowMatrix* logits,
             RowMatrix* mean) const;

  std::vector<double> LogProbs(const MorphBatch& batch,
                               std::span<const int> idx, ActorPass* pass) const;
  void LogProbBackward(const MorphBatch& batch, std::span<const int> idx,
                       const ActorPass& pass, std::span<const double> dlogp,
                       Vector& grad) const;
  std::vector<double> Values(const MorphBatch& batch, std::span<const int> idx,
                             CriticPass* pass) const;
  void ValueBackward(const MorphBatch& batch, std::span<const int> idx,
                     const CriticPass& pass, std::span<const double> dvalue,
                     Vector& grad) const;

 private:
  MorphAction ToAction(std::span<const int> choices, const RowMatrix& u) const;

  double delta_scale_;
  ParamVector actor_, critic_;
  GraphNet trunk_;
  Dense logits_, mean_;
  int log_std_ = 0;
  PooledGraphNet value_;
};

// Uniform topology choice and uniform deltas in [-delta_scale, delta_scale].
MorphAction RandomMorphAction(const Morphology& morphology, Rng& rng,
                              double delta_scale = 0.1);

// ---------------------------------------------------------------------------
// Environment policy pi_e: pooled morphology embedding joined with the
// normalized theta^E, Gaussian deltas scaled by delta_scale * (hi - lo), then
// clipped into bounds. The log-prob is taken on the unclipped sample.

struct EnvSample {
  Morphology morphology;
  EnvParams before;
  EnvParams after;
  std::vector<double> u;  // raw Gaussian sample per controlled parameter
  double log_prob = 0.0;
  double value = 0.0;
};

struct EnvBatch {
  std::vector<EnvSample> samples;
  int size() const { return static_cast<int>(samples.size()); }
};

class EnvironmentPolicy {
 public:
  struct ActorPass {
    std::vector<RowMatrix> x, mean;
    std::vector<PooledGraphNet::Cache> net;
  };
  struct CriticPass {
    std::vector<RowMatrix> x;
    std::vector<PooledGraphNet::Cache> net;
  };

  EnvironmentPolicy(EnvKind kind, const TerrainConfig& terrain,
                    const NetSizes& sizes, uint64_t seed,
                    double delta_scale = 0.1);

  ParamVector& actor() { return actor_; }
  ParamVector& critic() { return critic_; }
  const ParamVector& actor() const { return actor_; }
  const ParamVector& critic() const { return critic_; }
  int num_controlled() const { return dims_; }
  int log_std_offset() const { return log_std_; }

  EnvSample Act(const Morphology& morphology, const EnvParams& params,
                Rng& rng, bool deterministic = false) const;
  double Value(const Morphology& morphology, const EnvParams& params) const;
  double LogProb(const Morphology& morphology, const EnvParams& params,
                 std::span<const double> u) const;
  std::vector<double> Mean(const Morphology& morphology,
                           const EnvParams& params) const;
  // theta^E mapped to [-1, 1] per controlled parameter
  RowMatrix Normalized(const EnvParams& params) const;
  // clip(before + delta_scale * (hi - lo) * u) per controlled parameter
  EnvParams ApplyDelta(const EnvParams& before, std::span<const double> u) const;

  std::vector<double> LogProbs(const EnvBatch& batch, std::span<const int> idx,
                               ActorPass* pass) const;
  void LogProbBackward(const EnvBatch& batch, std::span<const int> idx,
                       const ActorPass& pass, std::span<const double> dlogp,
                       Vector& grad) const;
  std::vector<double> Values(const EnvBatch& batch, std::span<const int> idx,
                             CriticPass* pass) const;
  void ValueBackward(const EnvBatch& batch, std::span<const int> idx,
                     const CriticPass& pass, std::span<const double> dvalue,
                     Vector& grad) const;

 private:
  EnvKind kind_;
  TerrainConfig terrain_;
  int dims_;
  double delta_scale_;
  ParamVector actor_, critic_;
  PooledGraphNet net_;
  int log_std_ = 0;
  PooledGraphNet value_;
};

// theta^E drawn uniformly within bounds
EnvParams RandomEnvParams(EnvKind kind, const TerrainConfig& terrain,
                          Rng& rng);

}  // namespace mece

#endif  // MECE_POLICIES_H_
