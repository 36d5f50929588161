#ifndef MECE_PPO_H_
#define MECE_PPO_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mece/error.h"
#include "mece/nets.h"
#include "mece/rng.h"

namespace mece {

struct PpoConfig {
  double clip = 0.2;
  double gamma = 0.95;
  double lambda = 0.99;
  int epochs = 10;
  int batch_size = 4096;
  int minibatch_size = 256;
  double policy_lr = 5e-5;
  double value_lr = 3e-4;
  double max_grad_norm = 0.5;  // <= 0 disables clipping
  bool normalize_advantages = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // Throws ErrorKind::kValidation on out-of-range values.
  void Validate() const;
};

nlohmann::json PpoConfigToJson(const PpoConfig& config);
// Missing fields keep their defaults.
PpoConfig PpoConfigFromJson(const nlohmann::json& doc,
                            const PpoConfig& defaults = {});

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;  // advantages + values
};

// A_t = sum_l (gamma lambda)^l delta_{t+l}, delta_t = r_t + gamma V_{t+1}
// (1 - done_t) - V_t. V_{T} is `bootstrap_value`. Advantages are not
// normalized here. Throws kShape on length mismatch, kValidation on gamma or
// lambda outside [0, 1].
GaeResult ComputeGae(std::span<const double> rewards,
                     std::span<const double> values, double bootstrap_value,
                     std::span<const uint8_t> dones, double gamma,
                     double lambda);

// In-place zero-mean unit-variance normalization; no-op for fewer than two
// entries.
void NormalizeAdvantages(std::vector<double>& advantages);

class Adam {
 public:
  Adam() = default;
  Adam(int size, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void Step(Vector& params, const Vector& grad);
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  int64_t steps() const { return t_; }

  nlohmann::json ToJson() const;
  void FromJson(const nlohmann::json& doc);

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
  Vector m_, v_;
};

// Rescales grad to norm max_norm if larger; returns the norm before clipping.
double ClipGradNorm(Vector& grad, double max_norm);

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double kl_estimate = 0.0;
  double clip_fraction = 0.0;
  int samples = 0;
  int minibatches = 0;
};

nlohmann::json PpoStatsToJson(const PpoStats& stats);

// Targets of one update: recorded log-probs plus GAE output.
struct PpoTargets {
  std::vector<double> old_log_probs;
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Per-sample clipped surrogate. Writes dL/dlogp into `dlogp` (loss is the
// negated objective averaged over the minibatch, so the scale is 1 / count)
// and accumulates statistics.
struct SurrogateTerm {
  double loss = 0.0;
  double dlogp = 0.0;
  bool clipped = false;
  double kl = 0.0;
};
SurrogateTerm ClippedSurrogate(double new_log_prob, double old_log_prob,
                               double advantage, double clip, int count);

// Optimizer state of one actor-critic pair.
struct PpoOptimizers {
  Adam actor;
  Adam critic;
};

// Clipped-surrogate PPO over shuffled minibatches. `Policy` supplies:
//   ParamVector& actor(), ParamVector& critic()
//   typename Policy::ActorPass / CriticPass
//   std::vector<double> LogProbs(const Batch&, std::span<const int> idx,
//                                ActorPass*) const
//   void LogProbBackward(const Batch&, std::span<const int> idx,
//                        const ActorPass&, std::span<const double> dlogp,
//                        Vector& grad) const
//   std::vector<double> Values(const Batch&, std::span<const int> idx,
//                              CriticPass*) const
//   void ValueBackward(const Batch&, std::span<const int> idx,
//                      const CriticPass&, std::span<const double> dvalue,
//                      Vector& grad) const
// Throws kInput on an empty batch and kNumeric (leaving parameters at their
// last finite values) when a loss turns non-finite.
template <typename Policy, typename Batch>
PpoStats PpoUpdate(Policy& policy, const Batch& batch, PpoTargets targets,
                   const PpoConfig& config, PpoOptimizers& optim, Rng& rng) {
  const int n = static_cast<int>(targets.old_log_probs.size());
  if (n == 0) throw Error(ErrorKind::kInput, "ppo update on an empty batch");
  if (static_cast<int>(targets.advantages.size()) != n ||
      static_cast<int>(targets.returns.size()) != n) {
    throw Error(ErrorKind::kShape, "ppo targets have mismatched lengths");
  }
  if (config.normalize_advantages) NormalizeAdvantages(targets.advantages);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  const int mb = std::max(1, std::min(config.minibatch_size, n));

  PpoStats stats;
  stats.samples = n;
  ParamVector& actor = policy.actor();
  ParamVector& critic = policy.critic();
  for (int epoch = 0; epoch < config.epochs; epoch++) {
    // Fisher-Yates with the update's own stream
    for (int i = n - 1; i > 0; i--) {
      std::swap(order[i], order[rng.UniformInt(i + 1)]);
    }
    for (int begin = 0; begin < n; begin += mb) {
      const int count = std::min(mb, n - begin);
      std::span<const int> idx(order.data() + begin, count);

      typename Policy::ActorPass actor_pass;
      std::vector<double> logp = policy.LogProbs(batch, idx, &actor_pass);
      std::vector<double> dlogp(count);
      double policy_loss = 0.0, kl = 0.0;
      int clipped = 0;
      for (int k = 0; k < count; k++) {
        int i = idx[k];
        SurrogateTerm term =
            ClippedSurrogate(logp[k], targets.old_log_probs[i],
                             targets.advantages[i], config.clip, count);
        policy_loss += term.loss;
        dlogp[k] = term.dlogp;
        kl += term.kl;
        clipped += term.clipped;
      }

      typename Policy::CriticPass critic_pass;
      std::vector<double> values = policy.Values(batch, idx, &critic_pass);
      std::vector<double> dvalue(count);
      double value_loss = 0.0;
      for (int k = 0; k < count; k++) {
        double err = values[k] - targets.returns[idx[k]];
        value_loss += 0.5 * err * err / count;
        dvalue[k] = err / count;
      }
      if (!std::isfinite(policy_loss) || !std::isfinite(value_loss)) {
        throw Error(ErrorKind::kNumeric, "ppo: non-finite loss at epoch " +
                                             std::to_string(epoch));
      }

      Vector actor_grad = actor.Zeros();
      policy.LogProbBackward(batch, idx, actor_pass, dlogp, actor_grad);
      Vector critic_grad = critic.Zeros();
      policy.ValueBackward(batch, idx, critic_pass, dvalue, critic_grad);
      if (!actor_grad.allFinite() || !critic_grad.allFinite()) {
        throw Error(ErrorKind::kNumeric, "ppo: non-finite gradient");
      }
      if (config.max_grad_norm > 0.0) {
        ClipGradNorm(actor_grad, config.max_grad_norm);
        ClipGradNorm(critic_grad, config.max_grad_norm);
      }
      optim.actor.Step(actor.values, actor_grad);
      optim.critic.Step(critic.values, critic_grad);

      stats.policy_loss += policy_loss;
      stats.value_loss += value_loss;
      stats.kl_estimate += kl / count;
      stats.clip_fraction += static_cast<double>(clipped) / count;
      stats.minibatches++;
    }
  }
  if (stats.minibatches > 0) {
    double inv = 1.0 / stats.minibatches;
    stats.policy_loss *= inv;
    stats.value_loss *= inv;
    stats.kl_estimate *= inv;
    stats.clip_fraction *= inv;
  }
  return stats;
}

}  // namespace mece

#endif  // MECE_PPO_H_
