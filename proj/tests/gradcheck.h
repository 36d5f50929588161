// Finite-difference checks of the policy backward passes.

#ifndef MECE_TESTS_GRADCHECK_H_
#define MECE_TESTS_GRADCHECK_H_

#include <algorithm>
#include <numeric>
#include <vector>

#include "mece/nets.h"
#include "mece/policies.h"
#include "mece/rng.h"
#include "test_util.h"

namespace mece::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  int coordinates = 0;
};

// Weighted sum of per-sample outputs, L = sum_k w_k out_k, differentiated
// against the analytic backward pass on `coords` random coordinates of
// `params`. `eval` returns the per-sample outputs and `backward` accumulates
// dL/dparams for the given weights.
template <typename Eval, typename Backward>
GradCheck CheckCoordinates(ParamVector& params, int samples, Eval eval,
                           Backward backward, Rng& rng, int coords) {
  std::vector<double> w(samples);
  for (double& x : w) x = rng.Normal();
  Vector grad = params.Zeros();
  backward(w, grad);
  std::vector<double> x(params.values.data(),
                        params.values.data() + params.size());
  const Vector saved = params.values;
  auto f = [&] {
    params.values = Eigen::Map<const Vector>(x.data(), x.size());
    std::vector<double> out = eval();
    return std::inner_product(out.begin(), out.end(), w.begin(), 0.0);
  };
  GradCheck result;
  for (int c = 0; c < coords; c++) {
    int i = rng.UniformInt(params.size());
    double numeric = CentralDifference(x, i, f);
    result.max_rel_error =
        std::max(result.max_rel_error, RelativeError(grad(i), numeric));
    result.coordinates++;
  }
  params.values = saved;
  return result;
}

template <typename Policy, typename Batch>
GradCheck CheckActor(Policy& policy, const Batch& batch, Rng& rng, int coords) {
  std::vector<int> idx(batch.size());
  std::iota(idx.begin(), idx.end(), 0);
  return CheckCoordinates(
      policy.actor(), batch.size(),
      [&] { return policy.LogProbs(batch, idx, nullptr); },
      [&](const std::vector<double>& w, Vector& grad) {
        typename Policy::ActorPass pass;
        policy.LogProbs(batch, idx, &pass);
        policy.LogProbBackward(batch, idx, pass, w, grad);
      },
      rng, coords);
}

template <typename Policy, typename Batch>
GradCheck CheckCritic(Policy& policy, const Batch& batch, Rng& rng,
                      int coords) {
  std::vector<int> idx(batch.size());
  std::iota(idx.begin(), idx.end(), 0);
  return CheckCoordinates(
      policy.critic(), batch.size(),
      [&] { return policy.Values(batch, idx, nullptr); },
      [&](const std::vector<double>& w, Vector& grad) {
        typename Policy::CriticPass pass;
        policy.Values(batch, idx, &pass);
        policy.ValueBackward(batch, idx, pass, w, grad);
      },
      rng, coords);
}

// Moves every parameter off its initialization so no layer sits at zero.
inline void Jitter(ParamVector& params, Rng& rng, double scale = 0.2) {
  for (int i = 0; i < params.size(); i++) params.values(i) += scale * rng.Normal();
}

// A random valid morphology reached by a short random mutation walk.
inline Morphology RandomMorphology(Rng& rng, int steps = 6) {
  Morphology m = InitialMorphology(1 + rng.UniformInt(3));
  for (int s = 0; s < steps; s++) {
    m = ApplyMorphAction(m, RandomMorphAction(m, rng, 0.5)).morphology;
  }
  return m;
}

inline ControlBatch RandomControlBatch(const Morphology& m, int samples,
                                       Rng& rng) {
  ControlBatch batch(m);
  for (int s = 0; s < samples; s++) {
    Eigen::MatrixXd obs(m.size(), kObsSize);
    for (int i = 0; i < obs.size(); i++) obs.data()[i] = rng.Normal();
    std::vector<double> action(m.size());
    for (double& a : action) a = rng.Normal();
    batch.Append(ControlFeatures(obs, m), action);
  }
  return batch;
}

inline MorphBatch RandomMorphBatch(const MorphologyPolicy& policy, int samples,
                                   Rng& rng) {
  MorphBatch batch;
  for (int s = 0; s < samples; s++) {
    batch.samples.push_back(policy.Act(RandomMorphology(rng), rng));
  }
  return batch;
}

inline EnvBatch RandomEnvBatch(const EnvironmentPolicy& policy, EnvKind kind,
                               const TerrainConfig& terrain, int samples,
                               Rng& rng) {
  EnvBatch batch;
  for (int s = 0; s < samples; s++) {
    EnvParams p = RandomEnvParams(kind, terrain, rng);
    batch.samples.push_back(policy.Act(RandomMorphology(rng), p, rng));
  }
  return batch;
}

}  // namespace mece::testing

#endif  // MECE_TESTS_GRADCHECK_H_
