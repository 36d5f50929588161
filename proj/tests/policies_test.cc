#include "mece/policies.h"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "gradcheck.h"
#include "mece/error.h"
#include "mece/rng.h"
#include "test_util.h"

namespace mece {
namespace {

NetSizes Small() {
  NetSizes s;
  s.policy_gnn = {6, 5};
  s.policy_mlp = {7};
  s.value_gnn = {6};
  s.value_mlp = {8, 4};
  return s;
}

Eigen::MatrixXd RandomObs(const Morphology& m, Rng& rng) {
  Eigen::MatrixXd obs(m.size(), kObsSize);
  for (int i = 0; i < obs.size(); i++) obs.data()[i] = rng.Normal();
  return obs;
}

TEST(FeaturesTest, Shapes) {
  Morphology m = InitialMorphology(3);
  Rng rng(0);
  RowMatrix f = ControlFeatures(RandomObs(m, rng), m);
  EXPECT_EQ(f.rows(), 4);
  EXPECT_EQ(f.cols(), kControlFeatures);
  RowMatrix g = MorphFeatures(m);
  EXPECT_EQ(g.cols(), kMorphFeatures);
  EXPECT_EQ(g(0, kNumAttrs), 1.0);  // head flag
  EXPECT_DOUBLE_EQ(g(0, kNumAttrs + 1), 1.0);  // three children / 3
  EXPECT_EQ(g(1, kNumAttrs), 0.0);
}

TEST(ControlPolicyTest, ActMatchesLogProb) {
  ControlPolicy policy(Small(), 1);
  Morphology m = InitialMorphology(2);
  Rng rng(2);
  Eigen::MatrixXd obs = RandomObs(m, rng);
  ControlAction a = policy.Act(obs, m, rng);
  ASSERT_EQ(a.torques.size(), 3u);
  EXPECT_NEAR(a.log_prob, policy.LogProb(obs, m, a.torques), 1e-12);
}

TEST(ControlPolicyTest, DeterministicActionIsMean) {
  ControlPolicy policy(Small(), 1);
  Morphology m = InitialMorphology(2);
  Rng rng(3);
  Eigen::MatrixXd obs = RandomObs(m, rng);
  ControlAction a = policy.Act(obs, m, rng, true);
  ControlAction b = policy.Act(obs, m, rng, true);
  EXPECT_EQ(a.torques, b.torques);
  // the density peaks at the mean
  std::vector<double> shifted = a.torques;
  shifted[1] += 0.1;
  EXPECT_GT(policy.LogProb(obs, m, a.torques), policy.LogProb(obs, m, shifted));
}

TEST(ControlPolicyTest, BatchAgreesWithSingle) {
  ControlPolicy policy(Small(), 4);
  Morphology m = InitialMorphology(3);
  Rng rng(5);
  Eigen::MatrixXd o1 = RandomObs(m, rng), o2 = RandomObs(m, rng);
  RowMatrix features(8, kControlFeatures);
  features.topRows(4) = ControlFeatures(o1, m);
  features.bottomRows(4) = ControlFeatures(o2, m);
  RowMatrix actions;
  std::vector<double> logp, values;
  policy.ActBatch(TopologyOf(m), features, nullptr, &actions, &logp, &values);
  Rng unused(0);
  ControlAction single = policy.Act(o2, m, unused, true);
  for (int u = 0; u < 4; u++) EXPECT_NEAR(actions(1, u), single.torques[u], 1e-12);
  EXPECT_NEAR(values[1], single.value, 1e-12);
  std::vector<double> vb = policy.ValueBatch(TopologyOf(m), features);
  EXPECT_NEAR(vb[0], values[0], 1e-12);
}

TEST(ControlPolicyTest, Gradients) {
  ControlPolicy policy(Small(), 6);
  Rng rng(7);
  testing::Jitter(policy.actor(), rng);
  testing::Jitter(policy.critic(), rng);
  for (int draw = 0; draw < 5; draw++) {
    Morphology m = testing::RandomMorphology(rng);
    ControlBatch batch = testing::RandomControlBatch(m, 3, rng);
    EXPECT_LT(testing::CheckActor(policy, batch, rng, 20).max_rel_error, 1e-4);
    EXPECT_LT(testing::CheckCritic(policy, batch, rng, 20).max_rel_error, 1e-4);
  }
}

TEST(ControlPolicyTest, BatchShapeMismatch) {
  ControlBatch batch(InitialMorphology(2));
  EXPECT_THROW(batch.Append(RowMatrix::Zero(2, kControlFeatures),
                            std::vector<double>(3, 0.0)),
               Error);
}

TEST(MorphologyPolicyTest, SampleIsConsistent) {
  MorphologyPolicy policy(Small(), 1, 0.1);
  Morphology m = InitialMorphology(2);
  Rng rng(8);
  MorphSample s = policy.Act(m, rng);
  ASSERT_EQ(s.choices.size(), 3u);
  EXPECT_EQ(s.u.rows(), 3);
  EXPECT_NEAR(s.log_prob, policy.LogProb(m, s.choices, s.u), 1e-12);
  for (int i = 0; i < 3; i++) {
    for (int k = 0; k < kNumAttrs; k++) {
      double expected = 0.1 * std::clamp(s.u(i, k), -1.0, 1.0);
      EXPECT_DOUBLE_EQ(s.action.deltas[i][k], expected);
    }
    EXPECT_EQ(static_cast<int>(s.action.topology[i]), s.choices[i]);
  }
}

TEST(MorphologyPolicyTest, DeterministicUsesArgmaxAndMean) {
  MorphologyPolicy policy(Small(), 2, 0.1);
  Morphology m = InitialMorphology(1);
  Rng rng(9);
  MorphSample s = policy.Act(m, rng, true);
  RowMatrix logits, mean;
  policy.Heads(m, &logits, &mean);
  for (int i = 0; i < m.size(); i++) {
    int best = 0;
    for (int c = 1; c < kNumTopologyChoices; c++) {
      if (logits(i, c) > logits(i, best)) best = c;
    }
    EXPECT_EQ(s.choices[i], best);
    for (int k = 0; k < kNumAttrs; k++) EXPECT_EQ(s.u(i, k), mean(i, k));
  }
}

TEST(MorphologyPolicyTest, Gradients) {
  MorphologyPolicy policy(Small(), 3, 0.1);
  Rng rng(10);
  testing::Jitter(policy.actor(), rng);
  testing::Jitter(policy.critic(), rng);
  for (int draw = 0; draw < 5; draw++) {
    MorphBatch batch = testing::RandomMorphBatch(policy, 3, rng);
    EXPECT_LT(testing::CheckActor(policy, batch, rng, 20).max_rel_error, 1e-4);
    EXPECT_LT(testing::CheckCritic(policy, batch, rng, 20).max_rel_error, 1e-4);
  }
}

TEST(EnvironmentPolicyTest, DeltaAndClip) {
  TerrainConfig terrain;
  EnvironmentPolicy policy(EnvKind::kRoughTerrain, terrain, Small(), 1, 0.1);
  EnvParams before;
  before.max_height = terrain.max_height_limit - 0.01;
  before.height_variance = 3.0;
  std::vector<double> u{1.0, -0.5};
  EnvParams after = policy.ApplyDelta(before, u);
  EXPECT_EQ(after.max_height, terrain.max_height_limit);
  auto [lo, hi] = terrain.Bounds(EnvKind::kRoughTerrain, 1);
  EXPECT_DOUBLE_EQ(after.height_variance, 3.0 - 0.05 * (hi - lo));
}

TEST(EnvironmentPolicyTest, NormalizedRange) {
  TerrainConfig terrain;
  EnvironmentPolicy policy(EnvKind::kGapCrosser, terrain, Small(), 1);
  EnvParams p;
  p.kind = EnvKind::kGapCrosser;
  p.gap_width = terrain.gap_min;
  EXPECT_DOUBLE_EQ(policy.Normalized(p)(0, 0), -1.0);
  p.gap_width = terrain.gap_max;
  EXPECT_DOUBLE_EQ(policy.Normalized(p)(0, 0), 1.0);
}

TEST(EnvironmentPolicyTest, SampleIsConsistent) {
  TerrainConfig terrain;
  EnvironmentPolicy policy(EnvKind::kRoughTerrain, terrain, Small(), 2);
  Rng rng(11);
  EnvParams p = RandomEnvParams(EnvKind::kRoughTerrain, terrain, rng);
  Morphology m = InitialMorphology(2);
  EnvSample s = policy.Act(m, p, rng);
  EXPECT_NEAR(s.log_prob, policy.LogProb(m, p, s.u), 1e-12);
  EXPECT_EQ(s.after, policy.ApplyDelta(p, s.u));
  EXPECT_NO_THROW(ValidateEnvParams(s.after, terrain));
}

TEST(EnvironmentPolicyTest, Gradients) {
  TerrainConfig terrain;
  for (EnvKind kind : {EnvKind::kRoughTerrain, EnvKind::kGapCrosser}) {
    EnvironmentPolicy policy(kind, terrain, Small(), 4);
    Rng rng(12);
    testing::Jitter(policy.actor(), rng);
    testing::Jitter(policy.critic(), rng);
    for (int draw = 0; draw < 5; draw++) {
      EnvBatch batch = testing::RandomEnvBatch(policy, kind, terrain, 3, rng);
      EXPECT_LT(testing::CheckActor(policy, batch, rng, 20).max_rel_error, 1e-4);
      EXPECT_LT(testing::CheckCritic(policy, batch, rng, 20).max_rel_error,
                1e-4);
    }
  }
}

TEST(RandomActionsTest, WithinBounds) {
  TerrainConfig terrain;
  Rng rng(13);
  Morphology m = InitialMorphology(2);
  for (int i = 0; i < 200; i++) {
    MorphAction a = RandomMorphAction(m, rng, 0.1);
    for (const auto& d : a.deltas) {
      for (double x : d) EXPECT_LE(std::abs(x), 0.1);
    }
    EXPECT_NO_THROW(
        ValidateEnvParams(RandomEnvParams(EnvKind::kRoughTerrain, terrain, rng),
                          terrain));
  }
}

TEST(NetSizesTest, JsonRoundTrip) {
  NetSizes s = Small();
  NetSizes back = NetSizesFromJson(NetSizesToJson(s), NetSizes{});
  EXPECT_EQ(back.policy_gnn, s.policy_gnn);
  EXPECT_EQ(back.value_mlp, s.value_mlp);
}

}  // namespace
}  // namespace mece
