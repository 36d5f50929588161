#include "mece/ppo.h"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "bandit.h"
#include "mece/error.h"
#include "mece/rng.h"
#include "test_util.h"

namespace mece {
namespace {

TEST(GaeTest, MatchesDoubleSum) {
  Rng rng(1);
  for (int trial = 0; trial < 50; trial++) {
    const int n = 30;
    std::vector<double> r(n), v(n);
    std::vector<uint8_t> d(n);
    for (int t = 0; t < n; t++) {
      r[t] = rng.Normal();
      v[t] = rng.Normal();
      d[t] = rng.Uniform() < 0.1;
    }
    double bootstrap = rng.Normal();
    GaeResult gae = ComputeGae(r, v, bootstrap, d, 0.95, 0.9);
    std::vector<double> expected =
        testing::BruteForceGae(r, v, bootstrap, d, 0.95, 0.9);
    for (int t = 0; t < n; t++) {
      EXPECT_NEAR(gae.advantages[t], expected[t], 1e-10);
      EXPECT_DOUBLE_EQ(gae.returns[t], gae.advantages[t] + v[t]);
    }
  }
}

TEST(GaeTest, SingleStepTerminal) {
  std::vector<double> r{2.0}, v{0.5};
  std::vector<uint8_t> d{1};
  GaeResult gae = ComputeGae(r, v, 100.0, d, 0.9, 0.9);
  EXPECT_DOUBLE_EQ(gae.advantages[0], 1.5);
}

TEST(GaeTest, LambdaOneIsMonteCarlo) {
  std::vector<double> r{1.0, 1.0, 1.0}, v{0.0, 0.0, 0.0};
  std::vector<uint8_t> d{0, 0, 1};
  GaeResult gae = ComputeGae(r, v, 0.0, d, 0.5, 1.0);
  EXPECT_DOUBLE_EQ(gae.returns[0], 1.75);
}

TEST(GaeTest, Errors) {
  std::vector<double> r{1.0, 2.0}, v{0.0};
  std::vector<uint8_t> d{0, 0};
  EXPECT_THROW(ComputeGae(r, v, 0.0, d, 0.9, 0.9), Error);
  std::vector<double> v2{0.0, 0.0};
  EXPECT_THROW(ComputeGae(r, v2, 0.0, d, 1.5, 0.9), Error);
}

TEST(PpoTest, NormalizeAdvantages) {
  std::vector<double> a{1.0, 2.0, 3.0, 4.0};
  NormalizeAdvantages(a);
  double mean = 0, var = 0;
  for (double x : a) mean += x / 4;
  for (double x : a) var += (x - mean) * (x - mean) / 4;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(var, 1.0, 1e-6);
  std::vector<double> one{5.0};
  NormalizeAdvantages(one);
  EXPECT_EQ(one[0], 5.0);
}

TEST(PpoTest, AdamFirstStepMovesByLr) {
  Adam adam(2, 0.1);
  Vector p = Vector::Zero(2), g(2);
  g << 3.0, -0.5;
  adam.Step(p, g);
  EXPECT_NEAR(p(0), -0.1, 1e-8);
  EXPECT_NEAR(p(1), 0.1, 1e-8);
  Adam restored(2, 0.5);
  restored.FromJson(adam.ToJson());
  EXPECT_EQ(restored.steps(), 1);
}

TEST(PpoTest, ClipGradNorm) {
  Vector g(2);
  g << 3.0, 4.0;
  EXPECT_DOUBLE_EQ(ClipGradNorm(g, 1.0), 5.0);
  EXPECT_NEAR(g.norm(), 1.0, 1e-12);
  Vector small(1);
  small << 0.1;
  ClipGradNorm(small, 1.0);
  EXPECT_EQ(small(0), 0.1);
}

TEST(PpoTest, SurrogateGradientMatchesDifference) {
  Rng rng(2);
  for (int i = 0; i < 200; i++) {
    double old_lp = rng.Normal();
    double new_lp = old_lp + rng.Uniform(-0.5, 0.5);
    double adv = rng.Normal();
    SurrogateTerm term = ClippedSurrogate(new_lp, old_lp, adv, 0.2, 4);
    double ratio = std::exp(new_lp - old_lp);
    // skip the kinks of the clipped objective
    if (std::abs(ratio - 0.8) < 1e-3 || std::abs(ratio - 1.2) < 1e-3) continue;
    std::vector<double> x{new_lp};
    auto f = [&] { return ClippedSurrogate(x[0], old_lp, adv, 0.2, 4).loss; };
    double numeric = testing::CentralDifference(x, 0, f, 1e-6);
    EXPECT_NEAR(term.dlogp, numeric, 1e-7);
    double expected =
        -std::min(ratio * adv, std::clamp(ratio, 0.8, 1.2) * adv) / 4;
    EXPECT_NEAR(term.loss, expected, 1e-14);
    EXPECT_NEAR(term.kl, (ratio - 1) - std::log(ratio), 1e-14);
  }
}

TEST(PpoTest, ConfigJsonAndValidation) {
  PpoConfig c;
  c.epochs = 3;
  c.clip = 0.1;
  PpoConfig back = PpoConfigFromJson(PpoConfigToJson(c));
  EXPECT_EQ(back.epochs, 3);
  EXPECT_EQ(back.clip, 0.1);
  PpoConfig bad;
  bad.minibatch_size = 0;
  EXPECT_THROW(bad.Validate(), Error);
  EXPECT_THROW(PpoConfigFromJson({{"epochs", "ten"}}), Error);
}

TEST(PpoTest, EmptyBatchIsInputError) {
  testing::BanditPolicy policy(0.0, 0.0);
  testing::BanditBatch batch;
  PpoOptimizers optim{Adam(2, 0.1), Adam(1, 0.1)};
  Rng rng(0);
  try {
    PpoUpdate(policy, batch, PpoTargets{}, PpoConfig{}, optim, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInput);
  }
}

TEST(PpoTest, NonFiniteAdvantageIsNumericError) {
  testing::BanditPolicy policy(0.0, 0.0);
  testing::BanditBatch batch{{0.1, 0.2}};
  PpoTargets t{{-1.0, -1.0}, {NAN, 1.0}, {0.0, 0.0}};
  PpoConfig config;
  config.normalize_advantages = false;
  PpoOptimizers optim{Adam(2, 0.1), Adam(1, 0.1)};
  Rng rng(0);
  try {
    PpoUpdate(policy, batch, t, config, optim, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
}

TEST(PpoTest, BanditConverges) {
  testing::BanditResult r = testing::RunBandit(2.0, 500, 0.01, 7);
  EXPECT_GT(r.iterations, 0);
  EXPECT_NEAR(r.final_mean, 2.0, 0.02);
}

TEST(PpoTest, UpdateIsDeterministic) {
  auto run = [] { return testing::RunBandit(1.0, 20, 0.01, 3).final_mean; };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace mece
