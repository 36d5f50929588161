#include "mece/sim2d.h"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mece/error.h"
#include "mece/morphology.h"
#include "mece/rng.h"

namespace mece {
namespace {

EnvParams Rough(double max_height, double variance) {
  EnvParams p;
  p.kind = EnvKind::kRoughTerrain;
  p.max_height = max_height;
  p.height_variance = variance;
  return p;
}

EnvParams Gap(double width) {
  EnvParams p;
  p.kind = EnvKind::kGapCrosser;
  p.gap_width = width;
  return p;
}

Heightfield Flat() { return Heightfield{}; }

TEST(TerrainTest, SameSeedSameField) {
  TerrainConfig config;
  Heightfield a = GenerateTerrain(Rough(1.0, 3.0), 7, config);
  Heightfield b = GenerateTerrain(Rough(1.0, 3.0), 7, config);
  Heightfield c = GenerateTerrain(Rough(1.0, 3.0), 8, config);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NE(a.samples, c.samples);
}

TEST(TerrainTest, HeightsWithinBound) {
  TerrainConfig config;
  for (uint64_t seed = 0; seed < 20; seed++) {
    Heightfield f = GenerateTerrain(Rough(0.8, 2.4), seed, config);
    for (double h : f.samples) {
      EXPECT_GE(h, 0.0);
      EXPECT_LE(h, 0.8);
    }
  }
}

TEST(TerrainTest, ZeroHeightIsFlat) {
  Heightfield f = GenerateTerrain(Rough(0.0, 3.0), 1, TerrainConfig{});
  EXPECT_EQ(Roughness(f), 0.0);
}

TEST(TerrainTest, RoughnessGrowsWithHeight) {
  TerrainConfig config;
  double low = 0, high = 0;
  for (uint64_t seed = 0; seed < 8; seed++) {
    low += Roughness(GenerateTerrain(Rough(0.3, 3.0), seed, config));
    high += Roughness(GenerateTerrain(Rough(2.0, 3.0), seed, config));
  }
  EXPECT_GT(high, low);
}

TEST(TerrainTest, GapLayout) {
  TerrainConfig config;
  Heightfield f = GenerateTerrain(Gap(1.5), 0, config);
  ASSERT_GE(f.gaps.size(), 2u);
  EXPECT_NEAR(f.gaps[1].first - f.gaps[0].first, config.gap_period, 1e-12);
  EXPECT_TRUE(f.InGap(config.gap_offset + 0.5));
  EXPECT_FALSE(f.InGap(config.gap_offset + 2.0));
  EXPECT_DOUBLE_EQ(f.HeightAt(0.3), config.gap_base_height);
}

TEST(TerrainTest, OutOfBoundsParamsRejected) {
  TerrainConfig config;
  EXPECT_THROW(GenerateTerrain(Rough(10.0, 3.0), 0, config), Error);
  EXPECT_THROW(GenerateTerrain(Gap(100.0), 0, config), Error);
}

TEST(TerrainTest, BoundsAccessors) {
  TerrainConfig config;
  EnvParams p = Rough(1.0, 3.0);
  EXPECT_EQ(TerrainConfig::NumControlled(EnvKind::kRoughTerrain), 2);
  EXPECT_EQ(TerrainConfig::NumControlled(EnvKind::kGapCrosser), 1);
  config.Set(p, 1, 5.0);
  EXPECT_EQ(config.Get(p, 1), 5.0);
  auto [lo, hi] = config.Bounds(EnvKind::kGapCrosser, 0);
  EXPECT_EQ(lo, config.gap_min);
  EXPECT_EQ(hi, config.gap_max);
}

TEST(TerrainTest, ConfigJsonRoundTrip) {
  TerrainConfig config;
  config.gap_period = 7.5;
  TerrainConfig back = TerrainConfigFromJson(TerrainConfigToJson(config));
  EXPECT_EQ(back.gap_period, 7.5);
  SimConfig sim;
  sim.horizon = 321;
  EXPECT_EQ(SimConfigFromJson(SimConfigToJson(sim)).horizon, 321);
  EXPECT_THROW(SimConfigFromJson({{"horizon", "long"}}), Error);
}

TEST(WorldTest, ResetPlacesAboveTerrain) {
  World w(InitialMorphology(2), Flat(), Rough(0.0, 3.0));
  w.Reset();
  EXPECT_GE(w.RootHeight(), 1.4);
  EXPECT_EQ(w.num_joints(), 3);
  EXPECT_EQ(w.Observe().rows(), 3);
  EXPECT_EQ(w.Observe().cols(), kObsSize);
}

TEST(WorldTest, PassiveStandOnFlatGround) {
  World w(InitialMorphology(2), Flat(), Rough(0.0, 3.0));
  w.Reset();
  std::vector<double> zero(3, 0.0);
  double ret = 0.0;
  StepResult r;
  do {
    r = w.Step(zero);
    ret += r.reward;
  } while (!r.done);
  EXPECT_TRUE(r.info.horizon);
  EXPECT_FALSE(r.info.fell);
  EXPECT_NEAR(ret, 1000.0, 1.0);
}

TEST(WorldTest, HeadOnlyFalls) {
  World w(InitialMorphology(0), Flat(), Rough(0.0, 3.0));
  w.Reset();
  StepResult r = w.Step(std::vector<double>{0.0});
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(r.info.fell);
}

TEST(WorldTest, RewardIsSpeedPlusAliveBonus) {
  SimConfig sim;
  World w(InitialMorphology(3), Flat(), Rough(0.0, 3.0), sim);
  w.Reset();
  Rng rng(5);
  for (int t = 0; t < 200; t++) {
    std::vector<double> a(4);
    for (double& x : a) x = rng.Uniform(-1.0, 1.0);
    double x0 = w.state().root_x();
    StepResult r = w.Step(a);
    if (r.info.unstable) break;
    double speed = std::abs(w.state().root_x() - x0) / 0.008;
    EXPECT_EQ(r.reward, speed + 1.0);
    EXPECT_EQ(r.done, r.info.root_height < 1.4 || r.info.horizon);
    if (r.done) break;
  }
}

TEST(WorldTest, DeterministicRollouts) {
  auto run = [] {
    TerrainConfig config;
    World w(InitialMorphology(3), GenerateTerrain(Rough(1.0, 3.0), 2, config),
            Rough(1.0, 3.0));
    w.Reset();
    Rng rng(9);
    for (int t = 0; t < 100; t++) {
      std::vector<double> a(4);
      for (double& x : a) x = rng.Uniform(-1.0, 1.0);
      if (w.Step(a).done) break;
    }
    return w.state();
  };
  EXPECT_EQ(run(), run());
}

TEST(WorldTest, StepErrors) {
  World w(InitialMorphology(2), Flat(), Rough(0.0, 3.0));
  w.Reset();
  EXPECT_THROW(w.Step(std::vector<double>{0.0}), Error);
  EXPECT_THROW(w.Step(std::vector<double>{0.0, NAN, 0.0}), Error);
  World dead(InitialMorphology(0), Flat(), Rough(0.0, 3.0));
  dead.Reset();
  dead.Step(std::vector<double>{0.0});
  try {
    dead.Step(std::vector<double>{0.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kState);
  }
}

TEST(WorldTest, GapCrosserConstants) {
  SimConfig sim;
  World w(InitialMorphology(2), GenerateTerrain(Gap(0.5), 0, TerrainConfig{}),
          Gap(0.5), sim);
  w.Reset();
  double x0 = w.state().root_x();
  StepResult r = w.Step(std::vector<double>(3, 0.0));
  EXPECT_EQ(r.reward - 0.1, std::abs(w.state().root_x() - x0) / 0.08);
  EXPECT_EQ(r.done, r.info.root_height < 1.5 || r.info.horizon);
}

TEST(WorldTest, TerminationThresholdIsStrict) {
  // no forces act, so the root stays exactly where it is placed
  SimConfig sim;
  sim.gravity = 0.0;
  sim.contact_stiffness = 0.0;
  sim.contact_damping = 0.0;
  World w(InitialMorphology(2), Flat(), Rough(0.0, 3.0), sim);
  w.Reset();
  std::vector<double> q = w.state().q, qd(w.num_dofs(), 0.0);
  q[1] = 1.4;
  w.SetState(q, qd);
  StepResult r = w.Step(std::vector<double>(3, 0.0));
  EXPECT_EQ(r.info.root_height, 1.4);
  EXPECT_FALSE(r.info.fell);
  q[1] = std::nextafter(1.4, 0.0);
  World v(InitialMorphology(2), Flat(), Rough(0.0, 3.0), sim);
  v.Reset();
  v.SetState(q, qd);
  EXPECT_TRUE(v.Step(std::vector<double>(3, 0.0)).info.fell);
}

}  // namespace
}  // namespace mece
