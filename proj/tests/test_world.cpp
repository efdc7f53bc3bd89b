#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "obscbf/world.hpp"

using namespace obscbf;

namespace {

constexpr double kPi = std::numbers::pi;

Observation constant_obs(double r) { return Observation::Constant(r); }

// Independent ray-circle oracle: smallest t > 0 with |o + t d - c| = r.
double ray_circle(const Eigen::Vector2d& o, const Eigen::Vector2d& d, const Eigen::Vector2d& c, double r) {
  const Eigen::Vector2d f = o - c;
  const double b = f.dot(d);
  const double disc = b * b - (f.squaredNorm() - r * r);
  if (disc < 0) return INFINITY;
  const double t = -b - std::sqrt(disc);
  return t > 0 ? t : INFINITY;
}

}  // namespace

TEST(SampleEnvironment, EmptyHasOnlyWalls) {
  EnvironmentSpec spec;
  spec.pillars = 0;
  const Environment env = sample_environment(spec);
  EXPECT_TRUE(env.pillars.empty());
  EXPECT_TRUE(env.panels.empty());
  EXPECT_EQ(env.walls().size(), 4u);
}

TEST(SampleEnvironment, Deterministic) {
  EnvironmentSpec spec;
  spec.pillars = 3;
  spec.seed = 42;
  const Environment a = sample_environment(spec), b = sample_environment(spec);
  ASSERT_EQ(a.pillars.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(a.pillars[i].center, b.pillars[i].center);
    EXPECT_EQ(a.pillars[i].radius, b.pillars[i].radius);
  }
}

TEST(SampleEnvironment, TenPillarsRespectRadiusRangeAndExtent) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EnvironmentSpec spec;
    spec.pillars = 10;
    spec.seed = seed;
    const Environment env = sample_environment(spec);
    ASSERT_EQ(env.pillars.size(), 10u);
    for (const auto& p : env.pillars) {
      EXPECT_GE(p.radius, 0.75);
      EXPECT_LE(p.radius, 1.0);
      EXPECT_GE(p.center.x(), 0.0);
      EXPECT_LE(p.center.x(), 20.0);
      EXPECT_GE(p.center.y(), 0.0);
      EXPECT_LE(p.center.y(), 10.0);
      EXPECT_GT(p.center.x() - p.radius, spec.spawn_strip);
    }
  }
}

TEST(SampleEnvironment, OvercrowdedThrows) {
  EnvironmentSpec spec;
  spec.pillars = 500;
  spec.extent = {4.0, 3.0};
  EXPECT_THROW(sample_environment(spec), std::runtime_error);
}

TEST(Raycast, EmptyUnboundedWorldReturnsMaxRange) {
  const RawScan s = raycast(Environment::unbounded(), {0, 0});
  ASSERT_EQ(s.n_rays(), kDefaultRays);
  for (double r : s.ranges) EXPECT_EQ(r, kRangeMax);
}

TEST(Raycast, PillarOnAxis) {
  Environment env = Environment::unbounded();
  env.pillars.push_back({{2, 0}, 0.75});
  const RawScan s = raycast(env, {0, 0});
  EXPECT_NEAR(s.ranges[0], 1.25, 1e-12);
}

TEST(Raycast, MatchesCircleOracle) {
  Environment env = Environment::unbounded();
  env.pillars.push_back({{1.5, 1.0}, 0.8});
  env.pillars.push_back({{-2.0, -0.5}, 0.9});
  const Eigen::Vector2d o(0.1, -0.2);
  const RawScan s = raycast(env, o);
  for (int k = 0; k < s.n_rays(); ++k) {
    const Eigen::Vector2d d(std::cos(s.bearing(k)), std::sin(s.bearing(k)));
    double t = kRangeMax;
    for (const auto& p : env.pillars) t = std::min(t, ray_circle(o, d, p.center, p.radius));
    EXPECT_NEAR(s.ranges[k], t, 1e-9) << k;
  }
}

TEST(Raycast, PerpendicularWall) {
  Environment env;  // walls of [0, 20] x [0, 10]
  const RawScan s = raycast(env, {1.0, 5.0});
  EXPECT_NEAR(s.ranges[kDefaultRays / 2], 1.0, 1e-12);  // bearing pi
  EXPECT_NEAR(s.ranges[0], kRangeMax, 1e-12);
}

TEST(Raycast, PanelFace) {
  Environment env = Environment::unbounded();
  env.panels.push_back({{3.0, 0.0}, {0.2, 2.0}, 0.0});
  const RawScan s = raycast(env, {0, 0});
  EXPECT_NEAR(s.ranges[0], 2.9, 1e-12);
}

TEST(Raycast, OccupiedOriginThrows) {
  Environment env = Environment::unbounded();
  env.pillars.push_back({{0, 0}, 1.0});
  EXPECT_THROW(raycast(env, {0.1, 0}), std::invalid_argument);
}

TEST(RaycastProperty, LipschitzInOrigin) {
  EnvironmentSpec spec;
  spec.pillars = 8;
  spec.seed = 3;
  const Environment env = sample_environment(spec);
  Rng rng(1);
  std::uniform_real_distribution<double> ux(0.5, 19.5), uy(0.5, 9.5), dir(0, 2 * kPi);
  int checked = 0;
  while (checked < 50) {
    const Eigen::Vector2d o(ux(rng), uy(rng));
    if (env.clearance(o) < 0.2) continue;
    const double a = dir(rng);
    const Eigen::Vector2d o2 = o + 1e-4 * Eigen::Vector2d(std::cos(a), std::sin(a));
    const RawScan s1 = raycast(env, o), s2 = raycast(env, o2);
    int jumps = 0;
    for (int k = 0; k < s1.n_rays(); ++k) {
      // Away from tangency a range moves at most |d o| / cos(incidence); allow
      // a few grazing rays.
      if (std::abs(s1.ranges[k] - s2.ranges[k]) > 1e-2) ++jumps;
    }
    EXPECT_LE(jumps, 2);
    ++checked;
  }
}

TEST(BinScan, ConstantScan) {
  RawScan raw{std::vector<double>(kDefaultRays, 4.0)};
  Rng rng(0);
  EXPECT_EQ(bin_scan(raw, 0.0, rng), constant_obs(4.0));
}

TEST(BinScan, MinSemantics) {
  RawScan raw{std::vector<double>(kDefaultRays, 4.0)};
  raw.ranges[5] = 1.0;
  Rng rng(0);
  const Observation o = bin_scan(raw, 0.0, rng);
  EXPECT_EQ(o(0), 1.0);
  for (int i = 1; i < kObsBins; ++i) EXPECT_EQ(o(i), 4.0);
}

TEST(BinScan, RejectsIndivisibleRayCount) {
  RawScan raw{std::vector<double>(100, 4.0)};
  Rng rng(0);
  EXPECT_THROW(bin_scan(raw, 0.0, rng), std::invalid_argument);
}

TEST(BinScan, NoiseBiasesMinimumLow) {
  RawScan raw{std::vector<double>(kDefaultRays, 2.0)};
  Rng rng(11);
  double mean = 0.0;
  const int n = 100000 / kObsBins;
  for (int i = 0; i < n; ++i) mean += bin_scan(raw, 0.02, rng).mean();
  mean /= n;
  EXPECT_LT(mean, 2.0);
  // E[min of 16 N(0,1)] ~ -1.766.
  EXPECT_NEAR(mean, 2.0 - 0.02 * 1.766, 2e-3);
}

TEST(BinScanProperty, NoiselessIsPure) {
  Rng rng(2);
  std::uniform_real_distribution<double> u(0.1, 4.0);
  RawScan raw;
  for (int k = 0; k < kDefaultRays; ++k) raw.ranges.push_back(u(rng));
  Rng a(1), b(99);
  EXPECT_EQ(bin_scan(raw, 0.0, a), bin_scan(raw, 0.0, b));
}

TEST(IsObstacle, Examples) {
  const Observation o = constant_obs(4.0);
  EXPECT_FALSE(is_obstacle(o, State(0, 0, 0, 0)));
  EXPECT_TRUE(is_obstacle(o, State(5, 0, 0, 0)));
  Observation o2 = constant_obs(4.0);
  o2(bin_of(0.0)) = 1.5;
  EXPECT_TRUE(is_obstacle(o2, State(2, 0, 0, 0)));
  EXPECT_FALSE(is_obstacle(o2, State(1, 0, 0, 0)));
  EXPECT_FALSE(is_obstacle(o2, State(1, 0, 9, 9)));
}

TEST(IsObstacleProperty, LabelFlipsAcrossReturn) {
  Rng rng(4);
  std::uniform_real_distribution<double> r(0.3, 4.0), a(0, 2 * kPi);
  for (int i = 0; i < 2000; ++i) {
    Observation o;
    for (int k = 0; k < kObsBins; ++k) o(k) = r(rng);
    const double th = a(rng);
    const double lim = std::min(o(bin_of(th)), kRangeMax);
    const Eigen::Vector2d d(std::cos(th), std::sin(th));
    EXPECT_FALSE(is_obstacle(o, State(d * (lim * 0.999), {0, 0})));
    EXPECT_TRUE(is_obstacle(o, State(d * (lim * 1.001), {0, 0})));
  }
}

TEST(BinOf, Wraps) {
  EXPECT_EQ(bin_of(0.0), 0);
  EXPECT_EQ(bin_of(2 * kPi - 1e-9), kObsBins - 1);
  EXPECT_EQ(bin_of(-1e-9), kObsBins - 1);
  EXPECT_EQ(bin_of(2 * kPi / kObsBins * 3.5), 3);
}

TEST(BoundarySample, FullRangeBinsGiveMaxRange) {
  Rng rng(0);
  for (int i = 0; i < 100; ++i) EXPECT_NEAR(boundary_sample(constant_obs(4.0), rng, 3.0).p.norm(), 4.0, 1e-12);
}

TEST(BoundarySample, LiesOnReturnAndFlipsLabel) {
  Observation o = constant_obs(4.0);
  o.setConstant(1.2);
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const State s = boundary_sample(o, rng, 3.0);
    EXPECT_NEAR(s.p.norm(), 1.2, 1e-12);
    EXPECT_LE(s.v.cwiseAbs().maxCoeff(), 3.0);
    const Eigen::Vector2d d = s.p.normalized();
    EXPECT_FALSE(is_obstacle(o, State(d * (1.2 - 1e-3), {0, 0})));
    EXPECT_TRUE(is_obstacle(o, State(d * (1.2 + 1e-3), {0, 0})));
  }
}

TEST(BoundarySample, Deterministic) {
  Observation o = constant_obs(2.0);
  Rng a(5), b(5);
  EXPECT_EQ(boundary_sample(o, a, 3.0).vec(), boundary_sample(o, b, 3.0).vec());
}

TEST(Collision, BoxAgainstGeometry) {
  Environment env;
  env.pillars.push_back({{10, 5}, 1.0});
  env.panels.push_back({{15, 5}, {0.2, 4.0}, 0.3});
  EXPECT_FALSE(env.box_collides({5, 5}, 0.26));
  EXPECT_TRUE(env.box_collides({0.2, 5}, 0.26));     // wall
  EXPECT_TRUE(env.box_collides({8.8, 5}, 0.26));     // pillar
  EXPECT_FALSE(env.box_collides({8.7, 5}, 0.26));
  EXPECT_TRUE(env.box_collides({15, 5}, 0.26));      // panel
  // Pillar touching only the box corner region.
  EXPECT_FALSE(env.box_collides({10 - 0.26 - 0.72, 5 - 0.26 - 0.72}, 0.26));
  EXPECT_NEAR(env.clearance({5, 5}), 4.0, 1e-12);  // pillar surface
}

TEST(Scene, RoundTrip) {
  Environment env;
  env.pillars.push_back({{3, 4}, 0.8});
  env.panels.push_back({{7, 2}, {0.2, 3.0}, 0.25});
  const auto path = (std::filesystem::temp_directory_path() / "obscbf_scene_test.json").string();
  save_scene(env, path);
  const Environment b = load_scene(path);
  EXPECT_EQ(b.extent, env.extent);
  ASSERT_EQ(b.pillars.size(), 1u);
  ASSERT_EQ(b.panels.size(), 1u);
  EXPECT_EQ(b.panels[0].yaw, 0.25);
  EXPECT_EQ(scene_to_json(b), scene_to_json(env));
  std::filesystem::remove(path);
}

TEST(Scene, RejectsWrongFormat) {
  nlohmann::json doc = scene_to_json(Environment());
  doc["format"] = 2;
  EXPECT_THROW(scene_from_json(doc), std::invalid_argument);
}
