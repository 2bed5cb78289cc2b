#include "arbiter/sim_user.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>

using namespace arbiter;

namespace {

double deg(double d) { return d * kPi / 180.0; }

SimUserParams noiseless(int goal) {
  SimUserParams p;
  p.goal = goal;
  p.noise_sigma = 0.0;
  return p;
}

}  // namespace

TEST(Command, StraightAimAtPreferredSpeed) {
  const auto world = WorldConfig::default_layout();
  const auto s = reset(world, 0);
  const auto p = noiseless(0);
  auto w2 = world;
  w2.goal_objects[0].center = {0.5, 0.8};
  std::mt19937_64 rng(1);
  const Action a = user_command(p, s, w2, std::nullopt, rng);
  EXPECT_NEAR(a.v.x(), 0.0, 1e-15);
  EXPECT_NEAR(a.v.y(), 0.35, 1e-15);
  EXPECT_EQ(a.role, ActionRole::User);
}

TEST(Command, BiasRotatesHeadingExactly) {
  const auto world = WorldConfig::default_layout();
  const auto s = reset(world, 0);
  auto p = noiseless(1);
  p.curvature_bias = deg(20);
  std::mt19937_64 rng(1);
  const Action a = user_command(p, s, world, std::nullopt, rng);
  const Vec2 los = world.goal_objects[1].center - s.gripper_pos;
  const double ang = std::atan2(los.x() * a.v.y() - los.y() * a.v.x(), los.dot(a.v));
  EXPECT_NEAR(ang, deg(20), 1e-12);
}

TEST(Command, ArrivalBraking) {
  const auto world = WorldConfig::default_layout();
  auto s = reset(world, 0);
  s.gripper_pos = world.goal_objects[2].center - Vec2{0.01, 0.0};
  std::mt19937_64 rng(1);
  const Action a = user_command(noiseless(2), s, world, std::nullopt, rng);
  EXPECT_NEAR(a.v.norm(), 0.01 / world.dt, 1e-12);
  EXPECT_LT(a.v.norm(), 0.35);
}

TEST(Command, CompliancePullsTowardExecutedDirection) {
  const auto world = WorldConfig::default_layout();
  auto w = world;
  w.goal_objects[0].center = {0.5, 0.8};
  const auto s = reset(w, 0);
  auto p = noiseless(0);
  p.compliance = 0.5;
  std::mt19937_64 rng(1);
  const Action a = user_command(p, s, w, Vec2{0.3, 0.0}, rng);
  EXPECT_NEAR(std::atan2(a.v.y(), a.v.x()), deg(45), 1e-12);
  p.compliance = 0.0;
  const Action b = user_command(p, s, w, Vec2{0.3, 0.0}, rng);
  EXPECT_NEAR(std::atan2(b.v.y(), b.v.x()), deg(90), 1e-12);
}

TEST(Command, DrawsExactlyOneNormalPerCall) {
  const auto world = WorldConfig::default_layout();
  auto s = reset(world, 0);
  SimUserParams p;
  std::mt19937_64 a(9), b(9);
  user_command(p, s, world, std::nullopt, a);
  std::normal_distribution<double> n01;
  n01(b);
  EXPECT_EQ(a(), b());
  // Also when already at the subgoal.
  s.gripper_pos = world.goal_objects[0].center;
  std::mt19937_64 c(4), d(4);
  EXPECT_EQ(user_command(p, s, world, std::nullopt, c).v, Vec2::Zero());
  n01.reset();
  n01(d);
  EXPECT_EQ(c(), d());
}

TEST(Command, MagnitudeNeverExceedsPreference) {
  const auto world = WorldConfig::obstacle_layout(2);
  UserPopulation pop;
  pop.noise_sigma = deg(40);
  pop.curvature_bias = deg(15);
  pop.random_bias_sign = true;
  pop.compliance = 0.3;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ep = run_direct_episode(pop.sample(seed, 4), world, seed);
    for (const auto& r : ep.steps) EXPECT_LE(r.a_u.norm(), pop.v_pref + 1e-15);
  }
}

TEST(Params, Validation) {
  SimUserParams p;
  EXPECT_NO_THROW(p.validate(0.4));
  p.v_pref = 0.5;
  EXPECT_THROW(p.validate(0.4), ConfigError);
  p = {};
  p.compliance = 1.5;
  EXPECT_THROW(p.validate(0.4), ConfigError);
  p = {};
  p.noise_sigma = -0.1;
  EXPECT_THROW(p.validate(0.4), ConfigError);
}

TEST(Population, SamplesGoalsAndBiasSignsDeterministically) {
  UserPopulation pop;
  pop.curvature_bias = 0.2;
  pop.random_bias_sign = true;
  std::array<int, 4> goals{};
  int negative = 0;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    const auto p = pop.sample(seed, 4);
    EXPECT_EQ(p.goal, pop.sample(seed, 4).goal);
    ++goals[static_cast<std::size_t>(p.goal)];
    if (p.curvature_bias < 0) ++negative;
    EXPECT_EQ(std::abs(p.curvature_bias), 0.2);
  }
  for (int g : goals) EXPECT_GT(g, 60);
  EXPECT_GT(negative, 150);
  EXPECT_LT(negative, 250);
  const auto back = user_population_from_json(to_json(pop));
  EXPECT_EQ(back.random_bias_sign, true);
  EXPECT_EQ(back.curvature_bias, 0.2);
}

TEST(DirectEpisode, NoiselessUserSucceedsNearGeometricBound) {
  const auto world = WorldConfig::default_layout();
  for (int g = 0; g < world.num_goals(); ++g) {
    const auto ep = run_direct_episode(noiseless(g), world, 3);
    ASSERT_TRUE(ep.success());
    const double path = (world.goal_objects[g].center - world.gripper_start).norm() +
                        (world.place_target.center - world.goal_objects[g].center).norm();
    EXPECT_LE(ep.header.steps, static_cast<int>(std::ceil(path / (0.35 * world.dt))) + 10);
    EXPECT_EQ(ep.header.true_goal, g);
    EXPECT_EQ(ep.header.mode, ControlMode::Direct);
    for (const auto& r : ep.steps) {
      EXPECT_EQ(r.a_s, r.a_u);
      EXPECT_EQ(r.alpha, 0.0);
    }
  }
}

TEST(DirectEpisode, SameSeedSameLog) {
  const auto world = WorldConfig::obstacle_layout(2);
  SimUserParams p;
  p.goal = 2;
  p.curvature_bias = 0.2;
  EXPECT_EQ(to_jsonl(run_direct_episode(p, world, 8, 1)), to_jsonl(run_direct_episode(p, world, 8, 1)));
  EXPECT_NE(to_jsonl(run_direct_episode(p, world, 9, 1)), to_jsonl(run_direct_episode(p, world, 8, 1)));
}

TEST(DirectEpisode, PathologicalNoiseLowersSuccessRate) {
  // Budget: twice the noiseless completion time of the farthest goal.
  auto world = WorldConfig::default_layout();
  int worst = 0;
  for (int g = 0; g < 4; ++g) worst = std::max(worst, run_direct_episode(noiseless(g), world, 0).header.steps);
  world.max_steps = 2 * worst;
  UserPopulation calm, wild;
  calm.noise_sigma = 0.0;
  wild.noise_sigma = deg(60);
  int calm_ok = 0, wild_ok = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    calm_ok += run_direct_episode(calm.sample(seed, 4), world, seed).success();
    wild_ok += run_direct_episode(wild.sample(seed, 4), world, seed).success();
  }
  EXPECT_EQ(calm_ok, 100);
  EXPECT_LT(wild_ok, calm_ok);
}

TEST(Seeds, UserSeedIsDistinctFromEpisodeSeed) {
  EXPECT_NE(user_seed(0), 0u);
  EXPECT_NE(user_seed(1), user_seed(2));
}
