#include <gtest/gtest.h>

#include <imitdrive/reward.hpp>

using namespace imitdrive;

namespace {

ExpertProfile flat_profile(double d, double v) {
  ExpertProfile p;
  p.lap_length = 100.0;
  p.mean_lateral = {{0.0, 50.0, 100.0}, {d, d, d}};
  p.mean_speed = {{0.0, 50.0, 100.0}, {v, v, v}};
  return p;
}

}  // namespace

TEST(Reward, MaximumIsMeanSpeed) {
  const ExpertProfile p = flat_profile(3.0, 80.0);
  RewardInput in;
  in.sigma = 20.0;
  in.speed_kmh = 80.0;
  in.lateral = 3.0;
  in.steer = in.prev_steer = 0.3;
  in.torque = in.prev_torque = -0.2;
  EXPECT_EQ(deterministic_reward(in, p, {}), 80.0);
}

TEST(Reward, TerminationPenalty) {
  const ExpertProfile p = flat_profile(3.0, 80.0);
  for (auto k : {TerminationKind::obstacle_collision, TerminationKind::off_road, TerminationKind::too_slow,
                 TerminationKind::wrong_way}) {
    RewardInput in;
    in.termination = k;
    in.speed_kmh = 80.0;
    EXPECT_EQ(deterministic_reward(in, p, {}), -100.0);
  }
}

TEST(Reward, CompositeExample) {
  const ExpertProfile p = flat_profile(3.0, 80.0);
  RewardInput in;
  in.speed_kmh = 90.0;
  in.lateral = 2.0;
  in.steer = 0.3;
  in.prev_steer = 0.2;
  in.torque = 0.05;
  in.prev_torque = 0.0;
  EXPECT_NEAR(deterministic_reward(in, p, {}), 39.5, 1e-12);
}

TEST(Reward, DoubleSpeedGivesZeroSpeedTerm) {
  RewardInput in;
  in.speed_kmh = 160.0;
  in.lateral = 3.0;
  EXPECT_EQ(reward_from_targets(80.0, 3.0, in, {}), 0.0);
}

TEST(Reward, StochasticReducesToDeterministicWhenSampleIsMean) {
  ExpertProfile p = flat_profile(3.0, 80.0);
  p.lateral_bank = {p.mean_lateral, {{0.0, 100.0}, {-3.0, -3.0}}};
  p.speed_bank = {p.mean_speed, {{0.0, 100.0}, {50.0, 50.0}}};
  p.active = 0;
  RewardInput in;
  in.sigma = 33.0;
  in.speed_kmh = 70.0;
  in.lateral = 1.5;
  in.steer = 0.1;
  in.torque = 0.4;
  in.prev_torque = 0.1;
  EXPECT_EQ(stochastic_reward(in, p, {}), deterministic_reward(in, p, {}));
  p.active = 1;
  // 50 - 20 - 20*4.5 - 100*0.1 - 10*0.3
  EXPECT_NEAR(stochastic_reward(in, p, {}), 50.0 - 20.0 - 90.0 - 10.0 - 3.0, 1e-12);
  RewardConfig cfg;
  cfg.mode = RewardMode::stochastic;
  EXPECT_EQ(reward(in, p, cfg), stochastic_reward(in, p, cfg));
}

TEST(Reward, StochasticNeedsBank) {
  ExpertProfile p = flat_profile(3.0, 80.0);
  EXPECT_THROW(stochastic_reward({}, p, {}), ValidationError);
  p.lateral_bank = {p.mean_lateral};
  p.speed_bank = {p.mean_speed};
  p.active = 3;
  EXPECT_THROW(stochastic_reward({}, p, {}), ValidationError);
}

TEST(Reward, NonFiniteInputRejected) {
  RewardInput in;
  in.speed_kmh = std::nan("");
  EXPECT_THROW(reward_from_targets(80.0, 3.0, in, {}), NumericalError);
}

TEST(Lookup, InterpolatesAndWraps) {
  const GridSeries s{{0.0, 10.0, 20.0}, {0.0, 10.0, 0.0}};
  EXPECT_EQ(lookup(s, 20.0, 0.0), 0.0);
  EXPECT_EQ(lookup(s, 20.0, 10.0), 10.0);
  EXPECT_NEAR(lookup(s, 20.0, 2.5), 2.5, 1e-12);
  EXPECT_NEAR(lookup(s, 20.0, 15.0), 5.0, 1e-12);
  // Arc-length beyond the lap wraps.
  EXPECT_NEAR(lookup(s, 20.0, 22.5), 2.5, 1e-12);
  EXPECT_NEAR(lookup(s, 20.0, -5.0), 5.0, 1e-12);
  EXPECT_THROW(lookup(GridSeries{}, 20.0, 1.0), ValidationError);
}

TEST(ExpertProfile, DrawActiveCoversBank) {
  ExpertProfile p = flat_profile(3.0, 80.0);
  p.lateral_bank.assign(5, p.mean_lateral);
  p.speed_bank.assign(5, p.mean_speed);
  std::mt19937_64 rng(1);
  std::vector<int> seen(5, 0);
  for (int i = 0; i < 500; ++i) {
    p.draw_active(rng);
    ASSERT_GE(p.active, 0);
    ASSERT_LT(p.active, 5);
    ++seen[static_cast<std::size_t>(p.active)];
  }
  for (int c : seen) EXPECT_GT(c, 50);
}
