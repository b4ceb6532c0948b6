#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "opere/policies.hpp"
#include "opere/reward.hpp"
#include "opere/sim.hpp"
#include "opere/world.hpp"

using namespace opere;

namespace {

std::vector<double> forward_sums(const std::vector<double>& r, double gamma) {
  std::vector<double> out;
  for (std::size_t t = 0; t < r.size(); ++t) {
    double g = 0.0;
    double w = 1.0;
    for (std::size_t i = t; i < r.size(); ++i) {
      g += w * r[i];
      w *= gamma;
    }
    out.push_back(g);
  }
  return out;
}

}  // namespace

TEST(Reward, WeightedGainArithmetic) {
  const RewardWeights w{1.0, 0.5, 10.0, 1};
  EXPECT_DOUBLE_EQ(compute_reward({30, 14, 2}, {20, 10, 2}, w), 12.0);
  EXPECT_DOUBLE_EQ(compute_reward({7, 7, 1}, {7, 7, 1}, w), 0.0);
  EXPECT_DOUBLE_EQ(compute_reward({30, 14, 3}, {20, 10, 2}, w) - compute_reward({30, 14, 2}, {20, 10, 2}, w), 10.0);
}

TEST(Reward, DecreasingCounterIsASimulatorBug) {
  const RewardWeights w;
  EXPECT_THROW(compute_reward({5, 5, 0}, {6, 5, 0}, w), NegativeGainError);
  EXPECT_THROW(compute_reward({6, 4, 0}, {6, 5, 0}, w), NegativeGainError);
  EXPECT_THROW(compute_reward({6, 5, 0}, {6, 5, 1}, w), NegativeGainError);
  // the frontier-count variant of L may shrink
  EXPECT_DOUBLE_EQ(compute_reward({6, 4, 0}, {6, 5, 0}, w, true), -0.5);
}

TEST(Reward, WeightsAreValidated) {
  EXPECT_THROW(validate(RewardWeights{-1.0, 0.5, 10.0, 1}), std::invalid_argument);
  EXPECT_THROW(validate(RewardWeights{1.0, 0.5, 10.0, 0}), std::invalid_argument);
}

TEST(Returns, WorkedExamples) {
  EXPECT_EQ(compute_returns({1, 1, 1}, 1.0), (std::vector<double>{3, 2, 1}));
  EXPECT_EQ(compute_returns({1, 2, 4}, 0.5), (std::vector<double>{3, 4, 4}));
  EXPECT_EQ(compute_returns({0, 0, 0, 0}, 0.9), (std::vector<double>{0, 0, 0, 0}));
  EXPECT_THROW(compute_returns({}, 1.0), std::invalid_argument);
  EXPECT_THROW(compute_returns({1.0}, 1.5), std::invalid_argument);
}

TEST(Returns, BackwardRecursionMatchesForwardSums) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  std::uniform_int_distribution<int> len(1, 200);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> r(static_cast<std::size_t>(len(rng)));
    for (double& x : r) x = u(rng);
    const double gamma = trial % 3 == 0 ? 1.0 : std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto got = compute_returns(r, gamma);
    const auto want = forward_sums(r, gamma);
    for (std::size_t t = 0; t < r.size(); ++t) EXPECT_LE(std::abs(got[t] - want[t]), 1e-9 * std::max(1.0, std::abs(want[t])));
  }
}

TEST(ExplorationFraction, RatioOfSeenToFree) {
  std::string text;
  for (int r = 0; r < 12; ++r) {
    for (int c = 0; c < 12; ++c) text += (r == 0 || c == 0 || r == 11 || c == 11) ? '#' : '.';
    text += '\n';
  }
  const WorldMap world = parse_world_text(text);
  ASSERT_EQ(world.free_cell_count, 100);
  ExplorationState s = blank_state(world, {{5, 5}, Heading::East});
  EXPECT_DOUBLE_EQ(exploration_fraction(s, world), 0.0);
  for (int i = 0; i < 36; ++i) s.camera_map[Cell{1 + i / 10, 1 + i % 10}] = 1;
  s.seen_count = 36;
  EXPECT_DOUBLE_EQ(exploration_fraction(s, world), 0.36);
}

TEST(ExplorationFraction, FullCircleSweepOfConvexRoomIsComplete) {
  std::string text;
  for (int r = 0; r < 9; ++r) {
    for (int c = 0; c < 9; ++c) text += (r == 0 || c == 0 || r == 8 || c == 8) ? '#' : '.';
    text += '\n';
  }
  const WorldMap world = parse_world_text(text);
  SensorConfig sc;
  sc.camera_fov_deg = 360.0;
  sc.camera_range = 8;
  const SensorModel sensors(sc);
  ExplorationState s = blank_state(world, {{4, 4}, Heading::East});
  scan(world, sensors, s);
  EXPECT_DOUBLE_EQ(exploration_fraction(s, world), 1.0);
}

TEST(RewardTrace, TelescopesToTotalCounterGain) {
  const EpisodeSetup setup{};
  for (EnvKind k : kAllEnvKinds) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const WorldMap world = generate_world({k, 32, 32, 4}, seed);
      const EpisodeResult res = run_episode(world, PolicyKind::Frontier, setup, seed);
      const auto& recs = res.trace.records();
      ASSERT_EQ(recs.size(), res.trajectory.steps.size() + 1);
      const CoverageCounts& first = recs.front().counts;
      const CoverageCounts& last = recs.back().counts;
      const double want = setup.weights.a * (last.camera - first.camera) + setup.weights.b * (last.lidar - first.lidar) +
                          setup.weights.c * (last.objects - first.objects);
      const double g0 = compute_returns(res.trajectory.rewards(), 1.0).front();
      EXPECT_LE(std::abs(g0 - want), 1e-9 * std::max(1.0, std::abs(want)));
      for (double r : res.trajectory.rewards()) EXPECT_GE(r, 0.0);
    }
  }
}

TEST(RewardTrace, GainsSpanDtSteps) {
  RewardTrace trace({1.0, 0.5, 10.0, 2}, LidarGainMode::KnownCells);
  trace.start({0, 0, 0});
  EXPECT_DOUBLE_EQ(trace.push({2, 2, 0}), 3.0);   // against record 0 (fewer than dt records)
  EXPECT_DOUBLE_EQ(trace.push({5, 2, 0}), 6.0);   // against record 0
  EXPECT_DOUBLE_EQ(trace.push({6, 4, 1}), 4.0 + 1.0 + 10.0);  // against record 1
  std::ostringstream os;
  trace.write_csv(os);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "t,C,L,O,CG,LG,OG,R");
  EXPECT_THROW(RewardTrace().push({1, 1, 1}), std::logic_error);
}
