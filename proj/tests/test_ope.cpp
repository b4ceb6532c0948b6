#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "opere/ope.hpp"
#include "test_support.hpp"

using namespace opere;
using opere::testing::ChainMdp;
using opere::testing::one_hot_obs;
using opere::testing::sample_chain;
using opere::testing::tabular_arch;

namespace {

PolicyProbs constant_policy(double p1) {
  return [p1](const Observation&) { return std::vector<double>{1.0 - p1, p1}; };
}

double fqe_state_value(const ValueNet& q, int s, double p1) {
  return fqe_value(q, one_hot_obs(3, s), {1.0 - p1, p1});
}

OpeConfig fast_fqe() {
  OpeConfig cfg;
  cfg.fqe_lr = 0.01;
  cfg.fqe_epochs = 100;
  cfg.fqe_sync = 50;
  return cfg;
}

OpeConfig fast_dice() {
  OpeConfig cfg;
  cfg.dice_lr = 0.01;
  cfg.dice_epochs = 100;
  return cfg;
}

}  // namespace

TEST(PerDecisionIs, HandExample) {
  EXPECT_EQ(per_decision_is_returns({1, 2}, {2, 0.5}, 1.0, 10.0), (std::vector<double>{4, 1}));
}

TEST(PerDecisionIs, CumulativeRatiosAreClipped) {
  // 20 clips to 10; 0.01 clips to 0.1
  const auto high = per_decision_is_returns({1, 1}, {20, 1}, 1.0, 10.0);
  EXPECT_NEAR(high[0], 20.0, 1e-12);
  EXPECT_NEAR(high[1], 1.0, 1e-15);
  const auto low = per_decision_is_returns({1}, {0.01}, 1.0, 10.0);
  EXPECT_NEAR(low[0], 0.1, 1e-15);
}

TEST(PerDecisionIs, UnitClipGivesMonteCarloReturns) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.05, 5.0);
  std::vector<double> r(30), rho(30);
  for (double& x : r) x = u(rng);
  for (double& x : rho) x = u(rng);
  const auto got = per_decision_is_returns(r, rho, 0.95, 1.0);
  const auto want = compute_returns(r, 0.95);
  for (std::size_t t = 0; t < r.size(); ++t) EXPECT_NEAR(got[t], want[t], 1e-9);
}

TEST(PerDecisionIs, RejectsBadInputs) {
  EXPECT_THROW(per_decision_is_returns({1, 2}, {1}, 1.0, 10.0), std::invalid_argument);
  EXPECT_THROW(per_decision_is_returns({}, {}, 1.0, 10.0), std::invalid_argument);
  EXPECT_THROW(per_decision_is_returns({1}, {0.0}, 1.0, 10.0), std::invalid_argument);
  EXPECT_THROW(per_decision_is_returns({1}, {1.0}, 1.0, 0.5), std::invalid_argument);
}

TEST(PerDecisionIs, BanditEstimateIsUnbiased) {
  // behaviour uniform over two arms, target plays arm 1 with 0.8, reward = arm
  std::mt19937_64 rng(11);
  std::bernoulli_distribution coin(0.5);
  const int n = 4000;
  double sum = 0.0;
  double sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const int a = coin(rng) ? 1 : 0;
    const double rho = (a == 1 ? 0.8 : 0.2) / 0.5;
    const double g = per_decision_is_returns({static_cast<double>(a)}, {rho}, 1.0, 10.0)[0];
    sum += g;
    sq += g * g;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  EXPECT_NEAR(mean, 0.8, 3 * se);
}

TEST(BehaviorCloning, LearnsActionFrequencies) {
  const ChainMdp mdp;
  const auto data = sample_chain(mdp, 0.8, 300, 5);
  OpeConfig cfg;
  cfg.bc_lr = 0.01;
  const BcPolicy pol = fit_behavior_cloning(data, tabular_arch(3, 2), cfg, 1);
  EXPECT_FALSE(pol.degenerate);
  for (int s = 0; s < 3; ++s) EXPECT_NEAR(pol.probs(one_hot_obs(3, s))[1], 0.8, 0.1);

  auto same = sample_chain(mdp, 1.0, 5, 1);
  EXPECT_TRUE(fit_behavior_cloning(same, tabular_arch(3, 2), cfg, 1).degenerate);
  same[0].steps[0].action = 5;
  EXPECT_THROW(fit_behavior_cloning(same, tabular_arch(3, 2), cfg, 1), std::invalid_argument);
}

TEST(ImportanceSampling, IdenticalPoliciesReduceToMonteCarlo) {
  const ChainMdp mdp;
  const auto data = sample_chain(mdp, 0.5, 20, 8);
  TrainConfig train;
  train.n_v = 1;
  train.epochs = 5;
  train.eta = 1e-3;
  OpeConfig cfg;
  cfg.seed = 3;
  const IsResult res = is_estimate(data, data, tabular_arch(3), 2.0, train, cfg);
  ValueEnsemble mc = ValueEnsemble::create(tabular_arch(3), 1, cfg.seed * 31 + 2, 2.0);
  mc_pretrain(mc, data, train);
  EXPECT_EQ(res.value, mc);
}

TEST(FittedQ, OnPolicyMatchesDynamicProgramming) {
  const ChainMdp mdp;
  const auto data = sample_chain(mdp, 0.5, 200, 4);
  const FqeResult res = fqe_train(transitions_of(data), constant_policy(0.5), tabular_arch(3, 2), 1.0, 1.0, fast_fqe());
  const auto dp = mdp.dp_values(0.5);
  for (int s = 0; s < 3; ++s) EXPECT_NEAR(fqe_state_value(res.q, s, 0.5), dp[static_cast<std::size_t>(s)], 0.1) << s;
}

TEST(FittedQ, OffPolicyMatchesTargetDynamicProgramming) {
  const ChainMdp mdp;
  const auto data = sample_chain(mdp, 0.5, 200, 4);
  const FqeResult res = fqe_train(transitions_of(data), constant_policy(0.8), tabular_arch(3, 2), 1.0, 1.0, fast_fqe());
  const auto dp = mdp.dp_values(0.8);
  for (int s = 0; s < 3; ++s) EXPECT_NEAR(fqe_state_value(res.q, s, 0.8), dp[static_cast<std::size_t>(s)], 0.1) << s;
}

TEST(FittedQ, SyncPeriodDoesNotChangeTheFixedPoint) {
  const ChainMdp mdp;
  const auto data = sample_chain(mdp, 0.5, 200, 6);
  const auto dp = mdp.dp_values(0.5);
  for (int sync : {1, 100}) {
    OpeConfig cfg = fast_fqe();
    cfg.fqe_sync = sync;
    const FqeResult res = fqe_train(transitions_of(data), constant_policy(0.5), tabular_arch(3, 2), 1.0, 1.0, cfg);
    for (int s = 0; s < 3; ++s) EXPECT_NEAR(fqe_state_value(res.q, s, 0.5), dp[static_cast<std::size_t>(s)], 0.1);
  }
}

TEST(FittedQ, ZeroDiscountLearnsImmediateReward) {
  const ChainMdp mdp;
  const auto data = sample_chain(mdp, 0.5, 200, 7);
  const FqeResult res = fqe_train(transitions_of(data), constant_policy(0.5), tabular_arch(3, 2), 1.0, 0.0, fast_fqe());
  for (int s = 0; s < 3; ++s) EXPECT_NEAR(fqe_state_value(res.q, s, 0.5), mdp.base[static_cast<std::size_t>(s)], 0.1);
}

TEST(FittedQ, DivergenceIsReported) {
  const ChainMdp mdp;
  const auto data = sample_chain(mdp, 0.5, 5, 7);
  OpeConfig cfg = fast_fqe();
  cfg.divergence = 1e-6;
  EXPECT_THROW(fqe_train(transitions_of(data), constant_policy(0.5), tabular_arch(3, 2), 1.0, 1.0, cfg), Diverged);
  EXPECT_THROW(fqe_train({}, constant_policy(0.5), tabular_arch(3, 2), 1.0, 1.0, cfg), EmptyDataset);
}

TEST(Dice, OnPolicyRatiosStayNearOne) {
  const ChainMdp mdp;
  const auto data = sample_chain(mdp, 0.5, 100, 9);
  const DiceResult res = dice_train(transitions_of(data), constant_policy(0.5), tabular_arch(3, 2), 1.0, fast_dice());
  double mean = 0.0;
  for (double z : res.ratios) {
    EXPECT_NEAR(z, 1.0, 0.2);
    mean += z / static_cast<double>(res.ratios.size());
  }
  EXPECT_NEAR(mean, 1.0, 0.1);
}

TEST(Dice, ZeroRewardsEstimateZero) {
  ChainMdp mdp;
  mdp.base = {0.0, 0.0, 0.0};
  mdp.spread = 0.0;
  const auto data = sample_chain(mdp, 0.5, 20, 2);
  EXPECT_EQ(dice_train(transitions_of(data), constant_policy(0.9), tabular_arch(3, 2), 1.0, fast_dice()).estimate, 0.0);
}

TEST(Dice, CorrectsForActionShift) {
  // reward = action; uniform behaviour, target plays action 1 with 0.9, so
  // the average per-step reward under the target is 0.9 against 0.5 logged
  ChainMdp mdp;
  mdp.base = {0.5, 0.5, 0.5};
  mdp.spread = 0.5;
  const auto data = sample_chain(mdp, 0.5, 200, 12);
  const DiceResult res = dice_train(transitions_of(data), constant_policy(0.9), tabular_arch(3, 2), 1.0, fast_dice());
  EXPECT_NEAR(res.estimate, 0.9, 0.15);
}
