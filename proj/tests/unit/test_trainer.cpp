#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <ostream>

#include "vmpo/errors.hpp"
#include "vmpo/numeric.hpp"
#include "vmpo/trainer.hpp"

namespace vmpo {
inline void PrintTo(ObjectiveKind kind, std::ostream* os) { *os << to_string(kind); }
}  // namespace vmpo

using namespace vmpo;

namespace {

TrainConfig tabular_config(ObjectiveKind kind, std::size_t epochs) {
  TrainConfig c;
  c.objective.kind = kind;
  c.epochs = epochs;
  return c;
}

double max_row_tv(const TabularPolicy& policy, const std::vector<Matrix>& target) {
  double worst = 0.0;
  for (std::size_t t = 1; t <= policy.steps(); ++t)
    for (std::size_t x = 0; x < policy.num_states(); ++x)
      worst = std::max(worst, total_variation(policy.kernel_row(t, x), target[t - 1].row(x)));
  return worst;
}

}  // namespace

TEST(Rollout, DeterministicKernelsGiveUniqueTrajectory) {
  Matrix k1(2, 2), k2(2, 2);
  k1(0, 1) = k1(1, 1) = 1.0;
  k2(0, 0) = k2(1, 0) = 1.0;
  const TabularChain chain({k1, k2}, {0.0, 1.0}, {0.2, 0.9});
  const auto policy = TabularPolicy::from_reference(chain);
  RngStream rng(1, 0);
  const auto batch = rollout(chain, policy, 3, rng);
  for (const auto& tr : batch.trajectories()) {
    EXPECT_EQ(tr.indices, (std::vector<std::size_t>{1, 0, 1}));
    for (double lp : tr.logp_policy) EXPECT_EQ(lp, 0.0);
    for (double lp : tr.logp_ref) EXPECT_EQ(lp, 0.0);
    EXPECT_EQ(tr.terminal_reward(), 0.9);
  }
}

TEST(Rollout, ShapesForBothModels) {
  const auto chain = make_standard_tabular_chain(4, 3);
  RngStream rng(2, 0);
  const auto batch = rollout(chain, TabularPolicy::from_reference(chain), 6, rng);
  ASSERT_EQ(batch.group_size(), 6u);
  for (const auto& tr : batch.trajectories()) {
    EXPECT_EQ(tr.indices.size(), 4u);
    EXPECT_EQ(tr.rewards.size(), 4u);
    EXPECT_EQ(tr.logp_policy, tr.logp_old);
  }
  const auto g = make_mixture_toy_chain(2, 5, 0.3);
  RngStream init(2, 1);
  const GaussianPolicy policy(g, {}, init);
  const auto gb = rollout(g, policy, 4, rng);
  ASSERT_EQ(gb.group_size(), 4u);
  for (const auto& tr : gb.trajectories()) {
    EXPECT_EQ(tr.points.size(), 6u);
    for (const auto& p : tr.points) EXPECT_EQ(p.size(), 2u);
    EXPECT_EQ(tr.rewards.back(), 0.0);
    EXPECT_EQ(tr.terminal_reward(), g.reward().value(tr.points[0]));
    for (std::size_t t = 0; t < 5; ++t) EXPECT_NEAR(tr.logp_policy[t], tr.logp_ref[t], 1e-12);
  }
}

TEST(Rollout, TerminalMarginalMatchesExact) {
  const auto chain = make_standard_tabular_chain(3, 3);
  const auto exact = state_marginals(chain, reference_kernels(chain))[0];
  const auto policy = TabularPolicy::from_reference(chain);
  RngStream rng(3, 0);
  std::vector<double> freq(3, 0.0);
  const int n = 10000;
  for (int i = 0; i < n / 10; ++i) {
    const auto batch = rollout(chain, policy, 10, rng);
    for (const auto& tr : batch.trajectories()) freq[tr.indices[0]] += 1.0 / n;
  }
  for (std::size_t x = 0; x < 3; ++x) EXPECT_NEAR(freq[x], exact[x], 0.02);
}

TEST(Rollout, LogProbGradientMatchesFiniteDifferences) {
  const auto chain = make_standard_tabular_chain(3, 2);
  RngStream rng(4, 0);
  TabularPolicy policy(3, 2);
  for (double& p : policy.params()) p = rng.normal();
  const auto tr = sample_trajectory(chain, policy, {}, rng);
  const Vec d{0.7, -1.3};
  Vec g(policy.num_params(), 0.0);
  accumulate_logp_grad(policy, tr, d, g);
  for (std::size_t k = 0; k < g.size(); ++k) {
    auto eval = [&](double h) {
      TabularPolicy p = policy;
      p.params()[k] += h;
      Trajectory c = tr;
      refresh_log_probs(p, c);
      return d[0] * c.logp_policy[0] + d[1] * c.logp_policy[1];
    };
    EXPECT_NEAR(g[k], (eval(1e-5) - eval(-1e-5)) / 2e-5, 1e-8);
  }
}

TEST(AdaptiveStep, ZeroGradientLeavesParams) {
  Vec p{1.0, -2.0, 3.0};
  const Vec g(3, 0.0);
  AdamState s;
  for (int i = 0; i < 5; ++i) adaptive_step(p, g, s, 0.1);
  EXPECT_EQ(p, (Vec{1.0, -2.0, 3.0}));
}

TEST(AdaptiveStep, ConstantGradientStepApproachesLearningRate) {
  Vec p{0.0, 0.0};
  const Vec g{0.3, -0.2};
  AdamState s;
  const double lr = 1e-3;
  Vec before;
  for (int i = 0; i < 200; ++i) {
    before = p;
    adaptive_step(p, g, s, lr);
  }
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(std::abs(p[i] - before[i]), lr, 0.05 * lr);
}

TEST(AdaptiveStep, ClipsToUnitNorm) {
  Vec p(4, 0.0);
  const Vec g{6.0, 8.0, 0.0, 0.0};
  AdamState s;
  EXPECT_NEAR(adaptive_step(p, g, s, 0.1), 1.0, 1e-12);
  EXPECT_NEAR(std::sqrt(s.m[0] * s.m[0] + s.m[1] * s.m[1]) / 0.1, 1.0, 1e-12);
  Vec q(2, 0.0);
  AdamState s2;
  EXPECT_NEAR(adaptive_step(q, Vec{0.3, 0.4}, s2, 0.1), 0.5, 1e-15);
}

TEST(AdaptiveStep, WeightDecayIsDecoupled) {
  Vec p{2.0};
  AdamState s;
  AdamOptions o;
  o.weight_decay = 0.5;
  adaptive_step(p, Vec{0.0}, s, 0.1, o);
  EXPECT_NEAR(p[0], 2.0 * (1.0 - 0.1 * 0.5), 1e-15);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.group_size = 1;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.rollouts_per_epoch = 60;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.objective.kind = ObjectiveKind::GradMatching;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.model = ModelKind::Gaussian;
  EXPECT_NO_THROW(c.validate());
}

TEST(Train, Deterministic) {
  for (auto model : {ModelKind::Tabular, ModelKind::Gaussian}) {
    TrainConfig c = tabular_config(ObjectiveKind::VmpoAmortised, 5);
    c.model = model;
    c.seed = 11;
    EXPECT_EQ(train(c), train(c));
  }
}

TEST(Train, ZeroLearningRateKeepsMetricsConstant) {
  TrainConfig c = tabular_config(ObjectiveKind::VmpoAmortised, 6);
  c.lr_theta = 0.0;
  c.lr_phi = 0.0;
  const auto rows = train(c);
  ASSERT_EQ(rows.size(), 6u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.kl_to_ref, rows[0].kl_to_ref);
    EXPECT_EQ(r.tv_to_tilt, rows[0].tv_to_tilt);
  }
}

TEST(Train, EvalCadence) {
  TrainConfig c = tabular_config(ObjectiveKind::VmpoMc, 10);
  c.eval_every = 4;
  const auto rows = train(c);
  std::vector<std::size_t> epochs;
  for (const auto& r : rows) epochs.push_back(r.epoch);
  EXPECT_EQ(epochs, (std::vector<std::size_t>{0, 4, 8, 9}));
}

TEST(Train, HugeBetaStaysAtReference) {
  TrainConfig c = tabular_config(ObjectiveKind::VmpoAmortised, 200);
  c.objective.beta = 1e6;
  Trainer trainer(c);
  trainer.run();
  const auto& chain = *trainer.tabular_chain();
  EXPECT_LT(max_row_tv(*trainer.tabular_policy(), reference_kernels(chain)), 0.01);
}

TEST(Train, ConvergesToTiltAndKlBudget) {
  TrainConfig c = tabular_config(ObjectiveKind::VmpoAmortised, 2000);
  c.eval_every = 100;
  Trainer trainer(c);
  const auto rows = trainer.run();
  const auto& chain = *trainer.tabular_chain();
  const auto target = soft_value_tilted_kernels(chain, c.objective.beta);
  EXPECT_LT(max_row_tv(*trainer.tabular_policy(), target), 1e-3);
  double kl_tilt = 0.0;
  for (std::size_t t = 1; t <= chain.steps(); ++t)
    for (std::size_t x = 0; x < chain.num_states(); ++x)
      kl_tilt += exact_kl(target[t - 1].row(x), chain.ref_kernel(t).row(x));
  for (const auto& r : rows) EXPECT_TRUE(std::isfinite(r.kl_to_ref));
  EXPECT_NEAR(rows.back().kl_to_ref, kl_tilt, 0.1 * kl_tilt);
}

class RewardTrend : public ::testing::TestWithParam<ObjectiveKind> {};

TEST_P(RewardTrend, SmoothedRewardDoesNotDecrease) {
  TrainConfig c = tabular_config(GetParam(), 300);
  const auto rows = train(c);
  std::vector<double> blocks;
  for (std::size_t b = 0; b + 50 <= rows.size(); b += 50) {
    double s = 0.0;
    for (std::size_t i = b; i < b + 50; ++i) s += rows[i].mean_reward;
    blocks.push_back(s / 50.0);
  }
  ASSERT_EQ(blocks.size(), 6u);
  // A block mean of 50 x 64 rewards in [0, 1] has sd below 0.01 near the
  // optimum, so 0.025 allows about 2.5 sd of sampling noise between blocks.
  for (std::size_t i = 1; i < blocks.size(); ++i) EXPECT_GE(blocks[i], blocks[i - 1] - 0.025) << i;
  EXPECT_GT(blocks.back(), blocks.front());
}

INSTANTIATE_TEST_SUITE_P(Objectives, RewardTrend,
                         ::testing::Values(ObjectiveKind::VmpoAmortised, ObjectiveKind::VmpoMc,
                                           ObjectiveKind::VmpoClipped, ObjectiveKind::Grpo,
                                           ObjectiveKind::DetailedBalance),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Train, NonFiniteLossAborts) {
  Matrix k(2, 2, 0.5);
  const TabularChain chain({k}, {0.5, 0.5}, {1e308, 0.0});
  TrainConfig c = tabular_config(ObjectiveKind::VmpoMc, 3);
  c.num_states = 2;
  c.steps = 1;
  c.objective.beta = 1.0;
  // Finite weights whose squared deviations overflow.
  c.objective.potential.kind = PotentialKind::ReturnToGo;
  Trainer trainer(c, chain);
  try {
    trainer.run();
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Train, GaussianRewardImproves) {
  TrainConfig c;
  c.model = ModelKind::Gaussian;
  c.steps = 5;
  c.objective.beta = 1.0;
  c.epochs = 100;
  c.lr_theta = c.lr_phi = 0.01;
  const auto rows = train(c);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    first += rows[i].mean_reward;
    last += rows[rows.size() - 1 - i].mean_reward;
  }
  EXPECT_GT(last, first);
  for (const auto& r : rows) {
    EXPECT_FALSE(r.tv_to_tilt.has_value());
    EXPECT_GE(r.ess, 1.0);
    EXPECT_LE(r.ess, 8.0 + 1e-9);
  }
}
