#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "vmpo/errors.hpp"
#include "vmpo/objectives.hpp"
#include "vmpo/trainer.hpp"
#include "vmpo/verify.hpp"

using namespace vmpo;

namespace {

// One-step discrete trajectory whose per-step weight is logp_ref - logp +
// (r0 - r1)/beta under the difference potential.
Trajectory one_step(double logp, double logp_ref, double r0, double r1 = 0.0) {
  Trajectory tr;
  tr.indices = {0, 0};
  tr.logp_policy = {logp};
  tr.logp_old = {logp};
  tr.logp_ref = {logp_ref};
  tr.rewards = {r0, r1};
  return tr;
}

PotentialSpec diff(double beta = 1.0) {
  PotentialSpec p;
  p.kind = PotentialKind::Difference;
  p.beta = beta;
  return p;
}

RolloutBatch random_batch(std::uint64_t seed, std::size_t K, PotentialSpec spec = diff(0.5)) {
  const auto chain = make_standard_tabular_chain(4, 3);
  RngStream prng(seed, 1);
  const auto policy = random_tabular_policy(4, 3, prng);
  RngStream rng(seed, 2);
  return rollout(chain, policy, K, rng, spec);
}

}  // namespace

TEST(Batch, RequiresTwoTrajectories) {
  EXPECT_THROW(RolloutBatch({one_step(0, 0, 0)}), InvalidArgument);
}

TEST(VmpoMc, Examples) {
  const RolloutBatch same({one_step(-1, -0.5, 0.3), one_step(-1, -0.5, 0.3), one_step(-1, -0.5, 0.3)});
  EXPECT_NEAR(vmpo_mc_loss(same, diff()), 0.0, 1e-30);
  for (const auto& row : vmpo_mc_grad(same, diff()))
    for (double g : row) EXPECT_NEAR(g, 0.0, 1e-15);

  const RolloutBatch pair({one_step(0, 0, 1.0), one_step(0, 0, 0.0)});
  EXPECT_NEAR(vmpo_mc_loss(pair, diff()), 0.25, 1e-15);

  const RolloutBatch ref({one_step(-0.4, -0.4, 0.7), one_step(-2.0, -2.0, 0.7)});
  EXPECT_NEAR(vmpo_mc_loss(ref, diff()), 0.0, 1e-30);
}

TEST(VmpoMc, AdvantagesSumToZeroAndGradMatchesDefinition) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto batch = random_batch(seed, 2 + seed % 5);
    const auto adv = group_mean_advantages(batch, diff(0.5));
    const auto grad = vmpo_mc_grad(batch, diff(0.5));
    const double K = static_cast<double>(batch.group_size());
    for (std::size_t t = 0; t < batch.steps(); ++t) {
      double s = 0.0, gs = 0.0;
      for (std::size_t i = 0; i < batch.group_size(); ++i) {
        s += adv.values[i][t];
        gs += grad[i][t];
        EXPECT_NEAR(grad[i][t], -adv.values[i][t] / (K - 1), 1e-15);
      }
      EXPECT_NEAR(s, 0.0, 1e-12);
      EXPECT_NEAR(gs, 0.0, 1e-12);
    }
  }
}

TEST(VmpoMc, GradientIsDerivativeOfLoss) {
  const auto batch = random_batch(3, 5);
  const auto grad = vmpo_mc_grad(batch, diff(0.5));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t t = 0; t < 3; ++t) {
      auto eval = [&](double h) {
        auto b = batch;
        b.mutable_trajectories()[i].logp_policy[t] += h;
        return vmpo_mc_loss(b, diff(0.5));
      };
      EXPECT_NEAR(grad[i][t], (eval(1e-5) - eval(-1e-5)) / 2e-5, 1e-8);
    }
}

TEST(VmpoMc, InvariantToSharedShifts) {
  const auto batch = random_batch(4, 6);
  const double base = vmpo_mc_loss(batch, diff(0.5));
  auto shifted = batch;
  for (auto& tr : shifted.mutable_trajectories()) {
    for (double& r : tr.rewards) r += 3.7;
    for (double& lp : tr.logp_policy) lp += std::log(2.5);
  }
  EXPECT_NEAR(vmpo_mc_loss(shifted, diff(0.5)), base, 1e-12);
}

TEST(VmpoMc, ExpectedGradientEqualsKlGradient) {
  const auto chain = make_standard_tabular_chain(3, 2);
  RngStream rng(5, 0);
  const auto policy = random_tabular_policy(3, 2, rng);
  for (std::size_t K : {2u, 3u}) {
    const auto rep = check_prop1_gradient_identity(chain, policy, 0.7, K);
    EXPECT_TRUE(rep.pass) << rep.max_err;
    EXPECT_LT(rep.max_err, 1e-9);
  }
}

TEST(VmpoAmortised, ZeroWhenBaselineMatchesConstantWeights) {
  const RolloutBatch b({one_step(-1, -0.5, 0.3), one_step(-2, -1.5, 0.3)});
  MeanEstimator m(1);
  m.at(1) = 0.5 + 0.3;
  const auto res = vmpo_amortised_loss(b, diff(), m);
  EXPECT_NEAR(res.value, 0.0, 1e-15);
  EXPECT_NEAR(res.d_phi[0], 0.0, 1e-15);
  for (const auto& row : res.d_logp) EXPECT_NEAR(row[0], 0.0, 1e-15);
}

TEST(VmpoAmortised, PhiStationaryAtGroupMeanAndMatchesMc) {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const std::size_t K = 3 + seed % 4;
    const auto batch = random_batch(seed, K);
    const auto f = per_step_log_weights(batch, diff(0.5));
    MeanEstimator m(3);
    for (std::size_t t = 1; t <= 3; ++t) {
      double s = 0;
      for (std::size_t i = 0; i < K; ++i) s += f[i][t - 1];
      m.at(t) = s / static_cast<double>(K);
    }
    const auto res = vmpo_amortised_loss(batch, diff(0.5), m);
    for (double g : res.d_phi) EXPECT_NEAR(g, 0.0, 1e-12);
    // mean over K*T squared deviations vs 1/(2(K-1)) times their sum.
    const double scale = static_cast<double>(K * 3) / (2.0 * static_cast<double>(K - 1));
    EXPECT_NEAR(res.value * scale, vmpo_mc_loss(batch, diff(0.5)), 1e-12);
  }
}

TEST(VmpoAmortised, AdjointsMatchFiniteDifferences) {
  const auto batch = random_batch(16, 4);
  MeanEstimator m(3);
  m.at(1) = 0.2;
  m.at(2) = -0.4;
  m.at(3) = 1.1;
  const auto res = vmpo_amortised_loss(batch, diff(0.5), m);
  for (std::size_t t = 1; t <= 3; ++t) {
    auto eval = [&](double h) {
      MeanEstimator mm = m;
      mm.at(t) += h;
      return vmpo_amortised_loss(batch, diff(0.5), mm).value;
    };
    EXPECT_NEAR(res.d_phi[m.index(t, 0)], (eval(1e-5) - eval(-1e-5)) / 2e-5, 1e-8);
  }
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t t = 0; t < 3; ++t) {
      auto eval = [&](double h) {
        auto b = batch;
        b.mutable_trajectories()[i].logp_policy[t] += h;
        return vmpo_amortised_loss(b, diff(0.5), m).value;
      };
      EXPECT_NEAR(res.d_logp[i][t], (eval(1e-5) - eval(-1e-5)) / 2e-5, 1e-8);
    }
}

TEST(GrpoAdvantage, Examples) {
  EXPECT_EQ(grpo_advantage(Vec{1, 2, 3}), (Vec{-1, 0, 1}));
  EXPECT_EQ(grpo_advantage(Vec{2.5, 2.5}), (Vec{0, 0}));
  EXPECT_THROW(grpo_advantage(Vec{1.0}), InvalidArgument);
  RngStream rng(17, 0);
  for (int rep = 0; rep < 50; ++rep) {
    Vec g(2 + rep % 7);
    for (double& x : g) x = 10.0 * rng.normal();
    const auto a = grpo_advantage(g);
    EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 0.0, 1e-12);
  }
}

TEST(ClippedSurrogate, Examples) {
  EXPECT_NEAR(clipped_surrogate(1.5, 2.0, 0.2), 2.4, 1e-15);
  EXPECT_NEAR(clipped_surrogate(0.5, -1.0, 0.2), -0.8, 1e-15);
  for (double eps : {0.0, 0.1, 0.5})
    for (double a : {-2.0, 0.3, 4.0}) EXPECT_EQ(clipped_surrogate(1.0, a, eps), a);
  EXPECT_THROW(clipped_surrogate(1.0, 1.0, 1.0), InvalidArgument);
  EXPECT_EQ(clipped_surrogate_grad(1.5, 2.0, 0.2), 0.0);
  EXPECT_EQ(clipped_surrogate_grad(1.1, 2.0, 0.2), 2.0);
  EXPECT_EQ(clipped_surrogate_grad(0.5, 2.0, 0.2), 2.0);
}

TEST(KlShapedReturn, Examples) {
  EXPECT_EQ(kl_shaped_return(1.25, -0.3, -0.3, 0.7), 1.25);
  EXPECT_EQ(kl_shaped_return(0.0, 1.0, 0.0, 2.0), -2.0);
  EXPECT_EQ(kl_shaped_return(0.6, 5.0, -1.0, 0.0), 0.6);
}

TEST(VmpoClipped, OnPolicyValuesAndGradient) {
  const RolloutBatch same({one_step(-1, -0.5, 0.3), one_step(-1, -0.5, 0.3)});
  EXPECT_NEAR(vmpo_clipped_objective(same, diff(), 0.2).value, 0.0, 1e-15);

  const auto batch = random_batch(18, 5);
  const auto adv = group_mean_advantages(batch, diff(0.5));
  const auto mc = vmpo_mc_grad(batch, diff(0.5));
  const auto res = vmpo_clipped_objective(batch, diff(0.5), 0.2);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t t = 0; t < 3; ++t) EXPECT_NEAR(res.d_logp[i][t], -mc[i][t], 1e-15);

  // eps = 0 collapses the clipped branch to A, leaving min(rho A, A).
  auto off = batch;
  RngStream rng(18, 3);
  for (auto& tr : off.mutable_trajectories())
    for (double& lp : tr.logp_old) lp += 0.3 * rng.normal();
  const auto adv_off = group_mean_advantages(off, diff(0.5));
  double want = 0.0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t t = 0; t < 3; ++t) {
      const double rho = std::exp(off[i].logp_policy[t] - off[i].logp_old[t]);
      want += std::min(rho * adv_off.values[i][t], adv_off.values[i][t]);
    }
  EXPECT_NEAR(vmpo_clipped_objective(off, diff(0.5), 0.0).value, want / 4.0, 1e-12);
  // On-policy every term is its advantage, which sum to zero per step.
  EXPECT_NEAR(vmpo_clipped_objective(batch, diff(0.5), 0.0).value, 0.0, 1e-12);
  (void)adv;
}

TEST(Grpo, OnPolicyAdjointsAreScaledShapedAdvantages) {
  const auto batch = random_batch(19, 4);
  const double beta = 0.5;
  const auto res = grpo_objective(batch, beta, 0.2);
  EXPECT_NEAR(res.value, 0.0, 1e-12);
  for (std::size_t t = 0; t < 3; ++t) {
    Vec g(4);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& tr = batch[i];
      g[i] = kl_shaped_return(tr.terminal_reward(), tr.logp_policy[t], tr.logp_ref[t], beta);
    }
    const auto a = grpo_advantage(g);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(res.d_logp[i][t], a[i] / 4.0, 1e-14);
  }
}

TEST(DetailedBalance, SingleResidualAndReference) {
  const double rho = std::log(3.0) - 0.25;
  const RolloutBatch b({one_step(-std::log(3.0), 0.0, 0.0, 0.25), one_step(-std::log(3.0), 0.0, 0.0, 0.25)});
  EXPECT_NEAR(detailed_balance_loss(b, diff()).value, rho * rho, 1e-14);

  const RolloutBatch ref({one_step(-0.4, -0.4, 0.0), one_step(-1.2, -1.2, 0.0)});
  EXPECT_EQ(detailed_balance_loss(ref, diff()).value, 0.0);
}

TEST(DetailedBalance, ZeroAtSoftValueTilt) {
  const auto chain = make_standard_tabular_chain(4, 3);
  const double beta = 0.5;
  PotentialSpec spec = diff(beta);
  spec.value_table = exact_soft_value(chain, beta);
  const auto policy = TabularPolicy::from_kernels(soft_value_tilted_kernels(chain, beta));
  RngStream rng(20, 0);
  const auto batch = rollout(chain, policy, 16, rng, spec);
  const auto res = detailed_balance_loss(batch, spec);
  EXPECT_LT(res.value, 1e-9);
  // Zero loss means every per-step weight is constant: the group-centred
  // estimator vanishes too.
  EXPECT_LT(vmpo_mc_loss(batch, spec), 1e-9);
  const auto vb = check_variance_bound(chain, policy, spec);
  EXPECT_LT(vb.rhs, 1e-9);
}

TEST(DetailedBalance, CorrectionAdjointsMatchFiniteDifferences) {
  PotentialSpec spec = diff(0.5);
  spec.kind = PotentialKind::ForwardLooking;
  const auto batch = random_batch(21, 4, spec);
  CorrectionTable f(3, 4);
  RngStream rng(21, 5);
  auto p = f.flatten();
  for (double& x : p) x = 1.0 + 0.3 * rng.normal();
  f.unflatten(p);
  const auto res = detailed_balance_loss(batch, spec, &f);
  ASSERT_EQ(res.d_correction.size(), p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto eval = [&](double h) {
      CorrectionTable g = f;
      auto q = p;
      q[k] += h;
      g.unflatten(q);
      return detailed_balance_loss(batch, spec, &g).value;
    };
    EXPECT_NEAR(res.d_correction[k], (eval(1e-5) - eval(-1e-5)) / 2e-5, 1e-8);
  }
}

TEST(GradMatching, ZeroAtQuadraticTilt) {
  const auto chain = make_quadratic_chain(3, 0.3, 2.0, 1.0);
  const double beta = 1.0;
  RngStream init(22, 0);
  const auto policy = quadratic_tilted_policy(chain, 2.0, Vec{1.0}, beta, init);
  RngStream rng(22, 1);
  const auto batch = rollout(chain, policy, 8, rng);
  EXPECT_LT(grad_matching_loss(chain, policy, batch, beta, GradSide::Prev).value, 1e-8);
}

TEST(GradMatching, ZeroForReferenceUnderFlatReward) {
  // lambda = 0 makes the quadratic reward identically zero.
  const auto chain = make_quadratic_chain(3, 0.3, 0.0, 1.0);
  RngStream init(23, 0);
  const GaussianPolicy policy(chain, {.hidden = 4, .num_conditions = 1, .learn_variance = true}, init);
  RngStream rng(23, 1);
  const auto batch = rollout(chain, policy, 4, rng);
  for (auto side : {GradSide::Prev, GradSide::Next, GradSide::Both})
    EXPECT_LT(grad_matching_loss(chain, policy, batch, 1.0, side).value, 1e-20);
}

TEST(GradMatching, IgnoresRewardOffsets) {
  const auto chain = make_quadratic_chain(3, 0.3, 1.5, -0.5);
  RngStream init(24, 0);
  const GaussianPolicy policy(chain, {.hidden = 4, .num_conditions = 1, .learn_variance = false}, init);
  RngStream rng(24, 1);
  const auto batch = rollout(chain, policy, 4, rng);
  auto shifted = batch;
  for (auto& tr : shifted.mutable_trajectories())
    for (double& r : tr.rewards) r += 10.0;
  for (auto side : {GradSide::Prev, GradSide::Next, GradSide::Both}) {
    EXPECT_EQ(grad_matching_loss(chain, policy, batch, 0.7, side).value,
              grad_matching_loss(chain, policy, shifted, 0.7, side).value);
  }
}

TEST(GradMatching, TabularIsUnsupported) {
  const auto chain = make_standard_tabular_chain(3, 2);
  const auto policy = TabularPolicy::from_reference(chain);
  RngStream rng(25, 0);
  const auto batch = rollout(chain, policy, 2, rng);
  EXPECT_THROW(grad_matching_loss(chain, policy, batch, 1.0, GradSide::Prev), UnsupportedModel);
}

TEST(KlToOld, ZeroAtOldPolicyWithZeroGradient) {
  const auto chain = make_standard_tabular_chain(3, 2);
  RngStream prng(26, 0);
  const auto policy = random_tabular_policy(3, 2, prng);
  RngStream rng(26, 1);
  const auto batch = rollout(chain, policy, 3, rng);
  const auto kl = kl_to_old(policy, policy, batch);
  EXPECT_EQ(kl.value, 0.0);
  for (double g : kl.d_theta) EXPECT_NEAR(g, 0.0, 1e-15);
}
