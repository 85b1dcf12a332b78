#include <benchmark/benchmark.h>

#include "vmpo/objectives.hpp"
#include "vmpo/trainer.hpp"
#include "vmpo/verify.hpp"

using namespace vmpo;

static void BM_EnumerateExpectedGrad(benchmark::State& state) {
  const auto S = static_cast<std::size_t>(state.range(0));
  const auto K = static_cast<std::size_t>(state.range(1));
  const auto chain = make_standard_tabular_chain(S, 2);
  RngStream rng(1, 0);
  const auto policy = random_tabular_policy(S, 2, rng);
  for (auto _ : state) benchmark::DoNotOptimize(enumerate_expected_grad_mc(chain, policy, 1, 0, K, 0.5));
}
BENCHMARK(BM_EnumerateExpectedGrad)->Args({3, 2})->Args({4, 3})->Args({8, 4});

static void BM_TabularRollout(benchmark::State& state) {
  const auto chain = make_standard_tabular_chain(4, 3);
  const auto policy = TabularPolicy::from_reference(chain);
  RngStream rng(2, 0);
  for (auto _ : state) benchmark::DoNotOptimize(rollout(chain, policy, 8, rng));
}
BENCHMARK(BM_TabularRollout);

static void BM_GaussianRollout(benchmark::State& state) {
  const auto chain = make_mixture_toy_chain(2, 5, 0.3);
  RngStream init(3, 0);
  const GaussianPolicy policy(chain, {}, init);
  RngStream rng(3, 1);
  for (auto _ : state) benchmark::DoNotOptimize(rollout(chain, policy, 8, rng));
}
BENCHMARK(BM_GaussianRollout);

static void BM_AmortisedLoss(benchmark::State& state) {
  const auto chain = make_standard_tabular_chain(4, 3);
  const auto policy = TabularPolicy::from_reference(chain);
  RngStream rng(4, 0);
  const auto batch = rollout(chain, policy, static_cast<std::size_t>(state.range(0)), rng);
  const MeanEstimator m(3);
  for (auto _ : state) benchmark::DoNotOptimize(vmpo_amortised_loss(batch, {}, m));
}
BENCHMARK(BM_AmortisedLoss)->Arg(8)->Arg(64);

static void BM_GradMatching(benchmark::State& state) {
  const auto chain = make_quadratic_chain(3, 0.3, 2.0, 1.0);
  RngStream init(5, 0);
  const GaussianPolicy policy(chain, {.hidden = 16, .num_conditions = 1, .learn_variance = true}, init);
  RngStream rng(5, 1);
  const auto batch = rollout(chain, policy, 8, rng);
  for (auto _ : state)
    benchmark::DoNotOptimize(grad_matching_loss(chain, policy, batch, 1.0, GradSide::Prev));
}
BENCHMARK(BM_GradMatching);

BENCHMARK_MAIN();
