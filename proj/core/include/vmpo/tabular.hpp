#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "vmpo/matrix.hpp"

namespace vmpo {

// Finite-state denoising chain. ref_kernel(t)(x_t, x_{t-1}) holds
// p_ref(x_{t-1} | x_t) for t = 1..T; kernels are time-inhomogeneous.
class TabularChain {
 public:
  TabularChain(std::vector<Matrix> ref_kernels, Vec prior, Vec reward);

  std::size_t num_states() const { return prior_.size(); }
  std::size_t steps() const { return kernels_.size(); }

  const Matrix& ref_kernel(std::size_t t) const;
  double ref_prob(std::size_t t, std::size_t x_t, std::size_t x_prev) const {
    return ref_kernel(t)(x_t, x_prev);
  }
  const Vec& prior() const { return prior_; }
  // r(x) on states; applied to x_0 and reused for intermediate potentials.
  const Vec& reward() const { return reward_; }

 private:
  std::vector<Matrix> kernels_;
  Vec prior_;
  Vec reward_;
};

// Softmax-parameterised kernels: logits(t)(x_t, .) -> p_theta(. | x_t).
// Parameters are stored flat as [t=1 | t=2 | ... ], each an S x S block.
class TabularPolicy {
 public:
  TabularPolicy(std::size_t num_states, std::size_t steps);

  // Logits equal to log p_ref, so kernels reproduce the reference exactly.
  static TabularPolicy from_reference(const TabularChain& chain);
  // Logits equal to log of the given kernels (one S x S matrix per step).
  static TabularPolicy from_kernels(std::span<const Matrix> kernels);

  std::size_t num_states() const { return S_; }
  std::size_t steps() const { return T_; }
  std::size_t num_params() const { return logits_.size(); }

  std::span<double> params() { return logits_; }
  std::span<const double> params() const { return logits_; }

  std::size_t offset(std::size_t t, std::size_t x_t) const;
  std::span<double> logits(std::size_t t, std::size_t x_t);
  std::span<const double> logits(std::size_t t, std::size_t x_t) const;

  Vec kernel_row(std::size_t t, std::size_t x_t) const;
  Matrix kernel(std::size_t t) const;
  double log_prob(std::size_t t, std::size_t x_t, std::size_t x_prev) const;

 private:
  std::size_t S_;
  std::size_t T_;
  Vec logits_;
};

// p_ref(x_{t-1}|x_t) exp(r(x_{t-1})/beta), renormalised per row in the log
// domain. The first overload tilts with the chain's own reward.
Matrix exact_tilted_kernel(const TabularChain& chain, std::size_t t, double beta);
Matrix exact_tilted_kernel(const TabularChain& chain, std::size_t t, double beta,
                           std::span<const double> reward_prev);

// Soft values V (rows t = 0..T): V_0 = r and
// V_t(x) = beta log sum_x' p_ref(x'|x) exp(V_{t-1}(x')/beta).
Matrix exact_soft_value(const TabularChain& chain, double beta);

// Per-step targets built from the soft values: step t is tilted by V_{t-1}.
std::vector<Matrix> soft_value_tilted_kernels(const TabularChain& chain, double beta);

// KL(p || q) with 0 log 0 := 0. Throws if q[i] = 0 < p[i].
double exact_kl(std::span<const double> p, std::span<const double> q);

// Gradient of KL(p_theta(.|x_t) || p_tilt(.|x_t)) with respect to the logits
// of that row. The second overload tilts with an explicit reward vector.
Vec exact_kl_grad(const TabularChain& chain, const TabularPolicy& policy, std::size_t t,
                  std::size_t x_t, double beta);
Vec exact_kl_grad(const TabularChain& chain, const TabularPolicy& policy, std::size_t t,
                  std::size_t x_t, double beta, std::span<const double> reward_prev);

inline constexpr std::size_t kEnumerationLimit = 1'000'000;

struct McEnumeration {
  Vec expected_grad;       // E[grad of the K-sample log-variance estimator]
  double expected_loss;    // E[K-sample estimator value]
  double variance_loss;    // 1/2 Var_{p_theta}(log w_t) for the row
};

// Exact moments of the K-sample group estimator for one row, by enumerating
// all S^K ordered sample tuples drawn i.i.d. from p_theta(.|x_t).
McEnumeration enumerate_mc_estimator(const TabularChain& chain, const TabularPolicy& policy,
                                     std::size_t t, std::size_t x_t, std::size_t group_size,
                                     double beta, std::span<const double> reward_prev);

Vec enumerate_expected_grad_mc(const TabularChain& chain, const TabularPolicy& policy,
                               std::size_t t, std::size_t x_t, std::size_t group_size,
                               double beta);

// Marginal of x_t for t = T..0 when sampling ancestrally with the given
// kernels (index t-1 holds step t). Entry t of the result is p(x_t).
std::vector<Vec> state_marginals(const TabularChain& chain, std::span<const Matrix> kernels);

std::vector<Matrix> reference_kernels(const TabularChain& chain);
std::vector<Matrix> policy_kernels(const TabularPolicy& policy);

// Text format: optional '#' comment lines, then a line "S T", the prior,
// the reward, and T blocks of S kernel rows (step 1 first). One matrix row
// per line, whitespace-separated decimals.
void write_chain(std::ostream& out, const TabularChain& chain);
TabularChain read_chain(std::istream& in);

}  // namespace vmpo
