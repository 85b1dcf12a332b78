#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vmpo/gaussian.hpp"
#include "vmpo/gaussian_policy.hpp"
#include "vmpo/smc.hpp"
#include "vmpo/tabular.hpp"
#include "vmpo/types.hpp"

namespace vmpo {

enum class BaselineKind { GroupMean, Amortised, None };

// values[i][t-1] = A_t^i.
struct AdvantageBatch {
  std::vector<Vec> values;
  BaselineKind baseline = BaselineKind::GroupMean;
};

// Learned per-step baseline M_phi(t), optionally one per condition.
class MeanEstimator {
 public:
  MeanEstimator(std::size_t steps, std::size_t num_conditions = 1);

  std::size_t steps() const { return steps_; }
  std::size_t num_conditions() const { return conditions_; }
  double operator()(std::size_t t, int condition = 0) const;
  double& at(std::size_t t, int condition = 0);

  std::span<double> params() { return values_; }
  std::span<const double> params() const { return values_; }
  std::size_t index(std::size_t t, int condition) const;

 private:
  std::size_t steps_;
  std::size_t conditions_;
  Vec values_;
};

// Loss (or objective) value together with its adjoints. d_logp[i][t-1] is
// the derivative with respect to log p_theta(x^i_{t-1} | x^i_t) with every
// stop-gradient of the objective honoured.
struct LossResult {
  double value = 0.0;
  std::vector<Vec> d_logp;
  Vec d_phi;         // MeanEstimator parameters (amortised objective)
  Vec d_correction;  // CorrectionTable parameters (forward-looking DB)
};

// f_t^i = log p_ref - log p_theta + reward term of the potential.
std::vector<Vec> per_step_log_weights(const RolloutBatch& batch, const PotentialSpec& potential,
                                      const CorrectionTable* correction = nullptr);

AdvantageBatch group_mean_advantages(const RolloutBatch& batch, const PotentialSpec& potential,
                                     const CorrectionTable* correction = nullptr);

// sum_t 1/(2(K-1)) sum_i (A_t^i)^2.
double vmpo_mc_loss(const RolloutBatch& batch, const PotentialSpec& potential,
                    const CorrectionTable* correction = nullptr);

// -A_t^i / (K-1): the gradient of vmpo_mc_loss with respect to each
// policy log-density, i.e. the group estimator of the KL gradient.
std::vector<Vec> vmpo_mc_grad(const RolloutBatch& batch, const PotentialSpec& potential,
                              const CorrectionTable* correction = nullptr);

// Mean over (i, t) of (f_t^i - M(t))^2. d_logp treats M as constant and
// d_phi treats f as constant.
LossResult vmpo_amortised_loss(const RolloutBatch& batch, const PotentialSpec& potential,
                               const MeanEstimator& mean_estimator,
                               const CorrectionTable* correction = nullptr);

// G^i - mean(G); no scale normalisation.
Vec grpo_advantage(std::span<const double> returns);

double clipped_surrogate(double ratio, double advantage, double eps);
// d/d ratio of clipped_surrogate (zero on the clipped branch).
double clipped_surrogate_grad(double ratio, double advantage, double eps);

// G - beta log(pi_theta / pi_ref).
double kl_shaped_return(double G, double logp_policy, double logp_ref, double beta);

// (1/(K-1)) sum_i sum_t clipped_surrogate(rho_t^i, A_t^i, eps) with
// rho = p_theta/p_old and A from per_step_log_weights at stop-gradient
// theta. This is an objective to maximise; d_logp is its ascent direction.
LossResult vmpo_clipped_objective(const RolloutBatch& batch, const PotentialSpec& potential,
                                  double eps, const CorrectionTable* correction = nullptr);

// (1/K) sum_i sum_t clipped_surrogate(rho_t^i, A_t^i, eps) with
// A_t^i = group-centred KL-shaped return r(x_0) - beta log(p_theta/p_ref).
// Objective to maximise.
LossResult grpo_objective(const RolloutBatch& batch, double beta, double eps);

// Mean over (i, t) of squared per-step log weights. With a correction
// table the adjoint of the learnable rows is returned in d_correction.
LossResult detailed_balance_loss(const RolloutBatch& batch, const PotentialSpec& potential,
                                 const CorrectionTable* correction = nullptr);

enum class GradSide { Prev, Next, Both };

struct GradMatchingResult {
  double value = 0.0;
  Vec d_theta;
};

// Mean over (i, t) of the squared norm of the state gradient of the
// per-step log weight, taken at x_{t-1} (Prev), at x_t (Next) or both.
// Rewards are differentiated on the state itself.
GradMatchingResult grad_matching_loss(const GaussianChain& chain, const GaussianPolicy& policy,
                                      const RolloutBatch& batch, double beta, GradSide side);
// Finite state spaces have no state gradient.
[[noreturn]] GradMatchingResult grad_matching_loss(const TabularChain& chain,
                                                   const TabularPolicy& policy,
                                                   const RolloutBatch& batch, double beta,
                                                   GradSide side);

// Mean over visited (i, t) of KL(p_theta(.|x_t) || p_old(.|x_t)), with its
// parameter gradient.
struct KlPenalty {
  double value = 0.0;
  Vec d_theta;
};
KlPenalty kl_to_old(const TabularPolicy& policy, const TabularPolicy& old_policy,
                    const RolloutBatch& batch);
KlPenalty kl_to_old(const GaussianChain& chain, const GaussianPolicy& policy,
                    const GaussianPolicy& old_policy, const RolloutBatch& batch);

}  // namespace vmpo
