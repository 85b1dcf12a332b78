#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vmpo/matrix.hpp"
#include "vmpo/rng.hpp"
#include "vmpo/types.hpp"

namespace vmpo {

// Multiplicative correction F on intermediate rewards for the
// forward-looking potential, r~(x_t) = F(x_t) * r(x_t). Row t holds F at
// diffusion time t; columns are keyed by state index (tabular) or a single
// column (per-step scalar, Gaussian). Row 0 is the terminal constraint and
// is expected to stay at 1.
class CorrectionTable {
 public:
  CorrectionTable(std::size_t steps, std::size_t keys);

  std::size_t steps() const { return values_.rows() - 1; }
  std::size_t keys() const { return values_.cols(); }
  double at(std::size_t t, std::size_t key) const { return values_(t, key); }
  double& at(std::size_t t, std::size_t key) { return values_(t, key); }

  // Column for x_t in this trajectory.
  std::size_t key(const Trajectory& traj, std::size_t t) const;

  // Learnable entries are rows 1..T, flattened row-major.
  std::size_t num_params() const { return (values_.rows() - 1) * values_.cols(); }
  Vec flatten() const;
  void unflatten(std::span<const double> flat);

 private:
  Matrix values_;
};

struct WeightSet {
  Vec log_weights;
  Vec normalised;
  double log_normaliser = 0.0;
};

WeightSet make_weight_set(std::span<const double> log_weights);

// One-step log importance weight.
//   return_to_go:  logp_ref - logp_policy + r_prev / beta
//                  (r_prev is the terminal-reward share for this step)
//   difference, forward_looking:
//                  logp_ref - logp_policy + (r_prev - r_cur) / beta
double step_log_weight(const PotentialSpec& spec, double logp_ref, double logp_policy,
                       double r_prev, double r_cur);

// Reward part of the per-step training weight for t = 1..T (entry t-1), in
// units of 1/beta already applied. Return-to-go gives every step the full
// terminal reward r(x_0)/beta (the 1/T share is absorbed into beta); the
// difference forms telescope the intermediate reward track.
Vec step_reward_terms(const PotentialSpec& spec, const Trajectory& traj,
                      const CorrectionTable* correction = nullptr);

// log U_t for t = 1..T (entry t-1). Return-to-go uses the unabsorbed share
// r(x_0)/(T beta), so the product of potentials is exp(r(x_0)/beta).
Vec log_potentials(const PotentialSpec& spec, const Trajectory& traj,
                   const CorrectionTable* correction = nullptr);

// log w_{0:T}: sum over steps of step_log_weight with the log_potentials
// reward terms, using the policy log-densities stored in the trajectory.
double trajectory_log_weight(const PotentialSpec& spec, const Trajectory& traj,
                             const CorrectionTable* correction = nullptr);

// sum_t log U_t - r(x_0)/beta.
double check_potential_constraint(const PotentialSpec& spec, const Trajectory& traj,
                                  const CorrectionTable* correction = nullptr);

// (sum w)^2 / sum w^2, in [1, K].
double ess(const WeightSet& weights);

// K multinomial draws of ancestor indices from the normalised weights.
std::vector<std::size_t> snis_resample(const WeightSet& weights, RngStream& rng);

}  // namespace vmpo
