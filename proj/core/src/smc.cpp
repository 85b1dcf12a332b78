#include "vmpo/smc.hpp"

#include <algorithm>
#include <cmath>

#include "vmpo/errors.hpp"
#include "vmpo/numeric.hpp"

namespace vmpo {

CorrectionTable::CorrectionTable(std::size_t steps, std::size_t keys)
    : values_(steps + 1, keys, 1.0) {
  detail::require(steps >= 1 && keys >= 1, "CorrectionTable: empty shape");
}

std::size_t CorrectionTable::key(const Trajectory& traj, std::size_t t) const {
  if (keys() == 1) return 0;
  detail::require(traj.is_discrete(), "CorrectionTable: per-state table needs a discrete trajectory");
  const std::size_t k = traj.indices.at(t);
  detail::require(k < keys(), "CorrectionTable: state index out of range");
  return k;
}

Vec CorrectionTable::flatten() const {
  const auto flat = values_.flat();
  return Vec(flat.begin() + static_cast<std::ptrdiff_t>(keys()), flat.end());
}

void CorrectionTable::unflatten(std::span<const double> flat) {
  detail::require_shape(flat.size(), num_params(), "CorrectionTable::unflatten");
  std::copy(flat.begin(), flat.end(), values_.flat().begin() + static_cast<std::ptrdiff_t>(keys()));
}

WeightSet make_weight_set(std::span<const double> log_weights) {
  detail::require(!log_weights.empty(), "make_weight_set: no weights");
  WeightSet ws;
  ws.log_weights.assign(log_weights.begin(), log_weights.end());
  ws.log_normaliser = log_sum_exp(log_weights);
  if (!std::isfinite(ws.log_normaliser)) throw NumericError("make_weight_set: non-finite normaliser");
  ws.normalised.resize(log_weights.size());
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    ws.normalised[i] = std::exp(log_weights[i] - ws.log_normaliser);
  }
  return ws;
}

double step_log_weight(const PotentialSpec& spec, double logp_ref, double logp_policy,
                       double r_prev, double r_cur) {
  const double log_ratio = logp_ref - logp_policy;
  if (spec.kind == PotentialKind::ReturnToGo) return log_ratio + r_prev / spec.beta;
  return log_ratio + (r_prev - r_cur) / spec.beta;
}

namespace {

// Intermediate reward actually used at x_t, including the forward-looking
// correction.
double shaped_reward(const PotentialSpec& spec, const Trajectory& traj, std::size_t t,
                     const CorrectionTable* correction) {
  const double r = traj.rewards[t];
  if (spec.kind != PotentialKind::ForwardLooking || correction == nullptr) return r;
  return correction->at(t, correction->key(traj, t)) * r;
}

}  // namespace

Vec step_reward_terms(const PotentialSpec& spec, const Trajectory& traj,
                      const CorrectionTable* correction) {
  const std::size_t T = traj.steps();
  Vec out(T);
  if (spec.kind == PotentialKind::ReturnToGo) {
    for (std::size_t t = 1; t <= T; ++t) {
      out[t - 1] = step_log_weight(spec, 0.0, 0.0, traj.terminal_reward(), 0.0);
    }
    return out;
  }
  for (std::size_t t = 1; t <= T; ++t) {
    out[t - 1] = step_log_weight(spec, 0.0, 0.0, shaped_reward(spec, traj, t - 1, correction),
                                 shaped_reward(spec, traj, t, correction));
  }
  return out;
}

Vec log_potentials(const PotentialSpec& spec, const Trajectory& traj,
                   const CorrectionTable* correction) {
  if (spec.kind != PotentialKind::ReturnToGo) return step_reward_terms(spec, traj, correction);
  const std::size_t T = traj.steps();
  const double share = traj.terminal_reward() / static_cast<double>(T);
  return Vec(T, step_log_weight(spec, 0.0, 0.0, share, 0.0));
}

double trajectory_log_weight(const PotentialSpec& spec, const Trajectory& traj,
                             const CorrectionTable* correction) {
  traj.validate();
  const Vec logu = log_potentials(spec, traj, correction);
  double total = 0.0;
  for (std::size_t t = 1; t <= traj.steps(); ++t) {
    total += traj.logp_ref[t - 1] - traj.logp_policy[t - 1] + logu[t - 1];
  }
  return total;
}

double check_potential_constraint(const PotentialSpec& spec, const Trajectory& traj,
                                  const CorrectionTable* correction) {
  traj.validate();
  const Vec logu = log_potentials(spec, traj, correction);
  double total = 0.0;
  for (double v : logu) total += v;
  return total - traj.terminal_reward() / spec.beta;
}

double ess(const WeightSet& weights) {
  detail::require(!weights.log_weights.empty(), "ess: no weights");
  Vec doubled(weights.log_weights.size());
  for (std::size_t i = 0; i < doubled.size(); ++i) doubled[i] = 2.0 * weights.log_weights[i];
  const double log_ess = 2.0 * log_sum_exp(weights.log_weights) - log_sum_exp(doubled);
  const double K = static_cast<double>(doubled.size());
  return std::clamp(std::exp(log_ess), 1.0, K);
}

std::vector<std::size_t> snis_resample(const WeightSet& weights, RngStream& rng) {
  std::vector<std::size_t> ancestors(weights.normalised.size());
  for (auto& a : ancestors) a = categorical_draw(weights.normalised, rng);
  return ancestors;
}

}  // namespace vmpo
