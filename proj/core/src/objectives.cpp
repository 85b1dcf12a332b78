#include "vmpo/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "vmpo/errors.hpp"
#include "vmpo/numeric.hpp"

namespace vmpo {
namespace {

std::vector<Vec> zeros_like(const RolloutBatch& batch) {
  return std::vector<Vec>(batch.group_size(), Vec(batch.steps(), 0.0));
}

void center_over_group(std::vector<Vec>& values) {
  const std::size_t K = values.size();
  const std::size_t T = values.front().size();
  for (std::size_t t = 0; t < T; ++t) {
    double m = 0.0;
    for (const auto& row : values) m += row[t];
    m /= static_cast<double>(K);
    for (auto& row : values) row[t] -= m;
  }
}

}  // namespace

// ---------------------------------------------------------------- M_phi

MeanEstimator::MeanEstimator(std::size_t steps, std::size_t num_conditions)
    : steps_(steps), conditions_(num_conditions), values_(steps * num_conditions, 0.0) {
  detail::require(steps >= 1 && num_conditions >= 1, "MeanEstimator: empty shape");
}

std::size_t MeanEstimator::index(std::size_t t, int condition) const {
  detail::require(t >= 1 && t <= steps_, "MeanEstimator: t outside [1, T]");
  const auto c = conditions_ == 1 ? std::size_t{0} : static_cast<std::size_t>(condition);
  detail::require(condition >= 0 && c < conditions_, "MeanEstimator: condition out of range");
  return c * steps_ + (t - 1);
}

double MeanEstimator::operator()(std::size_t t, int condition) const {
  return values_[index(t, condition)];
}

double& MeanEstimator::at(std::size_t t, int condition) { return values_[index(t, condition)]; }

// ---------------------------------------------------------------- VMPO

std::vector<Vec> per_step_log_weights(const RolloutBatch& batch, const PotentialSpec& potential,
                                      const CorrectionTable* correction) {
  std::vector<Vec> f;
  f.reserve(batch.group_size());
  for (const auto& traj : batch.trajectories()) {
    Vec row = step_reward_terms(potential, traj, correction);
    for (std::size_t t = 0; t < row.size(); ++t) row[t] += traj.logp_ref[t] - traj.logp_policy[t];
    f.push_back(std::move(row));
  }
  return f;
}

AdvantageBatch group_mean_advantages(const RolloutBatch& batch, const PotentialSpec& potential,
                                     const CorrectionTable* correction) {
  AdvantageBatch adv{per_step_log_weights(batch, potential, correction), BaselineKind::GroupMean};
  center_over_group(adv.values);
  return adv;
}

double vmpo_mc_loss(const RolloutBatch& batch, const PotentialSpec& potential,
                    const CorrectionTable* correction) {
  const auto adv = group_mean_advantages(batch, potential, correction);
  double sq = 0.0;
  for (const auto& row : adv.values)
    for (double a : row) sq += a * a;
  return sq / (2.0 * static_cast<double>(batch.group_size() - 1));
}

std::vector<Vec> vmpo_mc_grad(const RolloutBatch& batch, const PotentialSpec& potential,
                              const CorrectionTable* correction) {
  auto adv = group_mean_advantages(batch, potential, correction);
  const double scale = -1.0 / static_cast<double>(batch.group_size() - 1);
  for (auto& row : adv.values)
    for (double& a : row) a *= scale;
  return std::move(adv.values);
}

LossResult vmpo_amortised_loss(const RolloutBatch& batch, const PotentialSpec& potential,
                               const MeanEstimator& mean_estimator,
                               const CorrectionTable* correction) {
  const std::size_t K = batch.group_size();
  const std::size_t T = batch.steps();
  detail::require(mean_estimator.steps() >= T, "vmpo_amortised_loss: M_phi shorter than batch");
  const auto f = per_step_log_weights(batch, potential, correction);
  LossResult out;
  out.d_logp = zeros_like(batch);
  out.d_phi.assign(mean_estimator.params().size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(K * T);
  const int c = batch.condition();
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t t = 1; t <= T; ++t) {
      const double resid = f[i][t - 1] - mean_estimator(t, c);
      out.value += resid * resid * inv_n;
      // f contains -log p_theta; M is held fixed on this side.
      out.d_logp[i][t - 1] = -2.0 * resid * inv_n;
      out.d_phi[mean_estimator.index(t, c)] -= 2.0 * resid * inv_n;
    }
  }
  return out;
}

// ---------------------------------------------------------------- PPO/GRPO

Vec grpo_advantage(std::span<const double> returns) {
  detail::require(returns.size() >= 2, "grpo_advantage: K must be >= 2");
  const double m = mean(returns);
  Vec out(returns.size());
  for (std::size_t i = 0; i < returns.size(); ++i) out[i] = returns[i] - m;
  return out;
}

double clipped_surrogate(double ratio, double advantage, double eps) {
  detail::require(eps >= 0.0 && eps < 1.0, "clipped_surrogate: eps must lie in [0, 1)");
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

double clipped_surrogate_grad(double ratio, double advantage, double eps) {
  detail::require(eps >= 0.0 && eps < 1.0, "clipped_surrogate: eps must lie in [0, 1)");
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  // The unclipped branch is selected whenever it is the minimum; inside the
  // trust region both branches coincide.
  return ratio * advantage <= clipped * advantage ? advantage : 0.0;
}

double kl_shaped_return(double G, double logp_policy, double logp_ref, double beta) {
  return G - beta * (logp_policy - logp_ref);
}

namespace {

LossResult clipped_objective(const RolloutBatch& batch, const std::vector<Vec>& advantages,
                             double eps, double normaliser) {
  const std::size_t K = batch.group_size();
  const std::size_t T = batch.steps();
  LossResult out;
  out.d_logp = zeros_like(batch);
  for (std::size_t i = 0; i < K; ++i) {
    const auto& traj = batch[i];
    for (std::size_t t = 0; t < T; ++t) {
      const double rho = std::exp(traj.logp_policy[t] - traj.logp_old[t]);
      const double a = advantages[i][t];
      out.value += clipped_surrogate(rho, a, eps) / normaliser;
      out.d_logp[i][t] = clipped_surrogate_grad(rho, a, eps) * rho / normaliser;
    }
  }
  return out;
}

}  // namespace

LossResult vmpo_clipped_objective(const RolloutBatch& batch, const PotentialSpec& potential,
                                  double eps, const CorrectionTable* correction) {
  const auto adv = group_mean_advantages(batch, potential, correction);
  return clipped_objective(batch, adv.values, eps, static_cast<double>(batch.group_size() - 1));
}

LossResult grpo_objective(const RolloutBatch& batch, double beta, double eps) {
  std::vector<Vec> shaped = zeros_like(batch);
  for (std::size_t i = 0; i < batch.group_size(); ++i) {
    const auto& traj = batch[i];
    for (std::size_t t = 0; t < batch.steps(); ++t) {
      shaped[i][t] = kl_shaped_return(traj.terminal_reward(), traj.logp_policy[t], traj.logp_ref[t], beta);
    }
  }
  center_over_group(shaped);
  return clipped_objective(batch, shaped, eps, static_cast<double>(batch.group_size()));
}

// ---------------------------------------------------------------- DB

LossResult detailed_balance_loss(const RolloutBatch& batch, const PotentialSpec& potential,
                                 const CorrectionTable* correction) {
  const std::size_t K = batch.group_size();
  const std::size_t T = batch.steps();
  const auto resid = per_step_log_weights(batch, potential, correction);
  const bool learn_f = potential.kind == PotentialKind::ForwardLooking && correction != nullptr;
  LossResult out;
  out.d_logp = zeros_like(batch);
  if (learn_f) out.d_correction.assign(correction->num_params(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(K * T);
  for (std::size_t i = 0; i < K; ++i) {
    const auto& traj = batch[i];
    for (std::size_t t = 1; t <= T; ++t) {
      const double r = resid[i][t - 1];
      out.value += r * r * inv_n;
      const double g = 2.0 * r * inv_n;
      out.d_logp[i][t - 1] = -g;
      if (!learn_f) continue;
      // residual contains (F_{t-1} r_{t-1} - F_t r_t) / beta; row 0 is fixed.
      const std::size_t keys = correction->keys();
      if (t - 1 >= 1) {
        out.d_correction[(t - 2) * keys + correction->key(traj, t - 1)] +=
            g * traj.rewards[t - 1] / potential.beta;
      }
      out.d_correction[(t - 1) * keys + correction->key(traj, t)] -= g * traj.rewards[t] / potential.beta;
    }
  }
  return out;
}

// ---------------------------------------------------------------- grad matching

GradMatchingResult grad_matching_loss(const GaussianChain& chain, const GaussianPolicy& policy,
                                      const RolloutBatch& batch, double beta, GradSide side) {
  detail::require(beta > 0.0, "grad_matching_loss: beta must be > 0");
  const std::size_t K = batch.group_size();
  const std::size_t T = batch.steps();
  const std::size_t d = chain.dim();
  GradMatchingResult out;
  out.d_theta.assign(policy.num_params(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(K * T);
  const bool use_prev = side != GradSide::Next;
  const bool use_next = side != GradSide::Prev;

  for (const auto& traj : batch.trajectories()) {
    if (traj.points.empty()) throw UnsupportedModel("grad_matching_loss: trajectory has no real-valued states");
    for (std::size_t t = 1; t <= T; ++t) {
      const Vec& x = traj.points[t];
      const Vec& x_prev = traj.points[t - 1];
      const auto e = policy.evaluate(chain, t, x, traj.condition);
      const Vec m_ref = chain.ref_mean(t, x);
      const double v_ref = chain.step_variance(t);
      Vec err(d);       // x_prev - m_theta
      Vec err_ref(d);   // x_prev - m_ref
      for (std::size_t j = 0; j < d; ++j) {
        err[j] = x_prev[j] - e.mean[j];
        err_ref[j] = x_prev[j] - m_ref[j];
      }
      Vec d_mean(d, 0.0);
      double d_logvar = 0.0;

      if (use_prev) {
        const Vec gr = chain.reward().gradient(x_prev);
        Vec R(d);
        for (std::size_t j = 0; j < d; ++j) R[j] = gr[j] / beta - err_ref[j] / v_ref + err[j] / e.var;
        for (std::size_t j = 0; j < d; ++j) {
          out.value += R[j] * R[j] * inv_n;
          const double gR = 2.0 * R[j] * inv_n;
          d_mean[j] -= gR / e.var;
          d_logvar -= gR * err[j] / e.var;
        }
      }
      if (use_next) {
        const Vec gr = chain.reward().gradient(x);
        const Vec jac_ref = chain.ref_mean_jacobian(t);
        const Matrix J = policy.mean_jacobian(chain, e);
        Vec q(d);
        for (std::size_t j = 0; j < d; ++j) q[j] = err[j] / e.var;
        Vec R(d);
        for (std::size_t i = 0; i < d; ++i) {
          double jt_q = 0.0;
          for (std::size_t j = 0; j < d; ++j) jt_q += J(j, i) * q[j];
          R[i] = jac_ref[i] * err_ref[i] / v_ref - jt_q - gr[i] / beta;
        }
        Vec gR(d);
        for (std::size_t i = 0; i < d; ++i) {
          out.value += R[i] * R[i] * inv_n;
          gR[i] = 2.0 * R[i] * inv_n;
        }
        for (std::size_t j = 0; j < d; ++j) {
          double j_gr = 0.0;
          for (std::size_t i = 0; i < d; ++i) j_gr += J(j, i) * gR[i];
          d_mean[j] += j_gr / e.var;
          d_logvar += j_gr * err[j] / e.var;
        }
        Vec neg_q(d);
        for (std::size_t j = 0; j < d; ++j) neg_q[j] = -q[j];
        policy.mean_jacobian_backward(chain, e, neg_q, gR, out.d_theta);
      }
      policy.backward(chain, e, d_mean, d_logvar, out.d_theta);
    }
  }
  return out;
}

GradMatchingResult grad_matching_loss(const TabularChain&, const TabularPolicy&,
                                      const RolloutBatch&, double, GradSide) {
  throw UnsupportedModel("grad_matching_loss: requires a continuous (Gaussian) chain");
}

// ---------------------------------------------------------------- KL(p || p_old)

KlPenalty kl_to_old(const TabularPolicy& policy, const TabularPolicy& old_policy,
                    const RolloutBatch& batch) {
  const std::size_t S = policy.num_states();
  KlPenalty out;
  out.d_theta.assign(policy.num_params(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.group_size() * batch.steps());
  for (const auto& traj : batch.trajectories()) {
    detail::require(traj.is_discrete(), "kl_to_old: tabular policy needs discrete trajectories");
    for (std::size_t t = 1; t <= batch.steps(); ++t) {
      const std::size_t x = traj.indices[t];
      const Vec p = policy.kernel_row(t, x);
      const Vec q = old_policy.kernel_row(t, x);
      out.value += exact_kl(p, q) * inv_n;
      Vec g(S, 0.0);
      double g_mean = 0.0;
      for (std::size_t j = 0; j < S; ++j) {
        if (p[j] == 0.0) continue;
        g[j] = std::log(p[j] / q[j]);
        g_mean += p[j] * g[j];
      }
      const std::size_t off = policy.offset(t, x);
      for (std::size_t k = 0; k < S; ++k) out.d_theta[off + k] += p[k] * (g[k] - g_mean) * inv_n;
    }
  }
  return out;
}

KlPenalty kl_to_old(const GaussianChain& chain, const GaussianPolicy& policy,
                    const GaussianPolicy& old_policy, const RolloutBatch& batch) {
  const std::size_t d = chain.dim();
  KlPenalty out;
  out.d_theta.assign(policy.num_params(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.group_size() * batch.steps());
  for (const auto& traj : batch.trajectories()) {
    if (traj.points.empty()) throw UnsupportedModel("kl_to_old: Gaussian policy needs real-valued states");
    for (std::size_t t = 1; t <= batch.steps(); ++t) {
      const auto e = policy.evaluate(chain, t, traj.points[t], traj.condition);
      const auto o = old_policy.evaluate(chain, t, traj.points[t], traj.condition);
      out.value += gaussian_kl(e.mean, e.var, o.mean, o.var) * inv_n;
      Vec d_mean(d);
      for (std::size_t j = 0; j < d; ++j) d_mean[j] = (e.mean[j] - o.mean[j]) / o.var * inv_n;
      const double d_logvar = 0.5 * static_cast<double>(d) * (e.var / o.var - 1.0) * inv_n;
      policy.backward(chain, e, d_mean, d_logvar, out.d_theta);
    }
  }
  return out;
}

}  // namespace vmpo
