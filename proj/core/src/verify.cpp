#include "vmpo/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "vmpo/errors.hpp"
#include "vmpo/gaussian_policy.hpp"
#include "vmpo/objectives.hpp"
#include "vmpo/smc.hpp"
#include "vmpo/trainer.hpp"

namespace vmpo {

std::string format_check_line(const CheckReport& report) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6e", report.max_err);
  std::string line = "check=" + report.name + " status=" + (report.pass ? "pass" : "fail") +
                     " max_err=" + buf;
  if (!report.extra.empty()) line += " " + report.extra;
  return line;
}

TabularPolicy random_tabular_policy(std::size_t num_states, std::size_t steps, RngStream& rng,
                                    double scale) {
  TabularPolicy policy(num_states, steps);
  for (double& l : policy.params()) l = scale * rng.normal();
  return policy;
}

Prop1Report check_prop1_gradient_identity(const TabularChain& chain, const TabularPolicy& policy,
                                          double beta, std::size_t K, double tol) {
  const std::size_t S = chain.num_states();
  const std::size_t T = chain.steps();
  Prop1Report report{Matrix(T, S), 0.0, false};
  for (std::size_t t = 1; t <= T; ++t) {
    for (std::size_t x = 0; x < S; ++x) {
      const Vec mc = enumerate_expected_grad_mc(chain, policy, t, x, K, beta);
      const Vec exact = exact_kl_grad(chain, policy, t, x, beta);
      double worst = 0.0;
      for (std::size_t k = 0; k < S; ++k) worst = std::max(worst, std::abs(mc[k] - exact[k]));
      report.row_max(t - 1, x) = worst;
      report.max_err = std::max(report.max_err, worst);
    }
  }
  report.pass = report.max_err < tol;
  return report;
}

VarianceBound check_variance_bound(const TabularChain& chain, const TabularPolicy& policy,
                                   const PotentialSpec& spec) {
  const std::size_t S = chain.num_states();
  const std::size_t T = chain.steps();
  double paths = 1.0;
  for (std::size_t i = 0; i <= T; ++i) paths *= static_cast<double>(S);
  if (paths > static_cast<double>(kEnumerationLimit)) {
    throw SizeLimitError("check_variance_bound: S^(T+1) exceeds the enumeration limit");
  }
  const auto total = static_cast<std::size_t>(paths);

  // Weighted first and second moments of each log w_t and of their sum.
  Vec m1(T, 0.0), m2(T, 0.0);
  double s1 = 0.0, s2 = 0.0;
  Trajectory traj;
  traj.indices.assign(T + 1, 0);
  traj.logp_policy.assign(T, 0.0);
  traj.logp_ref.assign(T, 0.0);
  for (std::size_t n = 0; n < total; ++n) {
    double prob = chain.prior()[traj.indices[T]];
    for (std::size_t t = T; t >= 1 && prob > 0.0; --t) {
      const double p = std::exp(policy.log_prob(t, traj.indices[t], traj.indices[t - 1]));
      prob *= p;
      traj.logp_policy[t - 1] = std::log(p);
      traj.logp_ref[t - 1] = std::log(chain.ref_prob(t, traj.indices[t], traj.indices[t - 1]));
    }
    if (prob > 0.0) {
      traj.logp_old = traj.logp_policy;
      fill_rewards(chain, spec, traj);
      const Vec logu = log_potentials(spec, traj);
      double sum = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const double lw = traj.logp_ref[t] - traj.logp_policy[t] + logu[t];
        m1[t] += prob * lw;
        m2[t] += prob * lw * lw;
        sum += lw;
      }
      s1 += prob * sum;
      s2 += prob * sum * sum;
    }
    for (std::size_t i = 0; i <= T; ++i) {
      if (++traj.indices[i] < S) break;
      traj.indices[i] = 0;
    }
  }
  VarianceBound out;
  out.lhs = std::max(0.0, s2 - s1 * s1);
  double per_step = 0.0;
  for (std::size_t t = 0; t < T; ++t) per_step += std::max(0.0, m2[t] - m1[t] * m1[t]);
  out.rhs = static_cast<double>(T) * per_step;
  out.slack = out.rhs - out.lhs;
  return out;
}

FdReport finite_diff_check(const std::function<double(std::span<const double>)>& loss,
                           std::span<const double> analytic, std::span<const double> params,
                           double step, double tol) {
  detail::require(step > 0.0, "finite_diff_check: step must be > 0");
  detail::require_shape(analytic.size(), params.size(), "finite_diff_check analytic");
  Vec x(params.begin(), params.end());
  FdReport report;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = loss(x);
    x[i] = keep - step;
    const double down = loss(x);
    x[i] = keep;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (err > report.max_rel_err || !std::isfinite(err)) {
      report.max_rel_err = std::isfinite(err) ? err : INFINITY;
      report.worst_index = i;
    }
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

BiasReport check_biased_loss_unbiased_grad(const TabularChain& chain, double beta, std::size_t K,
                                           const TabularPolicy* policy) {
  const TabularPolicy ref = TabularPolicy::from_reference(chain);
  const TabularPolicy& pol = policy ? *policy : ref;
  BiasReport report;
  for (std::size_t t = 1; t <= chain.steps(); ++t) {
    for (std::size_t x = 0; x < chain.num_states(); ++x) {
      const auto mc = enumerate_mc_estimator(chain, pol, t, x, K, beta, chain.reward());
      const Vec exact = exact_kl_grad(chain, pol, t, x, beta);
      report.loss_bias = std::max(report.loss_bias, std::abs(mc.expected_loss - mc.variance_loss));
      for (std::size_t k = 0; k < exact.size(); ++k) {
        report.grad_gap = std::max(report.grad_gap, std::abs(mc.expected_grad[k] - exact[k]));
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------- suite

namespace {

std::string fmt(const char* key, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s=%.6e", key, v);
  return buf;
}

CheckReport from_fd(std::string name, const FdReport& fd) {
  return {std::move(name), fd.pass, fd.max_rel_err, {}};
}

// Worst of several finite-difference reports under one check name.
struct FdAccumulator {
  std::string name;
  double tol;
  double worst = 0.0;
  void add(const FdReport& r) { worst = std::max(worst, r.max_rel_err); }
  CheckReport report() const { return {name, worst < tol, worst, {}}; }
};

// Tabular loss closure: rebuild the policy from flat params, refresh the
// batch's policy log-densities and evaluate `eval`.
template <class Eval>
std::function<double(std::span<const double>)> tabular_closure(const TabularPolicy& base,
                                                               const RolloutBatch& batch, Eval eval) {
  return [base, batch, eval](std::span<const double> flat) {
    TabularPolicy p = base;
    std::copy(flat.begin(), flat.end(), p.params().begin());
    RolloutBatch b = batch;
    for (auto& tr : b.mutable_trajectories()) refresh_log_probs(p, tr);
    return eval(p, b);
  };
}

Vec tabular_grad(const TabularPolicy& policy, const RolloutBatch& batch,
                 const std::vector<Vec>& d_logp) {
  Vec g(policy.num_params(), 0.0);
  for (std::size_t i = 0; i < batch.group_size(); ++i) accumulate_logp_grad(policy, batch[i], d_logp[i], g);
  return g;
}

void tabular_fd_checks(const VerifySuiteOptions& o, const TabularChain& chain,
                       std::vector<CheckReport>& out) {
  const double tol = 1e-6;
  RngStream rng(o.seed, 101);
  const TabularPolicy policy = random_tabular_policy(chain.num_states(), chain.steps(), rng, 0.5);
  const TabularPolicy old = random_tabular_policy(chain.num_states(), chain.steps(), rng, 0.5);
  PotentialSpec diff{PotentialKind::Difference, o.beta, exact_soft_value(chain, o.beta), true};
  PotentialSpec fl{PotentialKind::ForwardLooking, o.beta, std::nullopt, true};
  RolloutBatch batch = rollout(chain, policy, 6, rng, diff);
  RolloutBatch batch_fl = rollout(chain, policy, 6, rng, fl);
  for (auto& tr : batch.mutable_trajectories()) tr.logp_old = Vec(tr.steps(), -1.0);
  const auto theta = policy.params();

  MeanEstimator M(chain.steps());
  for (std::size_t t = 1; t <= chain.steps(); ++t) M.at(t) = 0.1 * static_cast<double>(t);

  FdAccumulator acc{"fd_vmpo_amortised", tol};
  {
    auto res = vmpo_amortised_loss(batch, diff, M);
    acc.add(finite_diff_check(
        tabular_closure(policy, batch, [&](const TabularPolicy&, const RolloutBatch& b) {
          return vmpo_amortised_loss(b, diff, M).value;
        }),
        tabular_grad(policy, batch, res.d_logp), theta, 1e-5, tol));
    auto phi_loss = [&](std::span<const double> flat) {
      MeanEstimator m = M;
      std::copy(flat.begin(), flat.end(), m.params().begin());
      return vmpo_amortised_loss(batch, diff, m).value;
    };
    acc.add(finite_diff_check(phi_loss, res.d_phi, M.params(), 1e-5, tol));
  }
  out.push_back(acc.report());

  {
    auto d = vmpo_mc_grad(batch, diff);
    out.push_back(from_fd("fd_vmpo_mc",
                          finite_diff_check(tabular_closure(policy, batch,
                                                            [&](const TabularPolicy&, const RolloutBatch& b) {
                                                              return vmpo_mc_loss(b, diff);
                                                            }),
                                            tabular_grad(policy, batch, d), theta, 1e-5, tol)));
  }

  FdAccumulator db{"fd_detailed_balance", tol};
  {
    CorrectionTable F(chain.steps(), chain.num_states());
    RngStream frng(o.seed, 102);
    Vec f = F.flatten();
    for (double& v : f) v = 1.0 + 0.3 * frng.normal();
    F.unflatten(f);
    auto res = detailed_balance_loss(batch_fl, fl, &F);
    db.add(finite_diff_check(
        tabular_closure(policy, batch_fl, [&](const TabularPolicy&, const RolloutBatch& b) {
          return detailed_balance_loss(b, fl, &F).value;
        }),
        tabular_grad(policy, batch_fl, res.d_logp), theta, 1e-5, tol));
    auto f_loss = [&](std::span<const double> flat) {
      CorrectionTable g = F;
      g.unflatten(flat);
      return detailed_balance_loss(batch_fl, fl, &g).value;
    };
    db.add(finite_diff_check(f_loss, res.d_correction, f, 1e-5, tol));
  }
  out.push_back(db.report());

  {
    auto pen = kl_to_old(policy, old, batch);
    out.push_back(from_fd("fd_kl_to_old_tabular",
                          finite_diff_check(tabular_closure(policy, batch,
                                                            [&](const TabularPolicy& p, const RolloutBatch& b) {
                                                              return kl_to_old(p, old, b).value;
                                                            }),
                                            pen.d_theta, theta, 1e-5, tol)));
  }

  // Ratio derivative of the clipped surrogate away from the kinks.
  FdAccumulator clip{"fd_clipped_surrogate", tol};
  for (double ratio : {0.5, 0.95, 1.05, 1.5}) {
    for (double adv : {-1.3, 0.7}) {
      Vec r{ratio};
      Vec g{clipped_surrogate_grad(ratio, adv, 0.2)};
      clip.add(finite_diff_check([&](std::span<const double> x) { return clipped_surrogate(x[0], adv, 0.2); },
                                 g, r, 1e-5, tol));
    }
  }
  out.push_back(clip.report());
}

void gaussian_fd_checks(const VerifySuiteOptions& o, std::vector<CheckReport>& out) {
  const double tol = 1e-5;
  const GaussianChain chain = make_mixture_toy_chain(o.dim, o.steps, o.alpha_min);
  const std::size_t d = chain.dim();
  RngStream rng(o.seed, 201);

  FdAccumulator lp{"fd_gaussian_logpdf", tol};
  {
    Vec x(d), m(d);
    for (std::size_t j = 0; j < d; ++j) {
      x[j] = rng.normal();
      m[j] = rng.normal();
    }
    const double v = 0.7;
    lp.add(finite_diff_check([&](std::span<const double> z) { return gaussian_logpdf(z, m, v); },
                             grad_x_logpdf(x, m, v, GradWrt::State), x, 1e-5, tol));
    lp.add(finite_diff_check([&](std::span<const double> z) { return gaussian_logpdf(x, z, v); },
                             grad_x_logpdf(x, m, v, GradWrt::Mean), m, 1e-5, tol));
    lp.add(finite_diff_check([&](std::span<const double> z) { return chain.reward().value(z); },
                             chain.reward().gradient(x), x, 1e-5, tol));
  }
  out.push_back(lp.report());

  GaussianPolicyOptions opts;
  opts.hidden = 8;
  opts.learn_variance = true;
  GaussianPolicy policy(chain, opts, rng);
  Vec theta = policy.flatten();
  for (double& p : theta) p += 0.2 * rng.normal();
  policy.unflatten(theta);
  GaussianPolicy old = policy;
  {
    Vec t2 = theta;
    for (double& p : t2) p += 0.1 * rng.normal();
    old.unflatten(t2);
  }
  const RolloutBatch batch = rollout(chain, policy, 3, rng);
  auto closure = [&](auto eval) {
    return [&, eval](std::span<const double> flat) {
      GaussianPolicy p = policy;
      p.unflatten(flat);
      return eval(p);
    };
  };

  {
    // Sum of policy log-densities with unit adjoints.
    Vec g(policy.num_params(), 0.0);
    const Vec ones(batch.steps(), 1.0);
    for (const auto& tr : batch.trajectories()) accumulate_logp_grad(chain, policy, tr, ones, g);
    out.push_back(from_fd("fd_gaussian_policy_logp",
                          finite_diff_check(closure([&](const GaussianPolicy& p) {
                                              RolloutBatch b = batch;
                                              double s = 0.0;
                                              for (auto& tr : b.mutable_trajectories()) {
                                                refresh_log_probs(chain, p, tr);
                                                for (double l : tr.logp_policy) s += l;
                                              }
                                              return s;
                                            }),
                                            g, theta, 1e-5, tol)));
  }

  FdAccumulator gm{"fd_grad_matching", tol};
  for (GradSide side : {GradSide::Prev, GradSide::Next, GradSide::Both}) {
    auto res = grad_matching_loss(chain, policy, batch, o.beta, side);
    gm.add(finite_diff_check(closure([&, side](const GaussianPolicy& p) {
                               return grad_matching_loss(chain, p, batch, o.beta, side).value;
                             }),
                             res.d_theta, theta, 1e-5, tol));
  }
  out.push_back(gm.report());

  {
    auto pen = kl_to_old(chain, policy, old, batch);
    out.push_back(from_fd("fd_kl_to_old_gaussian",
                          finite_diff_check(closure([&](const GaussianPolicy& p) {
                                              return kl_to_old(chain, p, old, batch).value;
                                            }),
                                            pen.d_theta, theta, 1e-5, tol)));
  }
}

}  // namespace

std::vector<CheckReport> run_verify_suite(const VerifySuiteOptions& o) {
  std::vector<CheckReport> out;
  const TabularChain chain = make_standard_tabular_chain(o.num_states, o.steps);
  const std::size_t S = chain.num_states();
  RngStream rng(o.seed, 100);

  std::vector<TabularPolicy> policies{TabularPolicy::from_reference(chain),
                                      TabularPolicy::from_kernels(soft_value_tilted_kernels(chain, o.beta))};
  for (int i = 0; i < 3; ++i) policies.push_back(random_tabular_policy(S, o.steps, rng));

  {
    double worst = 0.0;
    for (std::size_t K : {2u, 3u}) {
      if (std::pow(static_cast<double>(S), static_cast<double>(K)) > kEnumerationLimit) continue;
      for (const auto& p : policies) {
        worst = std::max(worst, check_prop1_gradient_identity(chain, p, o.beta, K).max_err);
      }
    }
    out.push_back({"prop1_gradient_identity", worst < 1e-9, worst, {}});
  }

  {
    BiasReport worst;
    for (const auto& p : policies) {
      const auto r = check_biased_loss_unbiased_grad(chain, o.beta, 2, &p);
      worst.loss_bias = std::max(worst.loss_bias, r.loss_bias);
      worst.grad_gap = std::max(worst.grad_gap, r.grad_gap);
    }
    out.push_back({"biased_loss_unbiased_grad", worst.grad_gap < 1e-9, worst.grad_gap,
                   fmt("loss_bias", worst.loss_bias)});
  }

  {
    PotentialSpec raw_diff{PotentialKind::Difference, o.beta, std::nullopt, true};
    PotentialSpec r2g{PotentialKind::ReturnToGo, o.beta, std::nullopt, true};
    double min_slack = INFINITY;
    for (std::size_t i = 0; i < o.random_policies; ++i) {
      const auto p = random_tabular_policy(S, o.steps, rng);
      for (const auto* spec : {&raw_diff, &r2g}) {
        min_slack = std::min(min_slack, check_variance_bound(chain, p, *spec).slack);
      }
    }
    out.push_back({"variance_bound", min_slack >= -1e-10, std::max(0.0, -min_slack),
                   fmt("min_slack", min_slack)});

    PotentialSpec soft{PotentialKind::Difference, o.beta, exact_soft_value(chain, o.beta), true};
    const auto at_tilt = check_variance_bound(chain, policies[1], soft);
    const double err = std::max(at_tilt.lhs, at_tilt.rhs);
    out.push_back({"variance_zero_at_tilt", err < 1e-10, err, {}});
  }

  {
    double worst = 0.0;
    const TabularPolicy& ref = policies[0];
    for (PotentialKind kind : {PotentialKind::ReturnToGo, PotentialKind::Difference}) {
      PotentialSpec spec{kind, o.beta, std::nullopt, true};
      for (int i = 0; i < 1000; ++i) {
        const auto tr = sample_trajectory(chain, ref, spec, rng);
        worst = std::max(worst, std::abs(check_potential_constraint(spec, tr)));
      }
    }
    out.push_back({"potential_constraint", worst < 1e-12, worst, {}});
  }

  {
    const double lambda = 2.0, center = 1.0;
    const GaussianChain q = make_quadratic_chain(o.steps, o.alpha_min, lambda, center);
    RngStream init(o.seed, 300);
    const Vec c{center};
    const auto tilted = quadratic_tilted_policy(q, lambda, c, o.beta, init);
    const auto batch = rollout(q, tilted, 64, rng);
    const double loss = grad_matching_loss(q, tilted, batch, o.beta, GradSide::Prev).value;
    out.push_back({"grad_matching_at_tilt", loss < 1e-8, loss, {}});
  }

  tabular_fd_checks(o, chain, out);
  gaussian_fd_checks(o, out);
  return out;
}

}  // namespace vmpo
