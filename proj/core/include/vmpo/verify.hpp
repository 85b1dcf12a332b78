#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vmpo/gaussian.hpp"
#include "vmpo/matrix.hpp"
#include "vmpo/rng.hpp"
#include "vmpo/tabular.hpp"
#include "vmpo/types.hpp"

namespace vmpo {

// One machine-readable line: check=<name> status=<pass|fail> max_err=<float>
// followed by optional key=value extras.
struct CheckReport {
  std::string name;
  bool pass = false;
  double max_err = 0.0;
  std::string extra;
};

std::string format_check_line(const CheckReport& report);

// Logits drawn i.i.d. N(0, scale^2).
TabularPolicy random_tabular_policy(std::size_t num_states, std::size_t steps, RngStream& rng,
                                    double scale = 1.0);

// Enumerated E[gradient of the K-sample estimator] against the exact KL
// gradient, per (t, x_t).
struct Prop1Report {
  Matrix row_max;  // T x S, entry (t-1, x_t)
  double max_err = 0.0;
  bool pass = false;
};
Prop1Report check_prop1_gradient_identity(const TabularChain& chain, const TabularPolicy& policy,
                                          double beta, std::size_t K, double tol = 1e-9);

// Exact variances over every trajectory, weighted by prior x policy.
struct VarianceBound {
  double lhs = 0.0;    // V(log w_{0:T})
  double rhs = 0.0;    // T sum_t V(log w_t)
  double slack = 0.0;  // rhs - lhs
};
VarianceBound check_variance_bound(const TabularChain& chain, const TabularPolicy& policy,
                                   const PotentialSpec& spec);

struct FdReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  bool pass = false;
};

// Central differences, coordinate-wise. Relative error per coordinate is
// |a - n| / max(1, |a|, |n|).
FdReport finite_diff_check(const std::function<double(std::span<const double>)>& loss,
                           std::span<const double> analytic, std::span<const double> params,
                           double step = 1e-5, double tol = 1e-6);

struct BiasReport {
  double loss_bias = 0.0;  // max over rows |E[L_hat] - L_Var|
  double grad_gap = 0.0;   // max over rows |E[grad L_hat] - grad KL|
};
// Uses the reference policy unless one is given.
BiasReport check_biased_loss_unbiased_grad(const TabularChain& chain, double beta, std::size_t K,
                                           const TabularPolicy* policy = nullptr);

struct VerifySuiteOptions {
  std::size_t num_states = 4;
  std::size_t steps = 3;
  std::size_t dim = 2;
  double alpha_min = 0.3;
  double beta = 0.5;
  std::uint64_t seed = 0;
  std::size_t random_policies = 100;
};

// Every oracle check on the standard fixtures built from the options.
std::vector<CheckReport> run_verify_suite(const VerifySuiteOptions& options);

}  // namespace vmpo
