#pragma once

#include <cstddef>
#include <span>

#include "vmpo/gaussian.hpp"
#include "vmpo/mean_net.hpp"

namespace vmpo {

struct GaussianPolicyOptions {
  std::size_t hidden = 16;
  std::size_t num_conditions = 1;
  // Learn a per-step log-variance offset on top of the chain's step
  // variance. Needed when the target kernel's variance differs from the
  // reference (quadratic tilts).
  bool learn_variance = false;
};

// Denoising policy N(x_{t-1}; posterior_mean(x_t, x_hat_theta), v_t I) with
//   x_hat_theta = x_hat_ref(x_t, t) + u_t * x_t + w_t + net(x_t, t, c)
//   v_t         = step_var_t * exp(s_t)       (s_t = 0 unless learned).
// All corrections start at zero, so a fresh policy equals the reference.
// Flat parameters: [u_1 w_1 ... u_T w_T | s_1..s_T (if learned) | net].
class GaussianPolicy {
 public:
  GaussianPolicy(const GaussianChain& chain, const GaussianPolicyOptions& options,
                 RngStream& init_rng);

  std::size_t dim() const { return dim_; }
  std::size_t steps() const { return steps_; }
  std::size_t num_params() const;
  bool learns_variance() const { return learn_variance_; }

  Vec flatten() const;
  void unflatten(std::span<const double> flat);

  const MeanNet& net() const { return net_; }

  struct Eval {
    std::size_t t = 0;
    Vec x_t;
    Vec x_hat;
    Vec mean;
    double var = 1.0;
    MeanNetCache cache;
  };

  Eval evaluate(const GaussianChain& chain, std::size_t t, std::span<const double> x_t,
                int condition) const;
  double log_prob(const Eval& eval, std::span<const double> x_prev) const;

  // Adds the parameter gradient of <d_mean, mean> + d_logvar * log v_t.
  void backward(const GaussianChain& chain, const Eval& eval, std::span<const double> d_mean,
                double d_logvar, std::span<double> grad) const;

  // d mean / d x_t.
  Matrix mean_jacobian(const GaussianChain& chain, const Eval& eval) const;

  // Adds d(u^T (d mean/d x_t) w)/d theta at fixed x_t.
  void mean_jacobian_backward(const GaussianChain& chain, const Eval& eval,
                              std::span<const double> u, std::span<const double> w,
                              std::span<double> grad) const;

 private:
  std::size_t head_offset(std::size_t t) const { return (t - 1) * 2 * dim_; }
  std::size_t logvar_offset() const { return 2 * dim_ * steps_; }
  std::size_t net_offset() const { return logvar_offset() + (learn_variance_ ? steps_ : 0); }

  std::size_t dim_;
  std::size_t steps_;
  bool learn_variance_;
  Vec head_;     // u_t, w_t per step
  Vec logvar_;   // s_t per step
  MeanNet net_;
};

}  // namespace vmpo

namespace vmpo {

// Policy whose step-t kernel is the exact tilt of the reference kernel by
// exp(r(x_{t-1})/beta) for r(x) = -lambda |x - center|^2 / 2. The tilt of an
// affine-mean Gaussian stays affine, so only the per-step head and the
// log-variance offsets are set; the residual net keeps its zero output.
GaussianPolicy quadratic_tilted_policy(const GaussianChain& chain, double lambda,
                                       std::span<const double> center, double beta,
                                       RngStream& init_rng, std::size_t hidden = 16);

}  // namespace vmpo
