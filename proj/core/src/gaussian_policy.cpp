#include "vmpo/gaussian_policy.hpp"

#include <cmath>

#include "vmpo/errors.hpp"

namespace vmpo {

GaussianPolicy::GaussianPolicy(const GaussianChain& chain, const GaussianPolicyOptions& options,
                               RngStream& init_rng)
    : dim_(chain.dim()),
      steps_(chain.steps()),
      learn_variance_(options.learn_variance),
      head_(2 * chain.dim() * chain.steps(), 0.0),
      logvar_(chain.steps(), 0.0),
      net_(chain.dim(), options.hidden, chain.steps(), options.num_conditions, init_rng) {}

std::size_t GaussianPolicy::num_params() const { return net_offset() + net_.num_params(); }

Vec GaussianPolicy::flatten() const {
  Vec out(num_params());
  std::copy(head_.begin(), head_.end(), out.begin());
  if (learn_variance_) std::copy(logvar_.begin(), logvar_.end(), out.begin() + logvar_offset());
  const auto net = net_.params();
  std::copy(net.begin(), net.end(), out.begin() + net_offset());
  return out;
}

void GaussianPolicy::unflatten(std::span<const double> flat) {
  detail::require_shape(flat.size(), num_params(), "GaussianPolicy::unflatten");
  std::copy(flat.begin(), flat.begin() + head_.size(), head_.begin());
  if (learn_variance_) {
    std::copy(flat.begin() + logvar_offset(), flat.begin() + net_offset(), logvar_.begin());
  }
  net_.unflatten(flat.subspan(net_offset()));
}

GaussianPolicy::Eval GaussianPolicy::evaluate(const GaussianChain& chain, std::size_t t,
                                              std::span<const double> x_t, int condition) const {
  detail::require(t >= 1 && t <= steps_, "GaussianPolicy: t outside [1, T]");
  detail::require_shape(x_t.size(), dim_, "GaussianPolicy state");
  Eval e;
  e.t = t;
  e.x_t.assign(x_t.begin(), x_t.end());
  const Vec residual = net_.forward(x_t, t, condition, e.cache);
  e.x_hat = chain.ref_prediction(t, x_t);
  const double* u = &head_[head_offset(t)];
  const double* w = u + dim_;
  for (std::size_t i = 0; i < dim_; ++i) e.x_hat[i] += u[i] * x_t[i] + w[i] + residual[i];
  e.mean = posterior_mean(chain.schedule(), t, x_t, e.x_hat);
  e.var = chain.step_variance(t) * std::exp(logvar_[t - 1]);
  return e;
}

double GaussianPolicy::log_prob(const Eval& eval, std::span<const double> x_prev) const {
  return gaussian_logpdf(x_prev, eval.mean, eval.var);
}

void GaussianPolicy::backward(const GaussianChain& chain, const Eval& eval,
                              std::span<const double> d_mean, double d_logvar,
                              std::span<double> grad) const {
  detail::require_shape(d_mean.size(), dim_, "GaussianPolicy::backward adjoint");
  detail::require_shape(grad.size(), num_params(), "GaussianPolicy::backward grad");
  const double b = posterior_coefficients(chain.schedule(), eval.t).prediction;
  Vec d_xhat(dim_);
  for (std::size_t i = 0; i < dim_; ++i) d_xhat[i] = b * d_mean[i];
  const std::size_t h = head_offset(eval.t);
  for (std::size_t i = 0; i < dim_; ++i) {
    grad[h + i] += d_xhat[i] * eval.x_t[i];
    grad[h + dim_ + i] += d_xhat[i];
  }
  if (learn_variance_) grad[logvar_offset() + eval.t - 1] += d_logvar;
  net_.backward(eval.cache, d_xhat, grad.subspan(net_offset()));
}

Matrix GaussianPolicy::mean_jacobian(const GaussianChain& chain, const Eval& eval) const {
  const auto c = posterior_coefficients(chain.schedule(), eval.t);
  Matrix J = net_.input_jacobian(eval.cache);
  for (std::size_t j = 0; j < dim_; ++j) {
    for (std::size_t i = 0; i < dim_; ++i) J(j, i) *= c.prediction;
  }
  const double* u = &head_[head_offset(eval.t)];
  const Vec& a = chain.ref_scale(eval.t);
  for (std::size_t i = 0; i < dim_; ++i) J(i, i) += c.state + c.prediction * (a[i] + u[i]);
  return J;
}

void GaussianPolicy::mean_jacobian_backward(const GaussianChain& chain, const Eval& eval,
                                            std::span<const double> u, std::span<const double> w,
                                            std::span<double> grad) const {
  detail::require_shape(u.size(), dim_, "mean_jacobian_backward u");
  detail::require_shape(w.size(), dim_, "mean_jacobian_backward w");
  detail::require_shape(grad.size(), num_params(), "mean_jacobian_backward grad");
  const double b = posterior_coefficients(chain.schedule(), eval.t).prediction;
  const std::size_t h = head_offset(eval.t);
  Vec bu(dim_);
  for (std::size_t i = 0; i < dim_; ++i) {
    grad[h + i] += b * u[i] * w[i];
    bu[i] = b * u[i];
  }
  net_.jacobian_backward(eval.cache, bu, w, grad.subspan(net_offset()));
}

}  // namespace vmpo

namespace vmpo {

GaussianPolicy quadratic_tilted_policy(const GaussianChain& chain, double lambda,
                                       std::span<const double> center, double beta,
                                       RngStream& init_rng, std::size_t hidden) {
  detail::require(beta > 0.0 && lambda >= 0.0, "quadratic_tilted_policy: need beta > 0, lambda >= 0");
  const std::size_t d = chain.dim();
  detail::require_shape(center.size(), d, "quadratic_tilted_policy center");
  GaussianPolicyOptions options;
  options.hidden = hidden;
  options.learn_variance = true;
  GaussianPolicy policy(chain, options, init_rng);
  Vec flat = policy.flatten();
  const std::size_t T = chain.steps();
  for (std::size_t t = 1; t <= T; ++t) {
    const auto c = posterior_coefficients(chain.schedule(), t);
    const double v = chain.step_variance(t);
    // Tilted mean kappa * m_ref + (1 - kappa) * center, variance kappa * v.
    const double kappa = (1.0 / v) / (1.0 / v + lambda / beta);
    const std::size_t h = (t - 1) * 2 * d;
    for (std::size_t i = 0; i < d; ++i) {
      const double s = chain.ref_scale(t)[i];
      const double sh = chain.ref_shift(t)[i];
      flat[h + i] = (kappa - 1.0) * (c.state + c.prediction * s) / c.prediction;
      flat[h + d + i] = (kappa - 1.0) * sh + (1.0 - kappa) * center[i] / c.prediction;
    }
    flat[2 * d * T + (t - 1)] = std::log(kappa);
  }
  policy.unflatten(flat);
  return policy;
}

}  // namespace vmpo
