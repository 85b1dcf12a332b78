#include "vmpo/gaussian.hpp"

#include <cmath>
#include <numbers>

#include "vmpo/errors.hpp"
#include "vmpo/numeric.hpp"

namespace vmpo {

PosteriorCoefficients posterior_coefficients(const DiffusionSchedule& schedule, std::size_t t) {
  detail::require(t >= 1 && t <= schedule.steps(), "posterior_mean: t must lie in [1, T]");
  const double a_t = schedule.alpha(t);
  const double a_prev = schedule.alpha(t - 1);
  const double s_t = schedule.sigma(t);
  const double s_prev = schedule.sigma(t - 1);
  const double denom = a_prev * s_t * s_t;
  return {a_t * s_prev * s_prev / denom, (a_prev * a_prev - a_t * a_t) / denom};
}

Vec posterior_mean(const DiffusionSchedule& schedule, std::size_t t, std::span<const double> x_t,
                   std::span<const double> x_hat) {
  detail::require_shape(x_hat.size(), x_t.size(), "posterior_mean");
  const auto c = posterior_coefficients(schedule, t);
  Vec out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = c.state * x_t[i] + c.prediction * x_hat[i];
  return out;
}

double gaussian_logpdf(std::span<const double> x, std::span<const double> mean, double var) {
  detail::require(var > 0.0, "gaussian_logpdf: variance must be > 0");
  detail::require_shape(mean.size(), x.size(), "gaussian_logpdf");
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sq += (x[i] - mean[i]) * (x[i] - mean[i]);
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi * var) - sq / (2.0 * var);
}

Vec grad_x_logpdf(std::span<const double> x, std::span<const double> mean, double var,
                  GradWrt wrt) {
  detail::require(var > 0.0, "grad_x_logpdf: variance must be > 0");
  detail::require_shape(mean.size(), x.size(), "grad_x_logpdf");
  const double sign = wrt == GradWrt::State ? -1.0 : 1.0;
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = sign * (x[i] - mean[i]) / var;
  return g;
}

double gaussian_kl(std::span<const double> m1, double v1, std::span<const double> m2, double v2) {
  detail::require(v1 > 0.0 && v2 > 0.0, "gaussian_kl: variances must be > 0");
  detail::require_shape(m2.size(), m1.size(), "gaussian_kl");
  double sq = 0.0;
  for (std::size_t i = 0; i < m1.size(); ++i) sq += (m1[i] - m2[i]) * (m1[i] - m2[i]);
  const double d = static_cast<double>(m1.size());
  return 0.5 * d * (std::log(v2 / v1) + v1 / v2 - 1.0) + sq / (2.0 * v2);
}

TiltedGaussian quadratic_tilt_closed_form(std::span<const double> ref_mean, double ref_var,
                                          double lambda, std::span<const double> center,
                                          double beta) {
  detail::require(lambda >= 0.0, "quadratic_tilt: lambda must be >= 0");
  detail::require(ref_var > 0.0, "quadratic_tilt: variance must be > 0");
  detail::require(beta > 0.0, "quadratic_tilt: beta must be > 0");
  detail::require_shape(center.size(), ref_mean.size(), "quadratic_tilt");
  const double precision = 1.0 / ref_var + lambda / beta;
  TiltedGaussian out{Vec(ref_mean.size()), 1.0 / precision};
  for (std::size_t i = 0; i < ref_mean.size(); ++i) {
    out.mean[i] = (ref_mean[i] / ref_var + lambda * center[i] / beta) / precision;
  }
  return out;
}

// ---------------------------------------------------------------- reward

Reward Reward::quadratic(double lambda, Vec center) {
  detail::require(lambda >= 0.0, "quadratic reward: lambda must be >= 0");
  detail::require(!center.empty(), "quadratic reward: empty center");
  return Reward(Quadratic{lambda, std::move(center)});
}

Reward Reward::gaussian_mixture(std::vector<Vec> means, double stddev, Vec weights) {
  detail::require(!means.empty(), "mixture reward: no components");
  detail::require(weights.size() == means.size(), "mixture reward: weight count mismatch");
  detail::require(stddev > 0.0, "mixture reward: stddev must be > 0");
  double total = 0.0;
  for (double w : weights) {
    detail::require(w > 0.0, "mixture reward: weights must be > 0");
    total += w;
  }
  Vec log_w(weights.size());
  for (std::size_t m = 0; m < weights.size(); ++m) log_w[m] = std::log(weights[m] / total);
  for (const auto& mu : means) {
    detail::require(mu.size() == means.front().size(), "mixture reward: ragged means");
  }
  return Reward(Mixture{std::move(means), stddev, std::move(log_w)});
}

std::size_t Reward::dim() const {
  if (const auto* q = std::get_if<Quadratic>(&form_)) return q->center.size();
  return std::get<Mixture>(form_).means.front().size();
}

namespace {

Vec mixture_log_terms(const auto& mix, std::span<const double> x) {
  const double var = mix.stddev * mix.stddev;
  Vec terms(mix.means.size());
  for (std::size_t m = 0; m < mix.means.size(); ++m) {
    terms[m] = mix.log_weights[m] + gaussian_logpdf(x, mix.means[m], var);
  }
  return terms;
}

}  // namespace

double Reward::value(std::span<const double> x) const {
  detail::require_shape(x.size(), dim(), "reward");
  if (const auto* q = std::get_if<Quadratic>(&form_)) {
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) sq += (x[i] - q->center[i]) * (x[i] - q->center[i]);
    return -0.5 * q->lambda * sq;
  }
  return log_sum_exp(mixture_log_terms(std::get<Mixture>(form_), x));
}

Vec Reward::gradient(std::span<const double> x) const {
  detail::require_shape(x.size(), dim(), "reward");
  Vec g(x.size(), 0.0);
  if (const auto* q = std::get_if<Quadratic>(&form_)) {
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = -q->lambda * (x[i] - q->center[i]);
    return g;
  }
  const auto& mix = std::get<Mixture>(form_);
  const Vec resp = softmax(mixture_log_terms(mix, x));
  const double var = mix.stddev * mix.stddev;
  for (std::size_t m = 0; m < mix.means.size(); ++m) {
    for (std::size_t i = 0; i < x.size(); ++i) g[i] -= resp[m] * (x[i] - mix.means[m][i]) / var;
  }
  return g;
}

// ---------------------------------------------------------------- chain

GaussianChain::GaussianChain(DiffusionSchedule schedule, std::vector<Vec> ref_scale,
                             std::vector<Vec> ref_shift, Vec step_variance, Vec prior_mean,
                             double prior_var, Reward reward)
    : schedule_(std::move(schedule)),
      ref_scale_(std::move(ref_scale)),
      ref_shift_(std::move(ref_shift)),
      step_variance_(std::move(step_variance)),
      prior_mean_(std::move(prior_mean)),
      prior_var_(prior_var),
      reward_(std::move(reward)) {
  const std::size_t T = schedule_.steps();
  const std::size_t d = prior_mean_.size();
  detail::require(d >= 1, "gaussian chain: dimension must be >= 1");
  detail::require(ref_scale_.size() == T && ref_shift_.size() == T,
                  "gaussian chain: need one predictor per step");
  detail::require(step_variance_.size() == T, "gaussian chain: need one variance per step");
  detail::require(prior_var_ > 0.0, "gaussian chain: prior variance must be > 0");
  detail::require(reward_.dim() == d, "gaussian chain: reward dimension mismatch");
  for (std::size_t t = 0; t < T; ++t) {
    detail::require(ref_scale_[t].size() == d && ref_shift_[t].size() == d,
                    "gaussian chain: predictor dimension mismatch");
    detail::require(step_variance_[t] > 0.0, "gaussian chain: step variance must be > 0");
  }
}

Vec GaussianChain::ref_prediction(std::size_t t, std::span<const double> x_t) const {
  const Vec& a = ref_scale(t);
  const Vec& b = ref_shift(t);
  Vec out(dim());
  for (std::size_t i = 0; i < dim(); ++i) out[i] = a[i] * x_t[i] + b[i];
  return out;
}

Vec GaussianChain::ref_mean(std::size_t t, std::span<const double> x_t) const {
  return posterior_mean(schedule_, t, x_t, ref_prediction(t, x_t));
}

double GaussianChain::ref_logpdf(std::size_t t, std::span<const double> x_t,
                                 std::span<const double> x_prev) const {
  return gaussian_logpdf(x_prev, ref_mean(t, x_t), step_variance(t));
}

Vec GaussianChain::ref_mean_jacobian(std::size_t t) const {
  const auto c = posterior_coefficients(schedule_, t);
  Vec diag(dim());
  for (std::size_t i = 0; i < dim(); ++i) diag[i] = c.state + c.prediction * ref_scale(t)[i];
  return diag;
}

GaussianChain make_gaussian_chain(DiffusionSchedule schedule, Vec data_mean, double data_std,
                                  Reward reward) {
  detail::require(data_std > 0.0, "make_gaussian_chain: data_std must be > 0");
  const std::size_t T = schedule.steps();
  const std::size_t d = data_mean.size();
  const double s2 = data_std * data_std;
  std::vector<Vec> scale(T, Vec(d));
  std::vector<Vec> shift(T, Vec(d));
  Vec step_var(T);
  for (std::size_t t = 1; t <= T; ++t) {
    const double a = schedule.alpha(t);
    const double s = schedule.sigma(t);
    // E[x_0 | x_t] = mu + c (x_t - a mu),  c = a s0^2 / (a^2 s0^2 + s^2)
    const double c = a * s2 / (a * a * s2 + s * s);
    for (std::size_t i = 0; i < d; ++i) {
      scale[t - 1][i] = c;
      shift[t - 1][i] = data_mean[i] * (1.0 - c * a);
    }
    step_var[t - 1] = schedule.step_variance(t);
  }
  const double a_T = schedule.alpha(T);
  const double s_T = schedule.sigma(T);
  Vec prior_mean(d);
  for (std::size_t i = 0; i < d; ++i) prior_mean[i] = a_T * data_mean[i];
  const double prior_var = a_T * a_T * s2 + s_T * s_T;
  return GaussianChain(std::move(schedule), std::move(scale), std::move(shift), std::move(step_var),
                       std::move(prior_mean), prior_var, std::move(reward));
}

}  // namespace vmpo
