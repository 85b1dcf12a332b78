#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "vmpo/matrix.hpp"
#include "vmpo/schedule.hpp"

namespace vmpo {

// Coefficients of the DDPM posterior mean
//   mean = a * x_t + b * x_hat
// with a = alpha_t sigma_{t-1}^2 / (alpha_{t-1} sigma_t^2) and
//      b = (alpha_{t-1}^2 - alpha_t^2) / (alpha_{t-1} sigma_t^2).
struct PosteriorCoefficients {
  double state;
  double prediction;
};

PosteriorCoefficients posterior_coefficients(const DiffusionSchedule& schedule, std::size_t t);

Vec posterior_mean(const DiffusionSchedule& schedule, std::size_t t, std::span<const double> x_t,
                   std::span<const double> x_hat);

// Isotropic normal log-density N(x; mean, var I).
double gaussian_logpdf(std::span<const double> x, std::span<const double> mean, double var);

enum class GradWrt { State, Mean };

// Gradient of gaussian_logpdf with respect to x or to the mean.
Vec grad_x_logpdf(std::span<const double> x, std::span<const double> mean, double var,
                  GradWrt wrt);

// KL(N(m1, v1 I) || N(m2, v2 I)).
double gaussian_kl(std::span<const double> m1, double v1, std::span<const double> m2, double v2);

struct TiltedGaussian {
  Vec mean;
  double var;
};

// Exact tilt of N(m, v I) by exp(r/beta) with r(x) = -lambda |x - c|^2 / 2.
TiltedGaussian quadratic_tilt_closed_form(std::span<const double> ref_mean, double ref_var,
                                          double lambda, std::span<const double> center,
                                          double beta);

// Reward on R^d with an analytic gradient.
class Reward {
 public:
  // -lambda |x - c|^2 / 2
  static Reward quadratic(double lambda, Vec center);
  // log sum_m w_m N(x; mu_m, stddev^2 I)
  static Reward gaussian_mixture(std::vector<Vec> means, double stddev, Vec weights);

  std::size_t dim() const;
  double value(std::span<const double> x) const;
  Vec gradient(std::span<const double> x) const;

 private:
  struct Quadratic {
    double lambda;
    Vec center;
  };
  struct Mixture {
    std::vector<Vec> means;
    double stddev;
    Vec log_weights;
  };
  explicit Reward(std::variant<Quadratic, Mixture> form) : form_(std::move(form)) {}

  std::variant<Quadratic, Mixture> form_;
};

// Continuous chain with an affine reference data predictor
//   x_hat_ref(x_t, t) = scale_t * x_t + shift_t   (elementwise),
// so every reference kernel N(posterior_mean, step_var_t I) is exactly
// Gaussian.
class GaussianChain {
 public:
  GaussianChain(DiffusionSchedule schedule, std::vector<Vec> ref_scale, std::vector<Vec> ref_shift,
                Vec step_variance, Vec prior_mean, double prior_var, Reward reward);

  std::size_t dim() const { return prior_mean_.size(); }
  std::size_t steps() const { return schedule_.steps(); }
  const DiffusionSchedule& schedule() const { return schedule_; }
  const Reward& reward() const { return reward_; }

  const Vec& ref_scale(std::size_t t) const { return ref_scale_.at(t - 1); }
  const Vec& ref_shift(std::size_t t) const { return ref_shift_.at(t - 1); }
  double step_variance(std::size_t t) const { return step_variance_.at(t - 1); }
  const Vec& prior_mean() const { return prior_mean_; }
  double prior_var() const { return prior_var_; }

  Vec ref_prediction(std::size_t t, std::span<const double> x_t) const;
  Vec ref_mean(std::size_t t, std::span<const double> x_t) const;
  double ref_logpdf(std::size_t t, std::span<const double> x_t,
                    std::span<const double> x_prev) const;
  // Diagonal of d ref_mean / d x_t.
  Vec ref_mean_jacobian(std::size_t t) const;

 private:
  DiffusionSchedule schedule_;
  std::vector<Vec> ref_scale_;
  std::vector<Vec> ref_shift_;
  Vec step_variance_;
  Vec prior_mean_;
  double prior_var_;
  Reward reward_;
};

// Reference model whose data distribution is N(data_mean, data_std^2 I):
// the predictor is the exact posterior mean E[x_0 | x_t], the step variance
// is the forward step variance 1 - alpha_t^2/alpha_{t-1}^2 and x_T is drawn
// from the exact noised marginal.
GaussianChain make_gaussian_chain(DiffusionSchedule schedule, Vec data_mean, double data_std,
                                  Reward reward);

}  // namespace vmpo
