#pragma once

#include <cstddef>
#include <vector>

namespace vmpo {

// Variance-preserving signal/noise schedule, alpha_t^2 + sigma_t^2 = 1,
// indexed t = 0..T with alpha_0 = 1 (clean data).
class DiffusionSchedule {
 public:
  // Validates every invariant; throws InvalidArgument on violation.
  DiffusionSchedule(std::vector<double> alphas, std::vector<double> sigmas);

  std::size_t steps() const { return alphas_.size() - 1; }
  double alpha(std::size_t t) const { return alphas_.at(t); }
  double sigma(std::size_t t) const { return sigmas_.at(t); }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& sigmas() const { return sigmas_; }

  // Variance of the forward step q(x_t | x_{t-1}): 1 - alpha_t^2/alpha_{t-1}^2.
  double step_variance(std::size_t t) const;

 private:
  std::vector<double> alphas_;
  std::vector<double> sigmas_;
};

// alpha linear in t from 1 down to alpha_min, sigma = sqrt(1 - alpha^2).
DiffusionSchedule make_linear_schedule(std::size_t steps, double alpha_min);

}  // namespace vmpo
