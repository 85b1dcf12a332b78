#include "vmpo/schedule.hpp"

#include <cmath>
#include <string>

#include "vmpo/errors.hpp"

namespace vmpo {

DiffusionSchedule::DiffusionSchedule(std::vector<double> alphas,
                                     std::vector<double> sigmas)
    : alphas_(std::move(alphas)), sigmas_(std::move(sigmas)) {
  using detail::require;
  require(alphas_.size() >= 2, "schedule: need at least one step");
  require(alphas_.size() == sigmas_.size(), "schedule: alpha/sigma length mismatch");
  require(alphas_[0] == 1.0 && sigmas_[0] == 0.0,
          "schedule: alpha_0 must be 1 and sigma_0 must be 0");
  for (std::size_t t = 0; t < alphas_.size(); ++t) {
    const double a = alphas_[t];
    const double s = sigmas_[t];
    require(a > 0.0 && a <= 1.0, "schedule: alpha outside (0, 1]");
    require(s >= 0.0 && s < 1.0, "schedule: sigma outside [0, 1)");
    require(std::abs(a * a + s * s - 1.0) < 1e-12,
            "schedule: alpha^2 + sigma^2 != 1 at t=" + std::to_string(t));
    if (t > 0) {
      require(a < alphas_[t - 1], "schedule: alpha must strictly decrease");
    }
  }
}

double DiffusionSchedule::step_variance(std::size_t t) const {
  detail::require(t >= 1 && t <= steps(), "step_variance: t outside [1, T]");
  const double ratio = alphas_[t] / alphas_[t - 1];
  return 1.0 - ratio * ratio;
}

DiffusionSchedule make_linear_schedule(std::size_t steps, double alpha_min) {
  detail::require(steps >= 1, "make_linear_schedule: T must be >= 1");
  detail::require(alpha_min > 0.0 && alpha_min < 1.0,
                  "make_linear_schedule: alpha_min must lie in (0, 1)");
  std::vector<double> alphas(steps + 1);
  std::vector<double> sigmas(steps + 1);
  const double T = static_cast<double>(steps);
  for (std::size_t t = 0; t <= steps; ++t) {
    const double a = 1.0 - (1.0 - alpha_min) * static_cast<double>(t) / T;
    alphas[t] = a;
    sigmas[t] = std::sqrt((1.0 - a) * (1.0 + a));
  }
  alphas[steps] = alpha_min;
  return DiffusionSchedule(std::move(alphas), std::move(sigmas));
}

}  // namespace vmpo
