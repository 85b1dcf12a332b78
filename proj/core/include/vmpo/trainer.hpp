#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vmpo/gaussian.hpp"
#include "vmpo/gaussian_policy.hpp"
#include "vmpo/objectives.hpp"
#include "vmpo/smc.hpp"
#include "vmpo/tabular.hpp"
#include "vmpo/types.hpp"

namespace vmpo {

enum class ModelKind { Tabular, Gaussian };

std::string_view to_string(ModelKind kind);
std::optional<ModelKind> parse_model_kind(std::string_view name);

struct TrainConfig {
  ModelKind model = ModelKind::Tabular;
  std::size_t num_states = 4;  // tabular
  std::size_t dim = 2;         // gaussian
  std::size_t steps = 3;
  double alpha_min = 0.3;      // gaussian schedule
  ObjectiveSpec objective{ObjectiveKind::VmpoAmortised, 0.5, 0.2, 0.0, {}};
  std::size_t group_size = 8;
  std::size_t rollouts_per_epoch = 64;
  std::size_t updates_per_epoch = 2;
  std::size_t epochs = 200;
  double lr_theta = 3e-2;
  double lr_phi = 3e-2;
  std::uint64_t seed = 0;
  bool reward_rescale = false;
  std::size_t eval_every = 1;
  std::string out_dir = "out";

  // Throws InvalidArgument naming the violated invariant.
  void validate() const;

  bool operator==(const TrainConfig&) const;
};

struct MetricsRow {
  std::size_t epoch = 0;
  double mean_reward = 0.0;
  double kl_to_ref = 0.0;
  double loss = 0.0;
  double ess = 0.0;
  std::optional<double> tv_to_tilt;  // tabular only
  double seconds = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

// ---------------------------------------------------------------- rollouts

// Intermediate reward track for a tabular trajectory: the potential's value
// table when present (rows 0..T), otherwise r(x_t) for t < T and 0 at T.
void fill_rewards(const TabularChain& chain, const PotentialSpec& potential, Trajectory& traj);
// r(x_0) at t = 0; r(x_hat_ref(x_t)) or r(x_t) for 0 < t < T; 0 at T.
void fill_rewards(const GaussianChain& chain, const PotentialSpec& potential, Trajectory& traj);

// Ancestral sample x_T ~ prior down to x_0 with every track populated.
// logp_old is set to logp_policy.
Trajectory sample_trajectory(const TabularChain& chain, const TabularPolicy& policy,
                             const PotentialSpec& potential, RngStream& rng);
Trajectory sample_trajectory(const GaussianChain& chain, const GaussianPolicy& policy,
                             const PotentialSpec& potential, RngStream& rng, int condition = 0);

RolloutBatch rollout(const TabularChain& chain, const TabularPolicy& policy, std::size_t K,
                     RngStream& rng, const PotentialSpec& potential = {});
RolloutBatch rollout(const GaussianChain& chain, const GaussianPolicy& policy, std::size_t K,
                     RngStream& rng, const PotentialSpec& potential = {}, int condition = 0);

// Recompute logp_policy under the current parameters.
void refresh_log_probs(const TabularPolicy& policy, Trajectory& traj);
void refresh_log_probs(const GaussianChain& chain, const GaussianPolicy& policy, Trajectory& traj);

// grad += sum_t d_logp[t-1] * d log p_theta(x_{t-1}|x_t) / d theta.
void accumulate_logp_grad(const TabularPolicy& policy, const Trajectory& traj,
                          std::span<const double> d_logp, std::span<double> grad);
void accumulate_logp_grad(const GaussianChain& chain, const GaussianPolicy& policy,
                          const Trajectory& traj, std::span<const double> d_logp,
                          std::span<double> grad);

// ---------------------------------------------------------------- optimiser

struct AdamState {
  Vec m;
  Vec v;
  Vec v_max;
  std::size_t step = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double max_grad_norm = 1.0;  // <= 0 disables clipping
  // Normalise by the running maximum of the bias-corrected second moment, so
  // steps shrink with the gradient instead of re-inflating once it vanishes.
  bool amsgrad = true;
};

// One AdamW update with global gradient-norm clipping. Returns the norm of
// the gradient actually applied (after clipping).
double adaptive_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                     double lr, const AdamOptions& options = {});

// ---------------------------------------------------------------- fixtures

// Random S-state, T-step chain with uniform prior and reward linear in the
// state index on [0, 1]. Depends only on (S, T, fixture_seed).
TabularChain make_standard_tabular_chain(std::size_t num_states, std::size_t steps,
                                         std::uint64_t fixture_seed = 7);

// d-dimensional chain over N(0, I) data whose reward is the log-density of
// a two-mode mixture displaced from the data mean.
GaussianChain make_mixture_toy_chain(std::size_t dim, std::size_t steps, double alpha_min);

// 1-D chain over N(0, 1) data with r(x) = -lambda (x - center)^2 / 2.
GaussianChain make_quadratic_chain(std::size_t steps, double alpha_min, double lambda,
                                   double center);

// ---------------------------------------------------------------- training

// Rollout/update epochs for a fixed chain. The chain is
// built from the config unless supplied explicitly.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& config);
  Trainer(const TrainConfig& config, TabularChain chain);
  Trainer(const TrainConfig& config, GaussianChain chain, GaussianPolicyOptions options);
  ~Trainer();
  Trainer(Trainer&&) noexcept;
  Trainer& operator=(Trainer&&) noexcept;

  const TrainConfig& config() const { return config_; }

  // Runs every remaining epoch. Throws NumericError on a non-finite loss.
  std::vector<MetricsRow> run();
  // One epoch; the row is present on eval epochs.
  std::optional<MetricsRow> run_epoch();
  std::size_t epochs_done() const;

  // Record wall-clock seconds in MetricsRow (zero otherwise).
  void set_timing(bool on) { timing_ = on; }

  const TabularChain* tabular_chain() const;
  const TabularPolicy* tabular_policy() const;
  const GaussianChain* gaussian_chain() const;
  const GaussianPolicy* gaussian_policy() const;
  const MeanEstimator& mean_estimator() const;
  const CorrectionTable& correction() const;
  const PotentialSpec& potential() const;

  // Current policy parameters, flattened.
  Vec theta() const;

  class Model;

 private:
  TrainConfig config_;
  bool timing_ = false;
  std::unique_ptr<Model> model_;
};

std::vector<MetricsRow> train(const TrainConfig& config);

}  // namespace vmpo
