#include "vmpo/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "vmpo/errors.hpp"
#include "vmpo/numeric.hpp"

namespace vmpo {

namespace {
constexpr std::uint64_t kInitStream = ~std::uint64_t{0};
}  // namespace

std::string_view to_string(ModelKind kind) {
  return kind == ModelKind::Tabular ? "tabular" : "gaussian";
}

std::optional<ModelKind> parse_model_kind(std::string_view name) {
  if (name == "tabular") return ModelKind::Tabular;
  if (name == "gaussian") return ModelKind::Gaussian;
  return std::nullopt;
}

void TrainConfig::validate() const {
  objective.validate();
  detail::require(steps >= 1, "steps must be >= 1");
  detail::require(num_states >= 1, "num_states must be >= 1");
  detail::require(dim >= 1, "dim must be >= 1");
  detail::require(alpha_min > 0.0 && alpha_min < 1.0, "alpha_min must lie in (0, 1)");
  detail::require(group_size >= 2, "group_size must be >= 2 (K >= 2)");
  detail::require(rollouts_per_epoch >= group_size && rollouts_per_epoch % group_size == 0,
                  "rollouts_per_epoch must be a positive multiple of group_size");
  detail::require(updates_per_epoch >= 1, "updates_per_epoch must be >= 1");
  detail::require(eval_every >= 1, "eval_every must be >= 1");
  detail::require(std::isfinite(lr_theta) && lr_theta >= 0.0, "lr_theta must be >= 0");
  detail::require(std::isfinite(lr_phi) && lr_phi >= 0.0, "lr_phi must be >= 0");
  detail::require(!(model == ModelKind::Tabular && objective.kind == ObjectiveKind::GradMatching),
                  "grad_matching needs model = gaussian (no state gradient on a finite space)");
}

bool TrainConfig::operator==(const TrainConfig& o) const {
  const auto& a = objective;
  const auto& b = o.objective;
  return model == o.model && num_states == o.num_states && dim == o.dim && steps == o.steps &&
         alpha_min == o.alpha_min && a.kind == b.kind && a.beta == b.beta &&
         a.clip_eps == b.clip_eps && a.kl_old_coeff == b.kl_old_coeff &&
         a.potential.kind == b.potential.kind && group_size == o.group_size &&
         rollouts_per_epoch == o.rollouts_per_epoch && updates_per_epoch == o.updates_per_epoch &&
         epochs == o.epochs && lr_theta == o.lr_theta && lr_phi == o.lr_phi && seed == o.seed &&
         reward_rescale == o.reward_rescale && eval_every == o.eval_every && out_dir == o.out_dir;
}

// ---------------------------------------------------------------- rollouts

void fill_rewards(const TabularChain& chain, const PotentialSpec& potential, Trajectory& traj) {
  const std::size_t T = traj.indices.size() - 1;
  traj.rewards.assign(T + 1, 0.0);
  const auto& r = chain.reward();
  if (potential.value_table) {
    const Matrix& V = *potential.value_table;
    detail::require(V.rows() == T + 1 && V.cols() == chain.num_states(),
                    "fill_rewards: value table must be (T+1) x S");
    for (std::size_t t = 0; t <= T; ++t) traj.rewards[t] = V(t, traj.indices[t]);
    return;
  }
  for (std::size_t t = 0; t < T; ++t) traj.rewards[t] = r[traj.indices[t]];
}

void fill_rewards(const GaussianChain& chain, const PotentialSpec& potential, Trajectory& traj) {
  const std::size_t T = traj.points.size() - 1;
  traj.rewards.assign(T + 1, 0.0);
  const auto& r = chain.reward();
  traj.rewards[0] = r.value(traj.points[0]);
  for (std::size_t t = 1; t < T; ++t) {
    traj.rewards[t] = potential.data_prediction ? r.value(chain.ref_prediction(t, traj.points[t]))
                                                : r.value(traj.points[t]);
  }
}

Trajectory sample_trajectory(const TabularChain& chain, const TabularPolicy& policy,
                             const PotentialSpec& potential, RngStream& rng) {
  const std::size_t T = chain.steps();
  detail::require(policy.steps() == T && policy.num_states() == chain.num_states(),
                  "sample_trajectory: policy does not match chain");
  Trajectory traj;
  traj.indices.assign(T + 1, 0);
  traj.logp_policy.assign(T, 0.0);
  traj.logp_ref.assign(T, 0.0);
  traj.indices[T] = categorical_draw(chain.prior(), rng);
  for (std::size_t t = T; t >= 1; --t) {
    const std::size_t x = traj.indices[t];
    const Vec row = policy.kernel_row(t, x);
    const std::size_t x_prev = categorical_draw(row, rng);
    traj.indices[t - 1] = x_prev;
    traj.logp_policy[t - 1] = std::log(row[x_prev]);
    traj.logp_ref[t - 1] = std::log(chain.ref_prob(t, x, x_prev));
  }
  traj.logp_old = traj.logp_policy;
  fill_rewards(chain, potential, traj);
  return traj;
}

Trajectory sample_trajectory(const GaussianChain& chain, const GaussianPolicy& policy,
                             const PotentialSpec& potential, RngStream& rng, int condition) {
  const std::size_t T = chain.steps();
  const std::size_t d = chain.dim();
  Trajectory traj;
  traj.condition = condition;
  traj.points.assign(T + 1, Vec(d));
  traj.logp_policy.assign(T, 0.0);
  traj.logp_ref.assign(T, 0.0);
  const double prior_sd = std::sqrt(chain.prior_var());
  for (std::size_t j = 0; j < d; ++j) traj.points[T][j] = chain.prior_mean()[j] + prior_sd * rng.normal();
  for (std::size_t t = T; t >= 1; --t) {
    const auto e = policy.evaluate(chain, t, traj.points[t], condition);
    const double sd = std::sqrt(e.var);
    Vec& x_prev = traj.points[t - 1];
    for (std::size_t j = 0; j < d; ++j) x_prev[j] = e.mean[j] + sd * rng.normal();
    traj.logp_policy[t - 1] = policy.log_prob(e, x_prev);
    traj.logp_ref[t - 1] = chain.ref_logpdf(t, traj.points[t], x_prev);
  }
  traj.logp_old = traj.logp_policy;
  fill_rewards(chain, potential, traj);
  return traj;
}

RolloutBatch rollout(const TabularChain& chain, const TabularPolicy& policy, std::size_t K,
                     RngStream& rng, const PotentialSpec& potential) {
  std::vector<Trajectory> trajs;
  trajs.reserve(K);
  for (std::size_t i = 0; i < K; ++i) trajs.push_back(sample_trajectory(chain, policy, potential, rng));
  return RolloutBatch(std::move(trajs));
}

RolloutBatch rollout(const GaussianChain& chain, const GaussianPolicy& policy, std::size_t K,
                     RngStream& rng, const PotentialSpec& potential, int condition) {
  std::vector<Trajectory> trajs;
  trajs.reserve(K);
  for (std::size_t i = 0; i < K; ++i) {
    trajs.push_back(sample_trajectory(chain, policy, potential, rng, condition));
  }
  return RolloutBatch(std::move(trajs));
}

void refresh_log_probs(const TabularPolicy& policy, Trajectory& traj) {
  for (std::size_t t = 1; t <= traj.steps(); ++t) {
    traj.logp_policy[t - 1] = policy.log_prob(t, traj.indices[t], traj.indices[t - 1]);
  }
}

void refresh_log_probs(const GaussianChain& chain, const GaussianPolicy& policy, Trajectory& traj) {
  for (std::size_t t = 1; t <= traj.steps(); ++t) {
    const auto e = policy.evaluate(chain, t, traj.points[t], traj.condition);
    traj.logp_policy[t - 1] = policy.log_prob(e, traj.points[t - 1]);
  }
}

void accumulate_logp_grad(const TabularPolicy& policy, const Trajectory& traj,
                          std::span<const double> d_logp, std::span<double> grad) {
  detail::require_shape(d_logp.size(), traj.steps(), "accumulate_logp_grad: d_logp");
  detail::require_shape(grad.size(), policy.num_params(), "accumulate_logp_grad: grad");
  const std::size_t S = policy.num_states();
  for (std::size_t t = 1; t <= traj.steps(); ++t) {
    const double g = d_logp[t - 1];
    if (g == 0.0) continue;
    const std::size_t x = traj.indices[t];
    const Vec p = policy.kernel_row(t, x);
    const std::size_t off = policy.offset(t, x);
    for (std::size_t k = 0; k < S; ++k) grad[off + k] -= g * p[k];
    grad[off + traj.indices[t - 1]] += g;
  }
}

void accumulate_logp_grad(const GaussianChain& chain, const GaussianPolicy& policy,
                          const Trajectory& traj, std::span<const double> d_logp,
                          std::span<double> grad) {
  detail::require_shape(d_logp.size(), traj.steps(), "accumulate_logp_grad: d_logp");
  detail::require_shape(grad.size(), policy.num_params(), "accumulate_logp_grad: grad");
  const std::size_t d = chain.dim();
  for (std::size_t t = 1; t <= traj.steps(); ++t) {
    const double g = d_logp[t - 1];
    if (g == 0.0) continue;
    const auto e = policy.evaluate(chain, t, traj.points[t], traj.condition);
    Vec d_mean(d);
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double err = traj.points[t - 1][j] - e.mean[j];
      d_mean[j] = g * err / e.var;
      sq += err * err;
    }
    const double d_logvar = g * (-0.5 * static_cast<double>(d) + 0.5 * sq / e.var);
    policy.backward(chain, e, d_mean, d_logvar, grad);
  }
}

// ---------------------------------------------------------------- optimiser

double adaptive_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                     double lr, const AdamOptions& options) {
  detail::require_shape(grads.size(), params.size(), "adaptive_step: grads");
  const std::size_t n = params.size();
  if (state.m.size() != n) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
    state.v_max.assign(n, 0.0);
    state.step = 0;
  }
  double norm = 0.0;
  for (double g : grads) norm += g * g;
  norm = std::sqrt(norm);
  const double scale =
      options.max_grad_norm > 0.0 && norm > options.max_grad_norm ? options.max_grad_norm / norm : 1.0;
  ++state.step;
  const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i] * scale;
    state.m[i] = options.beta1 * state.m[i] + (1.0 - options.beta1) * g;
    state.v[i] = options.beta2 * state.v[i] + (1.0 - options.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    double v_hat = state.v[i] / c2;
    if (options.amsgrad) {
      state.v_max[i] = std::max(state.v_max[i], v_hat);
      v_hat = state.v_max[i];
    }
    params[i] -= lr * (m_hat / (std::sqrt(v_hat) + options.eps) + options.weight_decay * params[i]);
  }
  return norm * scale;
}

// ---------------------------------------------------------------- fixtures

TabularChain make_standard_tabular_chain(std::size_t num_states, std::size_t steps,
                                         std::uint64_t fixture_seed) {
  detail::require(num_states >= 1 && steps >= 1, "make_standard_tabular_chain: empty shape");
  RngStream rng(fixture_seed, 0);
  std::vector<Matrix> kernels;
  for (std::size_t t = 1; t <= steps; ++t) {
    Matrix K(num_states, num_states);
    for (std::size_t x = 0; x < num_states; ++x) {
      Vec logits(num_states);
      for (double& l : logits) l = rng.normal();
      const Vec p = softmax(logits);
      std::copy(p.begin(), p.end(), K.row(x).begin());
    }
    kernels.push_back(std::move(K));
  }
  Vec prior(num_states, 1.0 / static_cast<double>(num_states));
  Vec reward(num_states, 0.0);
  for (std::size_t x = 0; x < num_states && num_states > 1; ++x) {
    reward[x] = static_cast<double>(x) / static_cast<double>(num_states - 1);
  }
  return TabularChain(std::move(kernels), std::move(prior), std::move(reward));
}

GaussianChain make_mixture_toy_chain(std::size_t dim, std::size_t steps, double alpha_min) {
  detail::require(dim >= 1, "make_mixture_toy_chain: dim must be >= 1");
  Vec major(dim, 1.5);
  Vec minor(dim, 1.5);
  minor[0] = -1.5;
  auto reward = Reward::gaussian_mixture({major, minor}, 0.6, {0.7, 0.3});
  return make_gaussian_chain(make_linear_schedule(steps, alpha_min), Vec(dim, 0.0), 1.0,
                             std::move(reward));
}

GaussianChain make_quadratic_chain(std::size_t steps, double alpha_min, double lambda,
                                   double center) {
  return make_gaussian_chain(make_linear_schedule(steps, alpha_min), Vec{0.0}, 1.0,
                             Reward::quadratic(lambda, Vec{center}));
}

// ---------------------------------------------------------------- models

class Trainer::Model {
 public:
  Model(const TrainConfig& config, PotentialSpec potential, std::size_t correction_keys)
      : potential(std::move(potential)),
        mean_estimator(config.steps),
        correction(config.steps, correction_keys) {}
  virtual ~Model() = default;

  virtual Trajectory sample(RngStream& rng) const = 0;
  virtual void refresh(Trajectory& traj) const = 0;
  virtual std::size_t num_params() const = 0;
  virtual Vec params() const = 0;
  virtual void set_params(std::span<const double> flat) = 0;
  virtual void add_logp_grad(const Trajectory& traj, std::span<const double> d_logp,
                             std::span<double> grad) const = 0;
  virtual GradMatchingResult grad_matching(const RolloutBatch& batch, double beta) const = 0;
  virtual KlPenalty kl_old(const RolloutBatch& batch) const = 0;
  virtual void snapshot_old() = 0;
  virtual double kl_to_ref(std::span<const Trajectory> trajs) const = 0;
  virtual std::optional<double> tv_to_tilt() const = 0;

  PotentialSpec potential;
  MeanEstimator mean_estimator;
  CorrectionTable correction;
  AdamState adam_theta;
  AdamState adam_phi;
  AdamState adam_correction;
  std::size_t epoch = 0;
};

namespace {

class TabularModel final : public Trainer::Model {
 public:
  TabularModel(const TrainConfig& config, TabularChain chain_in)
      : Model(config, make_potential(config, chain_in), chain_in.num_states()),
        chain(std::move(chain_in)),
        policy(TabularPolicy::from_reference(chain)),
        old_policy(policy),
        target(soft_value_tilted_kernels(chain, config.objective.beta)) {
    detail::require(chain.steps() == config.steps, "Trainer: chain horizon differs from config.steps");
  }

  static PotentialSpec make_potential(const TrainConfig& config, const TabularChain& chain) {
    PotentialSpec p;
    p.kind = config.objective.potential.kind;
    p.beta = config.objective.beta;
    if (p.kind == PotentialKind::Difference) p.value_table = exact_soft_value(chain, p.beta);
    return p;
  }

  Trajectory sample(RngStream& rng) const override {
    return sample_trajectory(chain, policy, potential, rng);
  }
  void refresh(Trajectory& traj) const override { refresh_log_probs(policy, traj); }
  std::size_t num_params() const override { return policy.num_params(); }
  Vec params() const override {
    const auto p = policy.params();
    return Vec(p.begin(), p.end());
  }
  void set_params(std::span<const double> flat) override {
    std::copy(flat.begin(), flat.end(), policy.params().begin());
  }
  void add_logp_grad(const Trajectory& traj, std::span<const double> d_logp,
                     std::span<double> grad) const override {
    accumulate_logp_grad(policy, traj, d_logp, grad);
  }
  GradMatchingResult grad_matching(const RolloutBatch& batch, double beta) const override {
    grad_matching_loss(chain, policy, batch, beta, GradSide::Prev);
  }
  KlPenalty kl_old(const RolloutBatch& batch) const override {
    return kl_to_old(policy, old_policy, batch);
  }
  void snapshot_old() override { old_policy = policy; }

  double kl_to_ref(std::span<const Trajectory>) const override {
    double total = 0.0;
    for (std::size_t t = 1; t <= chain.steps(); ++t) {
      const Matrix& ref = chain.ref_kernel(t);
      for (std::size_t x = 0; x < chain.num_states(); ++x) {
        total += exact_kl(policy.kernel_row(t, x), ref.row(x));
      }
    }
    return total;
  }

  std::optional<double> tv_to_tilt() const override {
    double worst = 0.0;
    for (std::size_t t = 1; t <= chain.steps(); ++t) {
      for (std::size_t x = 0; x < chain.num_states(); ++x) {
        worst = std::max(worst, total_variation(policy.kernel_row(t, x), target[t - 1].row(x)));
      }
    }
    return worst;
  }

  TabularChain chain;
  TabularPolicy policy;
  TabularPolicy old_policy;
  std::vector<Matrix> target;
};

class GaussianModel final : public Trainer::Model {
 public:
  GaussianModel(const TrainConfig& config, GaussianChain chain_in, const GaussianPolicyOptions& options)
      : Model(config, make_potential(config), 1),
        chain(std::move(chain_in)),
        policy(make_policy(config, chain, options)),
        old_policy(policy) {
    detail::require(chain.steps() == config.steps, "Trainer: chain horizon differs from config.steps");
  }

  static PotentialSpec make_potential(const TrainConfig& config) {
    PotentialSpec p;
    p.kind = config.objective.potential.kind;
    p.beta = config.objective.beta;
    p.data_prediction = true;
    return p;
  }

  static GaussianPolicy make_policy(const TrainConfig& config, const GaussianChain& chain,
                                    const GaussianPolicyOptions& options) {
    RngStream init(config.seed, kInitStream);
    return GaussianPolicy(chain, options, init);
  }

  Trajectory sample(RngStream& rng) const override {
    return sample_trajectory(chain, policy, potential, rng);
  }
  void refresh(Trajectory& traj) const override { refresh_log_probs(chain, policy, traj); }
  std::size_t num_params() const override { return policy.num_params(); }
  Vec params() const override { return policy.flatten(); }
  void set_params(std::span<const double> flat) override { policy.unflatten(flat); }
  void add_logp_grad(const Trajectory& traj, std::span<const double> d_logp,
                     std::span<double> grad) const override {
    accumulate_logp_grad(chain, policy, traj, d_logp, grad);
  }
  GradMatchingResult grad_matching(const RolloutBatch& batch, double beta) const override {
    return grad_matching_loss(chain, policy, batch, beta, GradSide::Prev);
  }
  KlPenalty kl_old(const RolloutBatch& batch) const override {
    return kl_to_old(chain, policy, old_policy, batch);
  }
  void snapshot_old() override { old_policy = policy; }

  double kl_to_ref(std::span<const Trajectory> trajs) const override {
    double total = 0.0;
    for (const auto& traj : trajs) {
      for (std::size_t t = 1; t <= traj.steps(); ++t) {
        const auto e = policy.evaluate(chain, t, traj.points[t], traj.condition);
        total += gaussian_kl(e.mean, e.var, chain.ref_mean(t, traj.points[t]), chain.step_variance(t));
      }
    }
    return total / static_cast<double>(trajs.size());
  }

  std::optional<double> tv_to_tilt() const override { return std::nullopt; }

  GaussianChain chain;
  GaussianPolicy policy;
  GaussianPolicy old_policy;
};

GaussianPolicyOptions default_policy_options(const TrainConfig& config) {
  GaussianPolicyOptions o;
  o.learn_variance = config.objective.kind == ObjectiveKind::GradMatching;
  return o;
}

std::unique_ptr<Trainer::Model> make_model(const TrainConfig& config) {
  if (config.model == ModelKind::Tabular) {
    return std::make_unique<TabularModel>(config,
                                          make_standard_tabular_chain(config.num_states, config.steps));
  }
  return std::make_unique<GaussianModel>(config, make_mixture_toy_chain(config.dim, config.steps, config.alpha_min),
                                         default_policy_options(config));
}

void rescale_group(std::span<Trajectory> group) {
  Vec terminal(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) terminal[i] = group[i].terminal_reward();
  const double mu = mean(terminal);
  double var = 0.0;
  for (double r : terminal) var += (r - mu) * (r - mu);
  var /= static_cast<double>(group.size());
  const double sd = std::sqrt(var);
  const double inv = sd > 1e-8 ? 1.0 / sd : 1.0;
  for (auto& traj : group) {
    for (double& r : traj.rewards) r = (r - mu) * inv;
  }
}

// Names the first non-finite input feeding the loss, for the abort message.
std::string diagnose(std::size_t epoch, const std::vector<Trajectory>& trajs) {
  std::ostringstream msg;
  msg << "non-finite loss at epoch " << epoch;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& tr = trajs[i];
    for (std::size_t t = 1; t <= tr.steps(); ++t) {
      const char* term = nullptr;
      if (!std::isfinite(tr.logp_policy[t - 1])) term = "logp_policy";
      else if (!std::isfinite(tr.logp_ref[t - 1])) term = "logp_ref";
      else if (!std::isfinite(tr.logp_old[t - 1])) term = "logp_old";
      else if (!std::isfinite(tr.rewards[t - 1])) term = "reward(x_{t-1})";
      else if (!std::isfinite(tr.rewards[t])) term = "reward(x_t)";
      if (term) {
        msg << ", t=" << t << ", trajectory " << i << ", term " << term;
        return msg.str();
      }
    }
  }
  msg << ", term loss (all inputs finite)";
  return msg.str();
}

}  // namespace

// ---------------------------------------------------------------- Trainer

Trainer::Trainer(const TrainConfig& config) : config_(config) {
  config_.validate();
  model_ = make_model(config_);
}

Trainer::Trainer(const TrainConfig& config, TabularChain chain) : config_(config) {
  config_.validate();
  detail::require(config_.model == ModelKind::Tabular, "Trainer: config.model must be tabular");
  config_.num_states = chain.num_states();
  model_ = std::make_unique<TabularModel>(config_, std::move(chain));
}

Trainer::Trainer(const TrainConfig& config, GaussianChain chain, GaussianPolicyOptions options)
    : config_(config) {
  config_.validate();
  detail::require(config_.model == ModelKind::Gaussian, "Trainer: config.model must be gaussian");
  config_.dim = chain.dim();
  model_ = std::make_unique<GaussianModel>(config_, std::move(chain), options);
}

Trainer::~Trainer() = default;
Trainer::Trainer(Trainer&&) noexcept = default;
Trainer& Trainer::operator=(Trainer&&) noexcept = default;

std::size_t Trainer::epochs_done() const { return model_->epoch; }

const TabularChain* Trainer::tabular_chain() const {
  auto* m = dynamic_cast<const TabularModel*>(model_.get());
  return m ? &m->chain : nullptr;
}
const TabularPolicy* Trainer::tabular_policy() const {
  auto* m = dynamic_cast<const TabularModel*>(model_.get());
  return m ? &m->policy : nullptr;
}
const GaussianChain* Trainer::gaussian_chain() const {
  auto* m = dynamic_cast<const GaussianModel*>(model_.get());
  return m ? &m->chain : nullptr;
}
const GaussianPolicy* Trainer::gaussian_policy() const {
  auto* m = dynamic_cast<const GaussianModel*>(model_.get());
  return m ? &m->policy : nullptr;
}
const MeanEstimator& Trainer::mean_estimator() const { return model_->mean_estimator; }
const CorrectionTable& Trainer::correction() const { return model_->correction; }
const PotentialSpec& Trainer::potential() const { return model_->potential; }
Vec Trainer::theta() const { return model_->params(); }

std::vector<MetricsRow> Trainer::run() {
  std::vector<MetricsRow> rows;
  while (model_->epoch < config_.epochs) {
    if (auto row = run_epoch()) rows.push_back(*row);
  }
  return rows;
}

std::optional<MetricsRow> Trainer::run_epoch() {
  const auto start = std::chrono::steady_clock::now();
  Model& m = *model_;
  const TrainConfig& cfg = config_;
  const std::size_t epoch = m.epoch;
  const std::size_t R = cfg.rollouts_per_epoch;
  const std::size_t K = cfg.group_size;
  const std::size_t G = R / K;
  const ObjectiveSpec& obj = cfg.objective;
  const bool use_f = m.potential.kind == PotentialKind::ForwardLooking;
  const CorrectionTable* F = use_f ? &m.correction : nullptr;

  m.snapshot_old();
  std::vector<Trajectory> trajs;
  trajs.reserve(R);
  for (std::size_t i = 0; i < R; ++i) {
    RngStream rng(cfg.seed, static_cast<std::uint64_t>(epoch * R + i));
    trajs.push_back(m.sample(rng));
  }
  double raw_reward = 0.0;
  for (const auto& tr : trajs) raw_reward += tr.terminal_reward();
  raw_reward /= static_cast<double>(R);
  if (cfg.reward_rescale) {
    for (std::size_t g = 0; g < G; ++g) rescale_group(std::span(trajs).subspan(g * K, K));
  }

  const bool eval = epoch % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
  std::optional<MetricsRow> row;
  if (eval) {
    row.emplace();
    row->epoch = epoch;
    row->mean_reward = raw_reward;
    row->kl_to_ref = m.kl_to_ref(trajs);
    row->tv_to_tilt = m.tv_to_tilt();
    double ess_sum = 0.0;
    for (std::size_t g = 0; g < G; ++g) {
      Vec lw(K);
      for (std::size_t i = 0; i < K; ++i) lw[i] = trajectory_log_weight(m.potential, trajs[g * K + i], F);
      ess_sum += ess(make_weight_set(lw));
    }
    row->ess = ess_sum / static_cast<double>(G);
  }

  const std::size_t P = m.num_params();
  for (std::size_t u = 0; u < cfg.updates_per_epoch; ++u) {
    if (u > 0) {
      for (auto& tr : trajs) m.refresh(tr);
    }
    Vec grad_theta(P, 0.0);
    Vec grad_phi(m.mean_estimator.params().size(), 0.0);
    Vec grad_f(m.correction.num_params(), 0.0);
    double loss = 0.0;
    const double inv_g = 1.0 / static_cast<double>(G);

    for (std::size_t g = 0; g < G; ++g) {
      RolloutBatch batch({trajs.begin() + static_cast<std::ptrdiff_t>(g * K),
                          trajs.begin() + static_cast<std::ptrdiff_t>((g + 1) * K)});
      std::vector<Vec> d_logp;
      switch (obj.kind) {
        case ObjectiveKind::VmpoAmortised: {
          auto res = vmpo_amortised_loss(batch, m.potential, m.mean_estimator, F);
          loss += res.value * inv_g;
          d_logp = std::move(res.d_logp);
          for (std::size_t k = 0; k < grad_phi.size(); ++k) grad_phi[k] += res.d_phi[k] * inv_g;
          break;
        }
        case ObjectiveKind::VmpoMc:
          loss += vmpo_mc_loss(batch, m.potential, F) * inv_g;
          d_logp = vmpo_mc_grad(batch, m.potential, F);
          break;
        case ObjectiveKind::VmpoClipped:
        case ObjectiveKind::Grpo: {
          auto res = obj.kind == ObjectiveKind::Grpo
                         ? grpo_objective(batch, obj.beta, obj.clip_eps)
                         : vmpo_clipped_objective(batch, m.potential, obj.clip_eps, F);
          loss -= res.value * inv_g;
          d_logp = std::move(res.d_logp);
          for (auto& r : d_logp)
            for (double& v : r) v = -v;
          break;
        }
        case ObjectiveKind::DetailedBalance: {
          auto res = detailed_balance_loss(batch, m.potential, F);
          loss += res.value * inv_g;
          d_logp = std::move(res.d_logp);
          for (std::size_t k = 0; k < res.d_correction.size(); ++k) grad_f[k] += res.d_correction[k] * inv_g;
          break;
        }
        case ObjectiveKind::GradMatching: {
          auto res = m.grad_matching(batch, obj.beta);
          loss += res.value * inv_g;
          for (std::size_t k = 0; k < P; ++k) grad_theta[k] += res.d_theta[k] * inv_g;
          break;
        }
      }
      for (std::size_t i = 0; i < d_logp.size(); ++i) {
        for (double& v : d_logp[i]) v *= inv_g;
        m.add_logp_grad(batch[i], d_logp[i], grad_theta);
      }
      if (obj.kl_old_coeff > 0.0) {
        const auto pen = m.kl_old(batch);
        loss += obj.kl_old_coeff * pen.value * inv_g;
        for (std::size_t k = 0; k < P; ++k) grad_theta[k] += obj.kl_old_coeff * pen.d_theta[k] * inv_g;
      }
    }

    if (!std::isfinite(loss)) throw NumericError(diagnose(epoch, trajs));
    for (double v : grad_theta) {
      if (!std::isfinite(v)) throw NumericError(diagnose(epoch, trajs) + " (gradient)");
    }
    if (u == 0 && row) row->loss = loss;

    Vec theta = m.params();
    adaptive_step(theta, grad_theta, m.adam_theta, cfg.lr_theta);
    m.set_params(theta);
    if (obj.kind == ObjectiveKind::VmpoAmortised) {
      adaptive_step(m.mean_estimator.params(), grad_phi, m.adam_phi, cfg.lr_phi);
    }
    if (obj.kind == ObjectiveKind::DetailedBalance && use_f) {
      Vec f = m.correction.flatten();
      adaptive_step(f, grad_f, m.adam_correction, cfg.lr_phi);
      m.correction.unflatten(f);
    }
  }

  ++m.epoch;
  if (row && timing_) {
    row->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return row;
}

std::vector<MetricsRow> train(const TrainConfig& config) {
  Trainer trainer(config);
  return trainer.run();
}

}  // namespace vmpo
