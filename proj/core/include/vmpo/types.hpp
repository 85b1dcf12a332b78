#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vmpo/matrix.hpp"

namespace vmpo {

// One denoising rollout. Everything is indexed by diffusion time: index t
// refers to x_t, and per-transition tracks use index t-1 for the move
// x_t -> x_{t-1}, t = 1..T.
//
// Exactly one of `indices` (finite state space) or `points` (real vectors)
// is populated, with T+1 entries.
struct Trajectory {
  std::vector<std::size_t> indices;
  std::vector<Vec> points;

  std::vector<double> logp_policy;  // log p_theta(x_{t-1} | x_t)
  std::vector<double> logp_old;     // behaviour policy
  std::vector<double> logp_ref;     // reference model
  // Intermediate reward r(x_t). rewards[0] is the terminal reward of the
  // clean sample; rewards[T] is the value assigned to pure noise.
  std::vector<double> rewards;
  int condition = 0;

  std::size_t steps() const { return logp_policy.size(); }
  bool is_discrete() const { return !indices.empty(); }
  double terminal_reward() const { return rewards.front(); }

  // Throws InvalidArgument if track lengths are inconsistent.
  void validate() const;
};

// K >= 2 trajectories sharing one condition and horizon.
class RolloutBatch {
 public:
  explicit RolloutBatch(std::vector<Trajectory> trajectories);

  std::size_t group_size() const { return trajs_.size(); }
  std::size_t steps() const { return trajs_.front().steps(); }
  int condition() const { return trajs_.front().condition; }

  const std::vector<Trajectory>& trajectories() const { return trajs_; }
  std::vector<Trajectory>& mutable_trajectories() { return trajs_; }
  const Trajectory& operator[](std::size_t i) const { return trajs_[i]; }

 private:
  std::vector<Trajectory> trajs_;
};

enum class PotentialKind { ReturnToGo, Difference, ForwardLooking };

enum class ObjectiveKind {
  VmpoAmortised,
  VmpoMc,
  VmpoClipped,
  Grpo,
  DetailedBalance,
  GradMatching,
};

// How intermediate rewards enter the per-step importance weight.
struct PotentialSpec {
  PotentialKind kind = PotentialKind::Difference;
  double beta = 1.0;
  // Tabular only: (T+1) x S table of intermediate rewards, typically exact
  // soft values. Absent means the raw state reward is used.
  std::optional<Matrix> value_table;
  // Gaussian only: intermediate rewards from the one-step data prediction
  // r(x_hat(x_t, t)). When false the reward is evaluated on x_t directly.
  bool data_prediction = true;
};

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::VmpoAmortised;
  double beta = 1.0;
  double clip_eps = 0.2;
  double kl_old_coeff = 0.0;
  PotentialSpec potential;

  // beta > 0, clip_eps in [0, 1), kl_old_coeff >= 0.
  void validate() const;
};

std::string_view to_string(PotentialKind kind);
std::string_view to_string(ObjectiveKind kind);
std::optional<PotentialKind> parse_potential_kind(std::string_view name);
std::optional<ObjectiveKind> parse_objective_kind(std::string_view name);

}  // namespace vmpo
