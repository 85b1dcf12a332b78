#include "vmpo/types.hpp"

#include <array>
#include <utility>

#include "vmpo/errors.hpp"

namespace vmpo {

void Trajectory::validate() const {
  using detail::require;
  const std::size_t T = logp_policy.size();
  require(T >= 1, "trajectory: empty");
  require(logp_old.size() == T && logp_ref.size() == T,
          "trajectory: log-density tracks differ in length");
  require(rewards.size() == T + 1, "trajectory: rewards must have T+1 entries");
  require(indices.empty() != points.empty(),
          "trajectory: exactly one of indices/points must be populated");
  require(indices.empty() || indices.size() == T + 1,
          "trajectory: indices must have T+1 entries");
  require(points.empty() || points.size() == T + 1,
          "trajectory: points must have T+1 entries");
}

RolloutBatch::RolloutBatch(std::vector<Trajectory> trajectories)
    : trajs_(std::move(trajectories)) {
  detail::require(trajs_.size() >= 2, "rollout batch: group size K must be >= 2");
  const std::size_t T = trajs_.front().steps();
  const int c = trajs_.front().condition;
  for (const auto& tr : trajs_) {
    tr.validate();
    detail::require(tr.steps() == T, "rollout batch: trajectories differ in T");
    detail::require(tr.condition == c, "rollout batch: trajectories differ in condition");
  }
}

void ObjectiveSpec::validate() const {
  detail::require(beta > 0.0, "objective: beta must be > 0");
  detail::require(clip_eps >= 0.0 && clip_eps < 1.0, "objective: clip_eps must lie in [0, 1)");
  detail::require(kl_old_coeff >= 0.0, "objective: kl_old_coeff must be >= 0");
  detail::require(potential.beta > 0.0, "potential: beta must be > 0");
}

namespace {

constexpr std::array<std::pair<PotentialKind, std::string_view>, 3> kPotentialNames{{
    {PotentialKind::ReturnToGo, "return_to_go"},
    {PotentialKind::Difference, "difference"},
    {PotentialKind::ForwardLooking, "forward_looking"},
}};

constexpr std::array<std::pair<ObjectiveKind, std::string_view>, 6> kObjectiveNames{{
    {ObjectiveKind::VmpoAmortised, "vmpo_amortised"},
    {ObjectiveKind::VmpoMc, "vmpo_mc"},
    {ObjectiveKind::VmpoClipped, "vmpo_clipped"},
    {ObjectiveKind::Grpo, "grpo"},
    {ObjectiveKind::DetailedBalance, "detailed_balance"},
    {ObjectiveKind::GradMatching, "grad_matching"},
}};

}  // namespace

std::string_view to_string(PotentialKind kind) {
  for (const auto& [k, name] : kPotentialNames)
    if (k == kind) return name;
  return "?";
}

std::string_view to_string(ObjectiveKind kind) {
  for (const auto& [k, name] : kObjectiveNames)
    if (k == kind) return name;
  return "?";
}

std::optional<PotentialKind> parse_potential_kind(std::string_view name) {
  for (const auto& [k, n] : kPotentialNames)
    if (n == name) return k;
  return std::nullopt;
}

std::optional<ObjectiveKind> parse_objective_kind(std::string_view name) {
  for (const auto& [k, n] : kObjectiveNames)
    if (n == name) return k;
  return std::nullopt;
}

}  // namespace vmpo
