#include "klgrad/seq_estimators.hpp"

#include <cmath>
#include <stdexcept>

namespace klgrad {

namespace {

bool valid_inner(const GradEstimatorKind& inner) {
  switch (inner.tag) {
    case GradEstimatorKind::Tag::VanillaIncorrect:
    case GradEstimatorKind::Tag::VarReducedIncorrect:
    case GradEstimatorKind::Tag::VanillaCorrect:
      return true;
    default:
      return false;
  }
}

double token_coeff(const GradEstimatorKind& inner, double log_ratio) {
  switch (inner.tag) {
    case GradEstimatorKind::Tag::VanillaIncorrect: return 1.0;
    case GradEstimatorKind::Tag::VarReducedIncorrect: return 1.0 - std::exp(-log_ratio);
    case GradEstimatorKind::Tag::VanillaCorrect: return log_ratio;
    default: throw std::invalid_argument("grad_token_level: unsupported inner estimator");
  }
}

} // namespace

SeqGradKind SeqGradKind::token_level(const GradEstimatorKind& inner) {
  if (!valid_inner(inner))
    throw std::invalid_argument("SeqGradKind::token_level: inner must be vanilla_incorrect, "
                                "var_reduced_incorrect or vanilla_correct");
  return {Tag::TokenLevel, inner};
}

GradVector grad_token_level(const GradEstimatorKind& inner, const Trajectory& traj) {
  if (traj.steps.empty()) throw std::invalid_argument("grad_token_level: empty trajectory");
  GradVector g(static_cast<std::size_t>(traj.num_params), 0.0);
  for (const auto& step : traj.steps)
    add_step_score(g, step, token_coeff(inner, step.log_ratio), traj.vocab);
  return g;
}

GradVector grad_seq_vanilla(const Trajectory& traj) {
  if (traj.steps.empty()) throw std::invalid_argument("grad_seq_vanilla: empty trajectory");
  GradVector g(static_cast<std::size_t>(traj.num_params), 0.0);
  const double coeff = traj.log_ratio_sum();
  for (const auto& step : traj.steps) add_step_score(g, step, coeff, traj.vocab);
  return g;
}

GradVector grad_seq_loo(std::span<const Trajectory> trajs) {
  if (trajs.size() < 2) throw std::invalid_argument("grad_seq_loo: needs at least 2 trajectories");
  const auto n = trajs.size();
  std::vector<double> sums(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sums[i] = trajs[i].log_ratio_sum();
    total += sums[i];
  }
  GradVector g(static_cast<std::size_t>(trajs[0].num_params), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double baseline = (total - sums[i]) / static_cast<double>(n - 1);
    const double coeff = (sums[i] - baseline) / static_cast<double>(n);
    for (const auto& step : trajs[i].steps) add_step_score(g, step, coeff, trajs[i].vocab);
  }
  return g;
}

GradVector grad_cumulative(const Trajectory& traj) {
  if (traj.steps.empty()) throw std::invalid_argument("grad_cumulative: empty trajectory");
  GradVector g(static_cast<std::size_t>(traj.num_params), 0.0);
  double suffix = 0.0;
  for (auto it = traj.steps.rbegin(); it != traj.steps.rend(); ++it) {
    suffix += it->log_ratio;
    add_step_score(g, *it, suffix, traj.vocab);
  }
  return g;
}

GradVector seq_grad_batch(const SeqGradKind& kind, std::span<const Trajectory> trajs) {
  if (trajs.empty()) throw std::invalid_argument("seq_grad_batch: empty batch");
  if (kind.tag == SeqGradKind::Tag::SeqLOO) return grad_seq_loo(trajs);

  GradVector acc(static_cast<std::size_t>(trajs[0].num_params), 0.0);
  for (const auto& traj : trajs) {
    GradVector g;
    switch (kind.tag) {
      case SeqGradKind::Tag::TokenLevel: g = grad_token_level(kind.inner, traj); break;
      case SeqGradKind::Tag::SeqVanilla: g = grad_seq_vanilla(traj); break;
      case SeqGradKind::Tag::Cumulative: g = grad_cumulative(traj); break;
      default: throw std::logic_error("seq_grad_batch: unreachable");
    }
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
  }
  for (double& v : acc) v /= static_cast<double>(trajs.size());
  return acc;
}

std::string kind_name(const SeqGradKind& kind) {
  switch (kind.tag) {
    case SeqGradKind::Tag::TokenLevel: return "token_level(" + kind_name(kind.inner) + ")";
    case SeqGradKind::Tag::SeqVanilla: return "seq_vanilla";
    case SeqGradKind::Tag::SeqLOO: return "seq_loo";
    case SeqGradKind::Tag::Cumulative: return "cumulative";
  }
  throw std::logic_error("kind_name: unreachable");
}

} // namespace klgrad
