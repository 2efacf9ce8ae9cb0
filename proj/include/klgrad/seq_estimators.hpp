#pragma once

#include <span>
#include <string>

#include "klgrad/grad_estimators.hpp"
#include "klgrad/tree_policy.hpp"

namespace klgrad {

/**
 * Sequence-level KL gradient estimator family.
 *
 * TokenLevel applies a per-token estimator independently at every step and
 * therefore captures at most the own-step part of the sequence gradient;
 * SeqVanilla, SeqLOO and Cumulative treat the sampled sequence as a single
 * outcome and are unbiased for the full gradient.
 */
struct SeqGradKind {
  enum class Tag { TokenLevel, SeqVanilla, SeqLOO, Cumulative };

  Tag tag = Tag::SeqVanilla;
  GradEstimatorKind inner = GradEstimatorKind::vanilla_correct(); // TokenLevel only

  static SeqGradKind token_level(const GradEstimatorKind& inner);
  static SeqGradKind seq_vanilla() { return {Tag::SeqVanilla, {}}; }
  static SeqGradKind seq_loo() { return {Tag::SeqLOO, {}}; }
  static SeqGradKind cumulative() { return {Tag::Cumulative, {}}; }
};

/**
 * Per-step token-level losses summed along a trajectory. inner must be one
 * of VanillaIncorrect, VarReducedIncorrect, VanillaCorrect.
 */
GradVector grad_token_level(const GradEstimatorKind& inner, const Trajectory& traj);

/// Whole-sequence estimator (sum_t log_ratio_t) * (sum_t score_t).
GradVector grad_seq_vanilla(const Trajectory& traj);

/**
 * Batch estimator with a sequence-level leave-one-out baseline: trajectory i
 * is weighted by its log-ratio sum minus the mean of the other sums.
 */
GradVector grad_seq_loo(std::span<const Trajectory> trajs);

/// Per-step score weighted by the suffix sum of log-ratios from that step on.
GradVector grad_cumulative(const Trajectory& traj);

/// Mean per-trajectory gradient for a batch (SeqLOO consumes the whole batch).
GradVector seq_grad_batch(const SeqGradKind& kind, std::span<const Trajectory> trajs);

/// Canonical kind label, e.g. "seq_vanilla", "token_level(vanilla_correct)".
std::string kind_name(const SeqGradKind& kind);

} // namespace klgrad
