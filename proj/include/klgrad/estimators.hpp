#pragma once

#include <span>
#include <string>

#include "klgrad/policy.hpp"

namespace klgrad {

/**
 * Scalar KL(pi, pi_ref) estimator family.
 *
 * Lambda(l) adds l * (pi_ref(y)/pi(y) - 1) to the vanilla log-ratio; the
 * added term has mean zero under pi, so every member except Squared is
 * unbiased. Lambda(0) == Vanilla and Lambda(1) == VarReduced.
 */
struct EstimatorKind {
  enum class Tag { Vanilla, VarReduced, Squared, Lambda };

  Tag tag = Tag::Vanilla;
  double lambda = 0.0;

  static EstimatorKind vanilla() { return {Tag::Vanilla, 0.0}; }
  static EstimatorKind var_reduced() { return {Tag::VarReduced, 1.0}; }
  static EstimatorKind squared() { return {Tag::Squared, 0.0}; }
  static EstimatorKind lambda_weighted(double l) { return {Tag::Lambda, l}; }
};

/// log pi(y) - log pi_ref(y).
double est_vanilla(const Policy& pi, const Policy& pi_ref, int y);

/// Log-ratio plus control variate: r + exp(-r) - 1 with r the log-ratio.
double est_var_reduced(const Policy& pi, const Policy& pi_ref, int y);

/// Half squared log-ratio; biased for KL.
double est_squared(const Policy& pi, const Policy& pi_ref, int y);

/// r + lambda * (exp(-r) - 1); unbiased for every lambda.
double est_lambda(const Policy& pi, const Policy& pi_ref, int y, double lambda);

/// Per-sample estimate dispatched on kind.
double estimate(const EstimatorKind& kind, const Policy& pi, const Policy& pi_ref, int y);

/// Arithmetic mean of per-sample estimates over a nonempty batch.
double batch_estimate(const EstimatorKind& kind, const Policy& pi, const Policy& pi_ref,
                      std::span<const int> ys);

/// Canonical kind label, e.g. "vanilla", "lambda(0.5)".
std::string kind_name(const EstimatorKind& kind);

} // namespace klgrad
