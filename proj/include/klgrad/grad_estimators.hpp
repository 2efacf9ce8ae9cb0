#pragma once

#include <span>
#include <string>

#include "klgrad/policy.hpp"

namespace klgrad {

/**
 * KL(pi, pi_ref) gradient estimator family.
 *
 * The *Incorrect kinds are the closed-form derivatives of the scalar KL
 * estimates (what auto-differentiating the estimate as a loss yields);
 * only their names admit what their expectations actually are:
 * VanillaIncorrect has zero mean, VarReducedIncorrect estimates the
 * reverse-KL gradient, LambdaIncorrect(l) estimates l times it. The
 * Correct kinds are score-function estimators of the forward gradient.
 */
struct GradEstimatorKind {
  enum class Tag {
    VanillaIncorrect,
    VarReducedIncorrect,
    LambdaIncorrect,
    VanillaCorrect,
    VanillaCorrectLOO,
    Analytic,
  };

  Tag tag = Tag::VanillaCorrect;
  double lambda = 0.0;

  static GradEstimatorKind vanilla_incorrect() { return {Tag::VanillaIncorrect, 0.0}; }
  static GradEstimatorKind var_reduced_incorrect() { return {Tag::VarReducedIncorrect, 1.0}; }
  static GradEstimatorKind lambda_incorrect(double l) { return {Tag::LambdaIncorrect, l}; }
  static GradEstimatorKind vanilla_correct() { return {Tag::VanillaCorrect, 0.0}; }
  static GradEstimatorKind vanilla_correct_loo() { return {Tag::VanillaCorrectLOO, 0.0}; }
  static GradEstimatorKind analytic() { return {Tag::Analytic, 0.0}; }
};

/// Derivative of est_vanilla: just score(pi, y). Zero mean under pi.
GradVector grad_vanilla_incorrect(const Policy& pi, const Policy& pi_ref, int y);

/// Derivative of est_var_reduced: (1 - pi_ref(y)/pi(y)) * score(pi, y).
GradVector grad_var_reduced_incorrect(const Policy& pi, const Policy& pi_ref, int y);

/// Derivative of est_lambda: (1 - lambda * pi_ref(y)/pi(y)) * score(pi, y).
GradVector grad_lambda_incorrect(const Policy& pi, const Policy& pi_ref, int y, double lambda);

/**
 * Score-function estimator (est_vanilla(y) - baseline) * score(pi, y).
 * Unbiased for the forward KL gradient under any y-independent baseline;
 * it is also what differentiating est_squared yields at baseline 0.
 */
GradVector grad_vanilla_correct(const Policy& pi, const Policy& pi_ref, int y,
                                double baseline = 0.0);

/**
 * Mean of per-sample gradients over a batch. VanillaCorrectLOO gives each
 * sample the leave-one-out mean of the others' est_vanilla values as its
 * baseline (requires n >= 2); Analytic ignores the batch and returns
 * exact_kl_grad. `baseline` applies to VanillaCorrect only.
 */
GradVector grad_batch(const GradEstimatorKind& kind, const Policy& pi, const Policy& pi_ref,
                      std::span<const int> ys, double baseline = 0.0);

/**
 * Exact expectation sum_y pi(y) * per-sample-gradient(y), the ground truth
 * for bias tests. For the batch-defined kinds (VanillaCorrectLOO, Analytic)
 * this is exact_kl_grad, their expectation at any batch size.
 */
GradVector expected_grad(const GradEstimatorKind& kind, const Policy& pi, const Policy& pi_ref);

/// Canonical kind label, e.g. "vanilla_correct", "lambda_incorrect(2)".
std::string kind_name(const GradEstimatorKind& kind);

} // namespace klgrad
