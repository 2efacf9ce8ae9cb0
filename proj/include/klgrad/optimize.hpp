#pragma once

#include <span>
#include <vector>

#include "klgrad/grad_estimators.hpp"
#include "klgrad/policy.hpp"
#include "klgrad/rng.hpp"

namespace klgrad {

/// Reward maximization regularized toward pi_ref: max E_pi[r] - beta * KL(pi, pi_ref).
struct RegularizedProblem {
  Policy pi_ref;
  std::vector<double> reward;
  double beta = 1.0;

  RegularizedProblem(Policy ref, std::vector<double> r, double b);
};

/// One optimization step's recorded metrics. Fields that do not apply hold NaN.
struct OptStepRecord {
  int step = 0;
  double kl_to_ref = 0.0;
  double kl_to_star = 0.0;
  double kl_to_star_rev = 0.0;
  double normalized_kl = 0.0; // primary metric over its own step-0 value
};

struct OptTrace {
  std::vector<OptStepRecord> records; // steps + 1 entries, step 0 first

  /// Mean of a field over the last tenth of the records ("converged" value).
  double converged(double OptStepRecord::* field) const;
};

/// Closed-form optimizer of the forward-KL problem: softmax(logits_ref + r / beta).
Policy optimal_policy_star(const RegularizedProblem& prob);

/**
 * Dual variable lambda* of the reverse-KL problem, found by bisection of
 * sum_y beta * pi_ref(y) / (lambda - r(y)) = 1 on (max r, max r + beta].
 */
double solve_rev_dual(const RegularizedProblem& prob, double tol = 1e-12);

/// Optimal policy of the reverse-KL problem: beta * pi_ref(y) / (lambda* - r(y)).
Policy optimal_policy_rev(const RegularizedProblem& prob, double tol = 1e-12);

/**
 * Policy-gradient estimate of d/dtheta E_pi[r] with leave-one-out reward
 * baselines: mean_i (r(y_i) - w_i) * score(pi, y_i), n >= 2.
 */
GradVector reward_grad_loo(const Policy& pi, std::span<const double> reward,
                           std::span<const int> ys);

/// Exact policy gradient of E_pi[r]: entry j = pi(j) * (r(j) - E_pi[r]).
GradVector exact_reward_grad(const Policy& pi, std::span<const double> reward);

/**
 * Plain gradient descent on pi's logits against KL(pi, pi_ref) using fresh
 * n-sample estimates of the chosen kind per step. Records KL(pi_t, pi_ref)
 * and its ratio to the initial value at every step including step 0.
 */
OptTrace run_kl_minimization(const Policy& pi0, const Policy& pi_ref,
                             const GradEstimatorKind& kind, int n, int steps, double eta,
                             RngStream& rng);

/**
 * Gradient ascent on the regularized objective from pi_0 = pi_ref, combining
 * the leave-one-out reward gradient with the chosen KL gradient estimator on
 * a shared sample batch per step (Analytic applies exact gradients to both
 * terms). Records KL(pi_t, pi*), KL(pi_t, pi*_rev) and KL(pi_t, pi*)
 * normalized by its initial value.
 */
OptTrace run_reward_max(const RegularizedProblem& prob, const GradEstimatorKind& kind, int n,
                        int steps, double eta, RngStream& rng);

} // namespace klgrad
