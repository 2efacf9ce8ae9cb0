#pragma once

#include <span>
#include <utility>
#include <vector>

#include "klgrad/rng.hpp"

namespace klgrad {

/// Flat gradient over a policy's logit space, aligned with Policy::logits().
using GradVector = std::vector<double>;

/**
 * Tabular categorical policy parameterized by softmax logits.
 *
 * Probabilities and log-probabilities are derived once at construction.
 * log_prob(y) is logits[y] - logsumexp(logits), never log(probs[y]), so
 * log-ratios stay exact even when probabilities underflow.
 */
class Policy {
public:
  explicit Policy(std::vector<double> logits);

  /// Policy whose probabilities equal the given (positive, normalized) vector.
  static Policy from_probs(std::span<const double> probs);

  int size() const { return static_cast<int>(logits_.size()); }
  const std::vector<double>& logits() const { return logits_; }
  const std::vector<double>& probs() const { return probs_; }
  const std::vector<double>& log_probs() const { return log_probs_; }
  double log_prob(int y) const;

private:
  std::vector<double> logits_;
  std::vector<double> log_probs_;
  std::vector<double> probs_;
};

/// logsumexp over a span of finite values.
double log_sum_exp(std::span<const double> xs);

/**
 * Reference/learner pair with logits e1 and e1 + noise_scale*e2 for
 * independent standard normal vectors e1, e2. Returns (pi_ref, pi).
 */
std::pair<Policy, Policy> init_pair(RngStream& rng, int k, double noise_scale = 1.0);

/// n i.i.d. index draws from p.
std::vector<int> sample(const Policy& p, RngStream& rng, int n);

/// KL(p, q) = sum_y p(y) (log p(y) - log q(y)).
double exact_kl(const Policy& p, const Policy& q);

/// Softmax score in logit space: entry j = 1{j == y} - p(j). Sums to zero.
GradVector score(const Policy& p, int y);

/**
 * Exact gradient of KL(pi, pi_ref) with respect to pi's logits:
 * entry j = pi(j) * (log(pi(j)/pi_ref(j)) - KL(pi, pi_ref)).
 */
GradVector exact_kl_grad(const Policy& pi, const Policy& pi_ref);

/// Exact gradient of KL(pi_ref, pi) with respect to pi's logits: pi - pi_ref.
GradVector exact_reverse_kl_grad(const Policy& pi, const Policy& pi_ref);

} // namespace klgrad
