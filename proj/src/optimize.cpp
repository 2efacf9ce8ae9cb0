#include "klgrad/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace klgrad {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

RegularizedProblem::RegularizedProblem(Policy ref, std::vector<double> r, double b)
    : pi_ref(std::move(ref)), reward(std::move(r)), beta(b) {
  if (beta <= 0.0) throw std::invalid_argument("RegularizedProblem: beta must be positive");
  if (reward.size() != static_cast<std::size_t>(pi_ref.size()))
    throw std::invalid_argument("RegularizedProblem: reward length mismatch");
  for (double v : reward)
    if (!std::isfinite(v)) throw std::invalid_argument("RegularizedProblem: reward must be finite");
}

double OptTrace::converged(double OptStepRecord::* field) const {
  if (records.empty()) throw std::logic_error("OptTrace::converged: empty trace");
  const std::size_t tail = std::max<std::size_t>(1, records.size() / 10);
  double acc = 0.0;
  for (std::size_t i = records.size() - tail; i < records.size(); ++i) acc += records[i].*field;
  return acc / static_cast<double>(tail);
}

Policy optimal_policy_star(const RegularizedProblem& prob) {
  std::vector<double> logits(prob.pi_ref.logits());
  for (std::size_t j = 0; j < logits.size(); ++j) logits[j] += prob.reward[j] / prob.beta;
  return Policy(std::move(logits));
}

double solve_rev_dual(const RegularizedProblem& prob, double tol) {
  if (tol <= 0.0) throw std::invalid_argument("solve_rev_dual: tol must be positive");
  const auto& p = prob.pi_ref.probs();
  const auto& r = prob.reward;
  const double r_max = *std::max_element(r.begin(), r.end());

  const auto mass = [&](double lambda) {
    double acc = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) acc += prob.beta * p[j] / (lambda - r[j]);
    return acc;
  };

  // mass is strictly decreasing on (r_max, inf); mass(r_max + beta) <= 1 and
  // mass diverges at r_max, so the bracket always contains the root.
  double lo = r_max;
  double hi = r_max + prob.beta;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double m = mass(mid);
    if (std::abs(m - 1.0) <= tol) return mid;
    if (m > 1.0)
      lo = mid;
    else
      hi = mid;
  }
  throw std::runtime_error("solve_rev_dual: bisection failed to converge in 200 iterations");
}

Policy optimal_policy_rev(const RegularizedProblem& prob, double tol) {
  const double lambda = solve_rev_dual(prob, tol);
  std::vector<double> logits(prob.reward.size());
  for (std::size_t j = 0; j < logits.size(); ++j)
    logits[j] = std::log(prob.beta) + prob.pi_ref.log_probs()[j] - std::log(lambda - prob.reward[j]);
  return Policy(std::move(logits));
}

GradVector reward_grad_loo(const Policy& pi, std::span<const double> reward,
                           std::span<const int> ys) {
  if (ys.size() < 2) throw std::invalid_argument("reward_grad_loo: needs n >= 2");
  if (reward.size() != static_cast<std::size_t>(pi.size()))
    throw std::invalid_argument("reward_grad_loo: reward length mismatch");
  const auto n = ys.size();
  double total = 0.0;
  for (int y : ys) total += reward[static_cast<std::size_t>(y)];

  GradVector acc(static_cast<std::size_t>(pi.size()), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double r_i = reward[static_cast<std::size_t>(ys[i])];
    const double w_i = (total - r_i) / static_cast<double>(n - 1);
    const double coeff = (r_i - w_i) / static_cast<double>(n);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] -= coeff * pi.probs()[j];
    acc[static_cast<std::size_t>(ys[i])] += coeff;
  }
  return acc;
}

GradVector exact_reward_grad(const Policy& pi, std::span<const double> reward) {
  if (reward.size() != static_cast<std::size_t>(pi.size()))
    throw std::invalid_argument("exact_reward_grad: reward length mismatch");
  double mean = 0.0;
  for (std::size_t j = 0; j < reward.size(); ++j) mean += pi.probs()[j] * reward[j];
  GradVector g(reward.size());
  for (std::size_t j = 0; j < reward.size(); ++j) g[j] = pi.probs()[j] * (reward[j] - mean);
  return g;
}

OptTrace run_kl_minimization(const Policy& pi0, const Policy& pi_ref,
                             const GradEstimatorKind& kind, int n, int steps, double eta,
                             RngStream& rng) {
  if (steps < 1) throw std::invalid_argument("run_kl_minimization: steps must be at least 1");
  if (eta <= 0.0) throw std::invalid_argument("run_kl_minimization: eta must be positive");
  if (pi0.size() != pi_ref.size()) throw std::invalid_argument("run_kl_minimization: dimension mismatch");

  OptTrace trace;
  trace.records.reserve(static_cast<std::size_t>(steps) + 1);
  std::vector<double> theta(pi0.logits());
  Policy pi = pi0;
  const double kl0 = exact_kl(pi, pi_ref);

  for (int t = 0; t <= steps; ++t) {
    const double kl = (t == 0) ? kl0 : exact_kl(pi, pi_ref);
    trace.records.push_back({t, kl, kNaN, kNaN, kl0 > 0.0 ? kl / kl0 : kNaN});
    if (t == steps) break;

    GradVector g;
    if (kind.tag == GradEstimatorKind::Tag::Analytic) {
      g = exact_kl_grad(pi, pi_ref);
    } else {
      const auto ys = sample(pi, rng, n);
      g = grad_batch(kind, pi, pi_ref, ys);
    }
    for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= eta * g[j];
    pi = Policy(theta);
  }
  return trace;
}

OptTrace run_reward_max(const RegularizedProblem& prob, const GradEstimatorKind& kind, int n,
                        int steps, double eta, RngStream& rng) {
  if (steps < 1) throw std::invalid_argument("run_reward_max: steps must be at least 1");
  if (eta <= 0.0) throw std::invalid_argument("run_reward_max: eta must be positive");

  const Policy pi_star = optimal_policy_star(prob);
  const Policy pi_rev = optimal_policy_rev(prob);

  OptTrace trace;
  trace.records.reserve(static_cast<std::size_t>(steps) + 1);
  std::vector<double> theta(prob.pi_ref.logits());
  Policy pi = prob.pi_ref;
  const double kl_star0 = exact_kl(pi, pi_star);

  for (int t = 0; t <= steps; ++t) {
    const double kl_star = (t == 0) ? kl_star0 : exact_kl(pi, pi_star);
    const double kl_rev = exact_kl(pi, pi_rev);
    trace.records.push_back(
        {t, exact_kl(pi, prob.pi_ref), kl_star, kl_rev, kl_star0 > 0.0 ? kl_star / kl_star0 : kNaN});
    if (t == steps) break;

    GradVector reward_grad;
    GradVector kl_grad;
    if (kind.tag == GradEstimatorKind::Tag::Analytic) {
      reward_grad = exact_reward_grad(pi, prob.reward);
      kl_grad = exact_kl_grad(pi, prob.pi_ref);
    } else {
      const auto ys = sample(pi, rng, n);
      reward_grad = reward_grad_loo(pi, prob.reward, ys);
      kl_grad = grad_batch(kind, pi, prob.pi_ref, ys);
    }
    for (std::size_t j = 0; j < theta.size(); ++j)
      theta[j] += eta * (reward_grad[j] - prob.beta * kl_grad[j]);
    pi = Policy(theta);
  }
  return trace;
}

} // namespace klgrad
