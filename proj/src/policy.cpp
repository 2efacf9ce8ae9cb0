#include "klgrad/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace klgrad {

double log_sum_exp(std::span<const double> xs) {
  const double m = *std::max_element(xs.begin(), xs.end());
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - m);
  return m + std::log(acc);
}

Policy::Policy(std::vector<double> logits) : logits_(std::move(logits)) {
  if (logits_.empty()) throw std::invalid_argument("Policy: empty logits");
  const double lse = log_sum_exp(logits_);
  log_probs_.resize(logits_.size());
  probs_.resize(logits_.size());
  for (std::size_t i = 0; i < logits_.size(); ++i) {
    log_probs_[i] = logits_[i] - lse;
    probs_[i] = std::exp(log_probs_[i]);
  }
}

Policy Policy::from_probs(std::span<const double> probs) {
  std::vector<double> logits(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] > 0.0)) throw std::invalid_argument("Policy::from_probs: entries must be positive");
    logits[i] = std::log(probs[i]);
  }
  return Policy(std::move(logits));
}

double Policy::log_prob(int y) const {
  if (y < 0 || y >= size()) throw std::out_of_range("Policy::log_prob: index out of range");
  return log_probs_[static_cast<std::size_t>(y)];
}

std::pair<Policy, Policy> init_pair(RngStream& rng, int k, double noise_scale) {
  if (k < 2) throw std::invalid_argument("init_pair: K must be at least 2");
  std::vector<double> ref(static_cast<std::size_t>(k));
  std::vector<double> learner(static_cast<std::size_t>(k));
  for (auto& v : ref) v = rng.normal();
  for (int i = 0; i < k; ++i) learner[static_cast<std::size_t>(i)] = ref[static_cast<std::size_t>(i)] + noise_scale * rng.normal();
  return {Policy(std::move(ref)), Policy(std::move(learner))};
}

std::vector<int> sample(const Policy& p, RngStream& rng, int n) {
  if (n < 1) throw std::invalid_argument("sample: n must be at least 1");
  std::vector<int> ys(static_cast<std::size_t>(n));
  for (auto& y : ys) y = rng.categorical(p.probs());
  return ys;
}

namespace {
void require_same_size(const Policy& p, const Policy& q, const char* where) {
  if (p.size() != q.size()) throw std::invalid_argument(std::string(where) + ": dimension mismatch");
}
} // namespace

double exact_kl(const Policy& p, const Policy& q) {
  require_same_size(p, q, "exact_kl");
  double acc = 0.0;
  for (int y = 0; y < p.size(); ++y) {
    const auto i = static_cast<std::size_t>(y);
    acc += p.probs()[i] * (p.log_probs()[i] - q.log_probs()[i]);
  }
  return acc;
}

GradVector score(const Policy& p, int y) {
  if (y < 0 || y >= p.size()) throw std::out_of_range("score: index out of range");
  GradVector g(p.probs().size());
  for (std::size_t j = 0; j < g.size(); ++j) g[j] = -p.probs()[j];
  g[static_cast<std::size_t>(y)] += 1.0;
  return g;
}

GradVector exact_kl_grad(const Policy& pi, const Policy& pi_ref) {
  require_same_size(pi, pi_ref, "exact_kl_grad");
  const double kl = exact_kl(pi, pi_ref);
  GradVector g(static_cast<std::size_t>(pi.size()));
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double log_ratio = pi.log_probs()[j] - pi_ref.log_probs()[j];
    g[j] = pi.probs()[j] * (log_ratio - kl);
  }
  return g;
}

GradVector exact_reverse_kl_grad(const Policy& pi, const Policy& pi_ref) {
  require_same_size(pi, pi_ref, "exact_reverse_kl_grad");
  GradVector g(static_cast<std::size_t>(pi.size()));
  for (std::size_t j = 0; j < g.size(); ++j) g[j] = pi.probs()[j] - pi_ref.probs()[j];
  return g;
}

} // namespace klgrad
