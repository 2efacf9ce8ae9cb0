#include "klgrad/estimators.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace klgrad {

namespace {
double log_ratio(const Policy& pi, const Policy& pi_ref, int y) {
  if (pi.size() != pi_ref.size()) throw std::invalid_argument("estimator: dimension mismatch");
  return pi.log_prob(y) - pi_ref.log_prob(y);
}
} // namespace

double est_vanilla(const Policy& pi, const Policy& pi_ref, int y) {
  return log_ratio(pi, pi_ref, y);
}

double est_var_reduced(const Policy& pi, const Policy& pi_ref, int y) {
  return est_lambda(pi, pi_ref, y, 1.0);
}

double est_squared(const Policy& pi, const Policy& pi_ref, int y) {
  const double r = log_ratio(pi, pi_ref, y);
  return 0.5 * r * r;
}

double est_lambda(const Policy& pi, const Policy& pi_ref, int y, double lambda) {
  const double r = log_ratio(pi, pi_ref, y);
  return r + lambda * (std::exp(-r) - 1.0);
}

double estimate(const EstimatorKind& kind, const Policy& pi, const Policy& pi_ref, int y) {
  switch (kind.tag) {
    case EstimatorKind::Tag::Vanilla: return est_vanilla(pi, pi_ref, y);
    case EstimatorKind::Tag::VarReduced: return est_var_reduced(pi, pi_ref, y);
    case EstimatorKind::Tag::Squared: return est_squared(pi, pi_ref, y);
    case EstimatorKind::Tag::Lambda: return est_lambda(pi, pi_ref, y, kind.lambda);
  }
  throw std::logic_error("estimate: unreachable");
}

double batch_estimate(const EstimatorKind& kind, const Policy& pi, const Policy& pi_ref,
                      std::span<const int> ys) {
  if (ys.empty()) throw std::invalid_argument("batch_estimate: empty batch");
  double acc = 0.0;
  for (int y : ys) acc += estimate(kind, pi, pi_ref, y);
  return acc / static_cast<double>(ys.size());
}

std::string kind_name(const EstimatorKind& kind) {
  switch (kind.tag) {
    case EstimatorKind::Tag::Vanilla: return "vanilla";
    case EstimatorKind::Tag::VarReduced: return "var_reduced";
    case EstimatorKind::Tag::Squared: return "squared";
    case EstimatorKind::Tag::Lambda: {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "lambda(%g)", kind.lambda);
      return buf;
    }
  }
  throw std::logic_error("kind_name: unreachable");
}

} // namespace klgrad
