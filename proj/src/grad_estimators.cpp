#include "klgrad/grad_estimators.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "klgrad/estimators.hpp"

namespace klgrad {

namespace {

GradVector scaled_score(const Policy& pi, int y, double coeff) {
  GradVector g = score(pi, y);
  for (double& v : g) v *= coeff;
  return g;
}

void add_scaled_score(GradVector& acc, const Policy& pi, int y, double coeff) {
  for (std::size_t j = 0; j < acc.size(); ++j) acc[j] -= coeff * pi.probs()[j];
  acc[static_cast<std::size_t>(y)] += coeff;
}

double per_sample_coeff(const GradEstimatorKind& kind, const Policy& pi, const Policy& pi_ref,
                        int y, double baseline) {
  const double r = pi.log_prob(y) - pi_ref.log_prob(y);
  switch (kind.tag) {
    case GradEstimatorKind::Tag::VanillaIncorrect: return 1.0;
    case GradEstimatorKind::Tag::VarReducedIncorrect: return 1.0 - std::exp(-r);
    case GradEstimatorKind::Tag::LambdaIncorrect: return 1.0 - kind.lambda * std::exp(-r);
    case GradEstimatorKind::Tag::VanillaCorrect: return r - baseline;
    default: throw std::logic_error("per_sample_coeff: kind has no per-sample form");
  }
}

} // namespace

GradVector grad_vanilla_incorrect(const Policy& pi, const Policy& pi_ref, int y) {
  if (pi.size() != pi_ref.size()) throw std::invalid_argument("grad_vanilla_incorrect: dimension mismatch");
  return score(pi, y);
}

GradVector grad_var_reduced_incorrect(const Policy& pi, const Policy& pi_ref, int y) {
  const double r = pi.log_prob(y) - pi_ref.log_prob(y);
  return scaled_score(pi, y, 1.0 - std::exp(-r));
}

GradVector grad_lambda_incorrect(const Policy& pi, const Policy& pi_ref, int y, double lambda) {
  const double r = pi.log_prob(y) - pi_ref.log_prob(y);
  return scaled_score(pi, y, 1.0 - lambda * std::exp(-r));
}

GradVector grad_vanilla_correct(const Policy& pi, const Policy& pi_ref, int y, double baseline) {
  const double r = pi.log_prob(y) - pi_ref.log_prob(y);
  return scaled_score(pi, y, r - baseline);
}

GradVector grad_batch(const GradEstimatorKind& kind, const Policy& pi, const Policy& pi_ref,
                      std::span<const int> ys, double baseline) {
  if (kind.tag == GradEstimatorKind::Tag::Analytic) return exact_kl_grad(pi, pi_ref);
  if (ys.empty()) throw std::invalid_argument("grad_batch: empty batch");
  const auto n = ys.size();
  GradVector acc(static_cast<std::size_t>(pi.size()), 0.0);

  if (kind.tag == GradEstimatorKind::Tag::VanillaCorrectLOO) {
    if (n < 2) throw std::invalid_argument("grad_batch: VanillaCorrectLOO needs n >= 2");
    std::vector<double> ests(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ests[i] = est_vanilla(pi, pi_ref, ys[i]);
      total += ests[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double loo_baseline = (total - ests[i]) / static_cast<double>(n - 1);
      add_scaled_score(acc, pi, ys[i], ests[i] - loo_baseline);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      add_scaled_score(acc, pi, ys[i], per_sample_coeff(kind, pi, pi_ref, ys[i], baseline));
    }
  }

  for (double& v : acc) v /= static_cast<double>(n);
  return acc;
}

GradVector expected_grad(const GradEstimatorKind& kind, const Policy& pi, const Policy& pi_ref) {
  if (pi.size() != pi_ref.size()) throw std::invalid_argument("expected_grad: dimension mismatch");
  if (pi.size() > 1000000) throw std::invalid_argument("expected_grad: enumeration guard exceeded");
  switch (kind.tag) {
    case GradEstimatorKind::Tag::Analytic:
    case GradEstimatorKind::Tag::VanillaCorrectLOO:
      return exact_kl_grad(pi, pi_ref);
    default:
      break;
  }
  GradVector acc(static_cast<std::size_t>(pi.size()), 0.0);
  for (int y = 0; y < pi.size(); ++y) {
    const double w = pi.probs()[static_cast<std::size_t>(y)];
    add_scaled_score(acc, pi, y, w * per_sample_coeff(kind, pi, pi_ref, y, 0.0));
  }
  return acc;
}

std::string kind_name(const GradEstimatorKind& kind) {
  switch (kind.tag) {
    case GradEstimatorKind::Tag::VanillaIncorrect: return "vanilla_incorrect";
    case GradEstimatorKind::Tag::VarReducedIncorrect: return "var_reduced_incorrect";
    case GradEstimatorKind::Tag::LambdaIncorrect: {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "lambda_incorrect(%g)", kind.lambda);
      return buf;
    }
    case GradEstimatorKind::Tag::VanillaCorrect: return "vanilla_correct";
    case GradEstimatorKind::Tag::VanillaCorrectLOO: return "vanilla_correct_loo";
    case GradEstimatorKind::Tag::Analytic: return "analytic";
  }
  throw std::logic_error("kind_name: unreachable");
}

} // namespace klgrad
