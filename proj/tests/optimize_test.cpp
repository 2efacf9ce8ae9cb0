#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "klgrad/optimize.hpp"
#include "test_support.hpp"

using namespace klgrad;
using namespace klgrad::testing;

namespace {

RegularizedProblem random_problem(RngStream& rng, int k, double beta) {
  std::vector<double> logits(static_cast<std::size_t>(k));
  for (auto& v : logits) v = rng.normal();
  std::vector<double> reward(static_cast<std::size_t>(k));
  for (auto& v : reward) v = rng.normal();
  return RegularizedProblem(Policy(std::move(logits)), std::move(reward), beta);
}

} // namespace

TEST_CASE("problem validation") {
  const Policy ref = Policy::from_probs(std::vector<double>{0.5, 0.5});
  CHECK_THROWS_AS(RegularizedProblem(ref, {1.0, 0.0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(RegularizedProblem(ref, {1.0}, 1.0), std::invalid_argument);
}

TEST_CASE("optimal_policy_star") {
  const Policy ref = Policy::from_probs(std::vector<double>{0.5, 0.5});

  SUBCASE("frozen two-arm value") {
    const RegularizedProblem prob(ref, {1.0, 0.0}, 1.0);
    const Policy star = optimal_policy_star(prob);
    CHECK(star.probs()[0] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
    CHECK(star.probs()[1] == doctest::Approx(0.26894142136999512).epsilon(1e-12));
  }

  SUBCASE("constant reward tilts nothing") {
    RngStream rng(91);
    const auto [unused, ref100] = init_pair(rng, 100, 1.0);
    const RegularizedProblem prob(ref100, std::vector<double>(100, 2.5), 1.0);
    CHECK(max_abs_diff(optimal_policy_star(prob).probs(), ref100.probs()) < 1e-12);
  }

  SUBCASE("huge beta keeps the reference") {
    RngStream rng(92);
    const auto [unused, ref100] = init_pair(rng, 100, 1.0);
    std::vector<double> reward(100);
    for (auto& v : reward) v = rng.normal();
    const RegularizedProblem prob(ref100, reward, 1e6);
    CHECK(max_abs_diff(optimal_policy_star(prob).probs(), ref100.probs()) < 1e-5);
  }
}

TEST_CASE("optimal_policy_rev and its dual") {
  SUBCASE("constant reward gives lambda* = c + beta and the reference policy") {
    RngStream rng(93);
    const auto [unused, ref] = init_pair(rng, 50, 1.0);
    const RegularizedProblem prob(ref, std::vector<double>(50, 0.7), 2.0);
    CHECK(solve_rev_dual(prob) == doctest::Approx(2.7).epsilon(1e-10));
    CHECK(max_abs_diff(optimal_policy_rev(prob).probs(), ref.probs()) < 1e-9);
  }

  SUBCASE("frozen two-arm dual: root of lambda^2 - 2 lambda + 0.5") {
    const Policy ref = Policy::from_probs(std::vector<double>{0.5, 0.5});
    const RegularizedProblem prob(ref, {1.0, 0.0}, 1.0);
    const double closed_form = 0.5 * (2.0 + std::sqrt(2.0));
    CHECK(std::abs(solve_rev_dual(prob) - closed_form) < 1e-9);
    const Policy rev = optimal_policy_rev(prob);
    CHECK(rev.probs()[0] == doctest::Approx(0.7071067811865476).epsilon(1e-9));
    CHECK(rev.probs()[1] == doctest::Approx(0.2928932188134525).epsilon(1e-9));
  }

  SUBCASE("bracket, raw normalization and KKT residual on random problems") {
    RngStream rng(94);
    for (int trial = 0; trial < 30; ++trial) {
      const RegularizedProblem prob = random_problem(rng, 100, 0.5 + rng.uniform());
      const double r_max = *std::max_element(prob.reward.begin(), prob.reward.end());

      double at_bracket_top = 0.0;
      for (int y = 0; y < 100; ++y)
        at_bracket_top += prob.beta * prob.pi_ref.probs()[static_cast<std::size_t>(y)] /
                          (r_max + prob.beta - prob.reward[static_cast<std::size_t>(y)]);
      CHECK(at_bracket_top <= 1.0 + 1e-12);

      const double lambda = solve_rev_dual(prob);
      CHECK(lambda > r_max);
      CHECK(lambda <= r_max + prob.beta);

      double raw_mass = 0.0;
      for (int y = 0; y < 100; ++y)
        raw_mass += prob.beta * prob.pi_ref.probs()[static_cast<std::size_t>(y)] /
                    (lambda - prob.reward[static_cast<std::size_t>(y)]);
      CHECK(std::abs(raw_mass - 1.0) < 1e-10);

      const Policy rev = optimal_policy_rev(prob);
      for (int y = 0; y < 100; ++y) {
        const double lhs = prob.beta * prob.pi_ref.probs()[static_cast<std::size_t>(y)] /
                           rev.probs()[static_cast<std::size_t>(y)];
        CHECK(std::abs(lhs - (lambda - prob.reward[static_cast<std::size_t>(y)])) < 1e-8);
      }
    }
  }
}

TEST_CASE("reward_grad_loo") {
  const Policy coin = Policy::from_probs(std::vector<double>{0.5, 0.5});

  SUBCASE("constant rewards cancel exactly") {
    RngStream rng(95);
    const auto ys = sample(coin, rng, 8);
    CHECK(max_abs(reward_grad_loo(coin, std::vector<double>{3.0, 3.0}, ys)) == 0.0);
  }

  SUBCASE("hand-computed two-sample value") {
    const std::vector<int> ys = {0, 1};
    const GradVector g = reward_grad_loo(coin, std::vector<double>{1.0, 0.0}, ys);
    CHECK(g[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(g[1] == doctest::Approx(-0.5).epsilon(1e-15));
  }

  SUBCASE("needs two samples") {
    const std::vector<int> ys = {0};
    CHECK_THROWS_AS(reward_grad_loo(coin, std::vector<double>{1.0, 0.0}, ys),
                    std::invalid_argument);
  }

  SUBCASE("Monte Carlo mean matches the exact policy gradient") {
    RngStream rng(96);
    const auto [unused, pi] = init_pair(rng, 10, 1.0);
    std::vector<double> reward(10);
    for (auto& v : reward) v = rng.normal();
    const GradVector target = exact_reward_grad(pi, reward);

    const int batches = 100000;
    std::vector<double> mean(10, 0.0);
    std::vector<double> m2(10, 0.0);
    for (int b = 0; b < batches; ++b) {
      const auto ys = sample(pi, rng, 4);
      const GradVector g = reward_grad_loo(pi, reward, ys);
      for (std::size_t j = 0; j < 10; ++j) {
        mean[j] += g[j];
        m2[j] += g[j] * g[j];
      }
    }
    for (std::size_t j = 0; j < 10; ++j) {
      mean[j] /= batches;
      const double var = m2[j] / batches - mean[j] * mean[j];
      const double se = std::sqrt(std::max(var, 0.0) / batches);
      CHECK(std::abs(mean[j] - target[j]) <= 5.0 * se + 1e-12);
    }
  }
}

TEST_CASE("objective is a constant away from -beta KL(pi, pi*)") {
  RngStream rng(97);
  for (int trial = 0; trial < 100; ++trial) {
    const RegularizedProblem prob = random_problem(rng, 20, 0.5 + 2.0 * rng.uniform());
    const Policy star = optimal_policy_star(prob);

    // beta * log sum_y pi_ref(y) exp(r(y)/beta), assembled in log space.
    std::vector<double> tilted(20);
    for (std::size_t j = 0; j < 20; ++j)
      tilted[j] = prob.pi_ref.log_probs()[j] + prob.reward[j] / prob.beta;
    const double constant = prob.beta * log_sum_exp(tilted);

    const auto [unused, pi] = init_pair(rng, 20, 1.0);
    double expected_reward = 0.0;
    for (std::size_t j = 0; j < 20; ++j) expected_reward += pi.probs()[j] * prob.reward[j];
    const double objective = expected_reward - prob.beta * exact_kl(pi, prob.pi_ref);
    CHECK(std::abs(objective + prob.beta * exact_kl(pi, star) - constant) < 1e-10);
  }
}

TEST_CASE("one exact small step strictly descends") {
  RngStream rng(98);
  for (int trial = 0; trial < 20; ++trial) {
    const auto [pi_ref, pi0] = init_pair(rng, 30, 1.0);
    const double before = exact_kl(pi0, pi_ref);
    const GradVector g = exact_kl_grad(pi0, pi_ref);
    std::vector<double> theta = pi0.logits();
    for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= 0.01 * g[j];
    CHECK(exact_kl(Policy(theta), pi_ref) < before);
  }
}

TEST_CASE("run_kl_minimization") {
  SUBCASE("analytic descent collapses the divergence") {
    RngStream rng(99);
    const auto [pi_ref, pi0] = init_pair(rng, 100, 1.0);
    const OptTrace trace =
        run_kl_minimization(pi0, pi_ref, GradEstimatorKind::analytic(), 4, 4000, 1.0, rng);
    REQUIRE(trace.records.size() == 4001);
    CHECK(trace.records[0].step == 0);
    CHECK(trace.records[0].normalized_kl == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(trace.records.back().kl_to_ref < 1e-3 * trace.records.front().kl_to_ref);
  }

  SUBCASE("trace is deterministic in the stream") {
    RngStream init_a(100, 1);
    const auto [pi_ref, pi0] = init_pair(init_a, 20, 1.0);
    RngStream a(5, 0);
    RngStream b(5, 0);
    const auto ta =
        run_kl_minimization(pi0, pi_ref, GradEstimatorKind::vanilla_correct(), 4, 50, 1.0, a);
    const auto tb =
        run_kl_minimization(pi0, pi_ref, GradEstimatorKind::vanilla_correct(), 4, 50, 1.0, b);
    CHECK(ta.records.back().kl_to_ref == tb.records.back().kl_to_ref);
  }
}

TEST_CASE("run_reward_max") {
  RngStream rng(101);
  const RegularizedProblem prob = random_problem(rng, 100, 1.0);

  SUBCASE("starts at the reference: normalized KL is exactly one") {
    RngStream opt(102);
    const OptTrace trace =
        run_reward_max(prob, GradEstimatorKind::analytic(), 4, 200, 1.0, opt);
    CHECK(trace.records[0].normalized_kl == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(trace.records[0].kl_to_ref == 0.0);
  }

  SUBCASE("analytic ascent closes most of the gap to pi*") {
    RngStream opt(103);
    const OptTrace trace =
        run_reward_max(prob, GradEstimatorKind::analytic(), 4, 1000, 1.0, opt);
    CHECK(trace.converged(&OptStepRecord::kl_to_star) <
          0.05 * trace.records.front().kl_to_star);
  }
}
