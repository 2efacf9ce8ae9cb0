#include "klgrad/tree_policy.hpp"

#include <cmath>
#include <stdexcept>

namespace klgrad {

namespace {

constexpr std::int64_t kEnumGuard = 1000000;

std::int64_t ipow(std::int64_t base, int exp) {
  std::int64_t out = 1;
  for (int i = 0; i < exp; ++i) out *= base;
  return out;
}

} // namespace

TreePolicy::TreePolicy(int vocab, int max_len, std::vector<double> flat_logits)
    : vocab_(vocab), max_len_(max_len), flat_logits_(std::move(flat_logits)) {
  if (vocab_ < 2) throw std::invalid_argument("TreePolicy: vocab must be at least 2");
  if (max_len_ < 1 || max_len_ > 8) throw std::invalid_argument("TreePolicy: max_len must be in [1, 8]");
  if (ipow(vocab_, max_len_) > kEnumGuard) throw std::invalid_argument("TreePolicy: enumeration guard exceeded");

  depth_offsets_.resize(static_cast<std::size_t>(max_len_) + 1);
  std::int64_t count = 0;
  std::int64_t level = 1;
  for (int d = 0; d <= max_len_; ++d) {
    depth_offsets_[static_cast<std::size_t>(d)] = count;
    count += level;
    level *= vocab_;
  }
  num_contexts_ = static_cast<int>(depth_offsets_[static_cast<std::size_t>(max_len_)]);

  if (flat_logits_.size() != static_cast<std::size_t>(num_params()))
    throw std::invalid_argument("TreePolicy: flat parameter vector has wrong length");

  flat_log_probs_.resize(flat_logits_.size());
  flat_probs_.resize(flat_logits_.size());
  for (int c = 0; c < num_contexts_; ++c) {
    const auto base = static_cast<std::size_t>(c) * static_cast<std::size_t>(vocab_);
    const std::span<const double> logits(flat_logits_.data() + base, static_cast<std::size_t>(vocab_));
    const double lse = log_sum_exp(logits);
    for (int j = 0; j < vocab_; ++j) {
      flat_log_probs_[base + static_cast<std::size_t>(j)] = logits[static_cast<std::size_t>(j)] - lse;
      flat_probs_[base + static_cast<std::size_t>(j)] = std::exp(flat_log_probs_[base + static_cast<std::size_t>(j)]);
    }
  }
}

std::int64_t TreePolicy::num_sequences() const { return ipow(vocab_, max_len_); }

int TreePolicy::context_at(int depth, std::int64_t code) const {
  if (depth < 0 || depth >= max_len_) throw std::out_of_range("TreePolicy::context_at: bad depth");
  if (code < 0 || code >= ipow(vocab_, depth)) throw std::out_of_range("TreePolicy::context_at: bad code");
  return static_cast<int>(depth_offsets_[static_cast<std::size_t>(depth)] + code);
}

int TreePolicy::context_index(std::span<const int> prefix) const {
  std::int64_t code = 0;
  for (int tok : prefix) {
    if (tok < 0 || tok >= vocab_) throw std::out_of_range("TreePolicy::context_index: bad token");
    code = code * vocab_ + tok;
  }
  return context_at(static_cast<int>(prefix.size()), code);
}

std::vector<int> TreePolicy::context_prefix(int ctx) const {
  if (ctx < 0 || ctx >= num_contexts_) throw std::out_of_range("TreePolicy::context_prefix: bad context");
  int depth = 0;
  while (depth + 1 <= max_len_ && depth_offsets_[static_cast<std::size_t>(depth) + 1] <= ctx) ++depth;
  std::int64_t code = ctx - depth_offsets_[static_cast<std::size_t>(depth)];
  std::vector<int> prefix(static_cast<std::size_t>(depth));
  for (int t = depth - 1; t >= 0; --t) {
    prefix[static_cast<std::size_t>(t)] = static_cast<int>(code % vocab_);
    code /= vocab_;
  }
  return prefix;
}

std::span<const double> TreePolicy::context_logits(int ctx) const {
  const auto base = static_cast<std::size_t>(ctx) * static_cast<std::size_t>(vocab_);
  return {flat_logits_.data() + base, static_cast<std::size_t>(vocab_)};
}

std::span<const double> TreePolicy::context_probs(int ctx) const {
  const auto base = static_cast<std::size_t>(ctx) * static_cast<std::size_t>(vocab_);
  return {flat_probs_.data() + base, static_cast<std::size_t>(vocab_)};
}

std::span<const double> TreePolicy::context_log_probs(int ctx) const {
  const auto base = static_cast<std::size_t>(ctx) * static_cast<std::size_t>(vocab_);
  return {flat_log_probs_.data() + base, static_cast<std::size_t>(vocab_)};
}

double TreePolicy::log_prob(int ctx, int token) const {
  if (ctx < 0 || ctx >= num_contexts_) throw std::out_of_range("TreePolicy::log_prob: bad context");
  if (token < 0 || token >= vocab_) throw std::out_of_range("TreePolicy::log_prob: bad token");
  return flat_log_probs_[static_cast<std::size_t>(ctx) * static_cast<std::size_t>(vocab_) +
                         static_cast<std::size_t>(token)];
}

std::vector<int> Trajectory::tokens() const {
  std::vector<int> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.token);
  return out;
}

double Trajectory::log_ratio_sum() const {
  double acc = 0.0;
  for (const auto& s : steps) acc += s.log_ratio;
  return acc;
}

void add_step_score(GradVector& g, const TrajectoryStep& step, double coeff, int vocab) {
  const auto base = static_cast<std::size_t>(step.context) * static_cast<std::size_t>(vocab);
  for (int j = 0; j < vocab; ++j) g[base + static_cast<std::size_t>(j)] += coeff * step.score[static_cast<std::size_t>(j)];
}

std::pair<TreePolicy, TreePolicy> new_tree_pair(RngStream& rng, int vocab, int max_len,
                                                double noise_scale) {
  if (vocab < 2) throw std::invalid_argument("new_tree_pair: vocab must be at least 2");
  if (max_len < 1 || max_len > 8) throw std::invalid_argument("new_tree_pair: max_len must be in [1, 8]");
  if (ipow(vocab, max_len) > kEnumGuard) throw std::invalid_argument("new_tree_pair: enumeration guard exceeded");

  std::int64_t contexts = 0;
  std::int64_t level = 1;
  for (int d = 0; d < max_len; ++d) {
    contexts += level;
    level *= vocab;
  }
  const auto n = static_cast<std::size_t>(contexts) * static_cast<std::size_t>(vocab);
  std::vector<double> ref(n);
  std::vector<double> student(n);
  for (std::size_t i = 0; i < n; ++i) {
    ref[i] = rng.normal();
    student[i] = ref[i] + noise_scale * rng.normal();
  }
  return {TreePolicy(vocab, max_len, std::move(ref)), TreePolicy(vocab, max_len, std::move(student))};
}

namespace {

TrajectoryStep make_step(const TreePolicy& pi, const TreePolicy& pi_ref, int ctx, int token) {
  TrajectoryStep step;
  step.context = ctx;
  step.token = token;
  step.log_ratio = pi.log_prob(ctx, token) - pi_ref.log_prob(ctx, token);
  const auto probs = pi.context_probs(ctx);
  step.score.assign(probs.begin(), probs.end());
  for (double& v : step.score) v = -v;
  step.score[static_cast<std::size_t>(token)] += 1.0;
  return step;
}

void check_pair(const TreePolicy& pi, const TreePolicy& pi_ref, const char* where) {
  if (pi.vocab() != pi_ref.vocab() || pi.max_len() != pi_ref.max_len())
    throw std::invalid_argument(std::string(where) + ": policies have different shapes");
}

bool terminal_token(const LengthModel& lm, int token) {
  return lm.mode == LengthModel::Mode::EosToken && token == lm.eos_id;
}

} // namespace

Trajectory sample_trajectory(const TreePolicy& pi, const TreePolicy& pi_ref, RngStream& rng,
                             const LengthModel& lm) {
  check_pair(pi, pi_ref, "sample_trajectory");
  Trajectory traj;
  traj.vocab = pi.vocab();
  traj.num_params = pi.num_params();
  std::int64_t code = 0;
  for (int depth = 0; depth < pi.max_len(); ++depth) {
    const int ctx = pi.context_at(depth, code);
    const int token = rng.categorical(pi.context_probs(ctx));
    traj.steps.push_back(make_step(pi, pi_ref, ctx, token));
    if (terminal_token(lm, token)) break;
    code = code * pi.vocab() + token;
  }
  return traj;
}

void for_each_trajectory(const TreePolicy& pi, const TreePolicy& pi_ref, const LengthModel& lm,
                         const std::function<void(const Trajectory&, double)>& visit) {
  check_pair(pi, pi_ref, "for_each_trajectory");
  Trajectory traj;
  traj.vocab = pi.vocab();
  traj.num_params = pi.num_params();

  // DFS over prefixes; log_p tracks the pi-probability of the current prefix.
  const std::function<void(int, std::int64_t, double)> walk = [&](int depth, std::int64_t code,
                                                                  double log_p) {
    if (depth == pi.max_len()) {
      visit(traj, std::exp(log_p));
      return;
    }
    const int ctx = pi.context_at(depth, code);
    for (int token = 0; token < pi.vocab(); ++token) {
      traj.steps.push_back(make_step(pi, pi_ref, ctx, token));
      const double next_log_p = log_p + pi.log_prob(ctx, token);
      if (terminal_token(lm, token)) {
        visit(traj, std::exp(next_log_p));
      } else {
        walk(depth + 1, code * pi.vocab() + token, next_log_p);
      }
      traj.steps.pop_back();
    }
  };
  walk(0, 0, 0.0);
}

double exact_seq_kl(const TreePolicy& pi, const TreePolicy& pi_ref, const LengthModel& lm) {
  double acc = 0.0;
  for_each_trajectory(pi, pi_ref, lm, [&](const Trajectory& traj, double prob) {
    acc += prob * traj.log_ratio_sum();
  });
  return acc;
}

double exact_seq_kl_token_form(const TreePolicy& pi, const TreePolicy& pi_ref,
                               const LengthModel& lm) {
  check_pair(pi, pi_ref, "exact_seq_kl_token_form");
  double acc = 0.0;
  // Walks contexts with their reach probability under pi; EOS prunes subtrees.
  const std::function<void(int, std::int64_t, double)> walk = [&](int depth, std::int64_t code,
                                                                  double reach) {
    const int ctx = pi.context_at(depth, code);
    const auto p = pi.context_probs(ctx);
    const auto lp = pi.context_log_probs(ctx);
    const auto lq = pi_ref.context_log_probs(ctx);
    double kl = 0.0;
    for (int j = 0; j < pi.vocab(); ++j)
      kl += p[static_cast<std::size_t>(j)] * (lp[static_cast<std::size_t>(j)] - lq[static_cast<std::size_t>(j)]);
    acc += reach * kl;
    if (depth + 1 == pi.max_len()) return;
    for (int token = 0; token < pi.vocab(); ++token) {
      if (terminal_token(lm, token)) continue;
      walk(depth + 1, code * pi.vocab() + token, reach * p[static_cast<std::size_t>(token)]);
    }
  };
  walk(0, 0, 1.0);
  return acc;
}

GradVector exact_seq_kl_grad(const TreePolicy& pi, const TreePolicy& pi_ref,
                             const LengthModel& lm) {
  GradVector g(static_cast<std::size_t>(pi.num_params()), 0.0);
  // d/dtheta [pi(y) * S(y)] = pi(y) * (S(y) + 1) * sum_t score_t(y).
  for_each_trajectory(pi, pi_ref, lm, [&](const Trajectory& traj, double prob) {
    const double coeff = prob * (traj.log_ratio_sum() + 1.0);
    for (const auto& step : traj.steps) add_step_score(g, step, coeff, pi.vocab());
  });
  return g;
}

std::pair<GradVector, GradVector> decomposition_oracle(const TreePolicy& pi,
                                                       const TreePolicy& pi_ref,
                                                       const LengthModel& lm) {
  GradVector part_i(static_cast<std::size_t>(pi.num_params()), 0.0);
  GradVector part_ii(static_cast<std::size_t>(pi.num_params()), 0.0);
  for_each_trajectory(pi, pi_ref, lm, [&](const Trajectory& traj, double prob) {
    double suffix = 0.0;
    for (auto it = traj.steps.rbegin(); it != traj.steps.rend(); ++it) {
      add_step_score(part_i, *it, prob * it->log_ratio, pi.vocab());
      add_step_score(part_ii, *it, prob * suffix, pi.vocab());
      suffix += it->log_ratio;
    }
  });
  return {std::move(part_i), std::move(part_ii)};
}

} // namespace klgrad
