#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "klgrad/policy.hpp"
#include "klgrad/rng.hpp"

namespace klgrad {

/// Sequence termination rule: run to max_len, or stop once the EOS token is drawn.
struct LengthModel {
  enum class Mode { Fixed, EosToken };

  Mode mode = Mode::Fixed;
  int eos_id = 0;

  static LengthModel fixed() { return {Mode::Fixed, 0}; }
  static LengthModel eos(int id) { return {Mode::EosToken, id}; }
};

/**
 * Autoregressive token policy over a complete prefix tree.
 *
 * Every prefix y_{1:t-1} with t-1 < max_len owns an independent softmax
 * conditional over the next token. Contexts are numbered breadth-first:
 * context_index(prefix) = offset(depth) + base-V code of the prefix, with
 * offset(d) = (V^d - 1)/(V - 1). The flat parameter vector concatenates the
 * per-context logits in context order.
 */
class TreePolicy {
public:
  TreePolicy(int vocab, int max_len, std::vector<double> flat_logits);

  int vocab() const { return vocab_; }
  int max_len() const { return max_len_; }
  int num_contexts() const { return num_contexts_; }
  int num_params() const { return num_contexts_ * vocab_; }
  std::int64_t num_sequences() const; // V^max_len

  const std::vector<double>& params() const { return flat_logits_; }

  /// Context id for a prefix at the given depth with the given base-V code.
  int context_at(int depth, std::int64_t code) const;
  /// Context id for an explicit prefix (tokens in order).
  int context_index(std::span<const int> prefix) const;
  /// Inverse of context_index.
  std::vector<int> context_prefix(int ctx) const;

  std::span<const double> context_logits(int ctx) const;
  std::span<const double> context_probs(int ctx) const;
  std::span<const double> context_log_probs(int ctx) const;
  double log_prob(int ctx, int token) const;

private:
  int vocab_ = 0;
  int max_len_ = 0;
  int num_contexts_ = 0;
  std::vector<std::int64_t> depth_offsets_; // offset per depth 0..max_len
  std::vector<double> flat_logits_;
  std::vector<double> flat_log_probs_;
  std::vector<double> flat_probs_;
};

/// One sampled (or enumerated) step: context, token, cached log-ratio and score block.
struct TrajectoryStep {
  int context = 0;
  int token = 0;
  double log_ratio = 0.0;          // log pi(token|ctx) - log pi_ref(token|ctx)
  std::vector<double> score;       // one-hot(token) - pi probs at ctx; length V
};

/// Token sequence with per-step cached log-ratios and score blocks.
struct Trajectory {
  std::vector<TrajectoryStep> steps;
  int vocab = 0;
  int num_params = 0; // flat parameter count of the generating policy

  int length() const { return static_cast<int>(steps.size()); }
  std::vector<int> tokens() const;
  double log_ratio_sum() const;
};

/// Adds coeff * step.score into the step's context block of a flat gradient.
void add_step_score(GradVector& g, const TrajectoryStep& step, double coeff, int vocab);

/**
 * Reference/student tree pair; every context's logits are e1 (reference)
 * and e1 + noise_scale*e2 with fresh standard normal vectors per context.
 * Enforces V >= 2, 1 <= max_len <= 8, V^max_len <= 10^6.
 */
std::pair<TreePolicy, TreePolicy> new_tree_pair(RngStream& rng, int vocab, int max_len,
                                                double noise_scale = 1.0);

/// Autoregressive draw from pi with log-ratios against pi_ref cached per step.
Trajectory sample_trajectory(const TreePolicy& pi, const TreePolicy& pi_ref, RngStream& rng,
                             const LengthModel& lm = LengthModel::fixed());

/**
 * Visits every complete sequence once with its trajectory and probability
 * under pi. The sequence set is determined by the length model alone, so the
 * same visit order serves enumerations weighted by either policy.
 */
void for_each_trajectory(const TreePolicy& pi, const TreePolicy& pi_ref, const LengthModel& lm,
                         const std::function<void(const Trajectory&, double)>& visit);

/// Sequence-level KL by full enumeration: sum_y pi(y) * sum_t log_ratio_t(y).
double exact_seq_kl(const TreePolicy& pi, const TreePolicy& pi_ref,
                    const LengthModel& lm = LengthModel::fixed());

/**
 * The same quantity in its conditional form: the pi-weighted sum over
 * reachable contexts of KL(pi(.|ctx), pi_ref(.|ctx)). Used to cross-check
 * exact_seq_kl.
 */
double exact_seq_kl_token_form(const TreePolicy& pi, const TreePolicy& pi_ref,
                               const LengthModel& lm = LengthModel::fixed());

/// Exact flat gradient of exact_seq_kl with respect to pi's parameters.
GradVector exact_seq_kl_grad(const TreePolicy& pi, const TreePolicy& pi_ref,
                             const LengthModel& lm = LengthModel::fixed());

/**
 * Splits the exact sequence gradient into the own-step term
 * part_i = E[sum_t log_ratio_t * score_t] and the cross-step term
 * part_ii = E[sum_t score_t * sum_{s>t} log_ratio_s]; their sum is
 * exact_seq_kl_grad.
 */
std::pair<GradVector, GradVector> decomposition_oracle(const TreePolicy& pi,
                                                       const TreePolicy& pi_ref,
                                                       const LengthModel& lm = LengthModel::fixed());

} // namespace klgrad
