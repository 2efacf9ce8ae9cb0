#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "klgrad/estimators.hpp"
#include "klgrad/grad_estimators.hpp"
#include "klgrad/seq_estimators.hpp"

namespace klgrad {

/**
 * Fully resolved experiment configuration. Defaults reproduce the tabular
 * protocol (K = 100 arms, 100 repetitions, n = 4 samples per estimate,
 * eta = 1); resolve_config() applies per-experiment defaults for the
 * sample-size sweep, estimator kinds and noise scale.
 */
struct ExperimentConfig {
  std::string experiment;                // est-mse | grad-mse | minimize-kl | reward-max | seq-distill
  int arms = 100;                        // K
  int vocab = 4;                         // V (seq-distill)
  int max_len = 4;                       // T_max (seq-distill)
  std::vector<int> sample_sizes;         // n values; one run per value
  int reps = 100;
  int steps = 1000;
  double beta = 1.0;
  double lambda = 1.0;                   // lambda for lambda(...) kinds given bare
  double eta = 1.0;
  double noise_scale = 1.0;
  std::vector<std::string> kinds;        // canonical kind names
  std::uint64_t master_seed = 0;
  std::string out_path;                  // empty or "-" = stdout

  /// Writes the config as "# key = value" lines.
  void echo(std::ostream& os) const;
};

/// One aggregated CSV row: statistics of one metric over `seed_count` repetitions.
struct ResultRow {
  std::string experiment;
  std::string kind;
  int n = 0;
  int step = 0;
  int seed_count = 0;
  std::string metric;
  double mean = 0.0;
  double median = 0.0;
  double std_error = 0.0;
};

/// Valid keys for config files and the key-value overlay (flag spellings).
const std::vector<std::string>& config_keys();

/// Parses a flat "key = value" config file into an overlay map.
std::map<std::string, std::string> parse_config_file(const std::string& path);

/**
 * Builds a resolved config from overlay maps applied in order (later wins):
 * defaults, then each overlay. Throws std::invalid_argument on unknown keys,
 * malformed values, unknown experiment or kind names.
 */
ExperimentConfig resolve_config(const std::vector<std::map<std::string, std::string>>& overlays);

EstimatorKind parse_estimator_kind(const std::string& name);
GradEstimatorKind parse_grad_kind(const std::string& name);
SeqGradKind parse_seq_kind(const std::string& name);

/// Mean squared error of scalar KL estimates across the n sweep.
std::vector<ResultRow> run_est_mse(const ExperimentConfig& cfg);

/// Root-MSE of gradient estimates against exact_kl_grad across the n sweep.
std::vector<ResultRow> run_grad_mse(const ExperimentConfig& cfg);

/// KL(pi_t, pi_ref) descent traces per gradient estimator kind.
std::vector<ResultRow> run_minimize_kl(const ExperimentConfig& cfg);

/// Regularized reward maximization traces against pi* and pi*_rev.
std::vector<ResultRow> run_reward_max_experiment(const ExperimentConfig& cfg);

/// Tree-policy distillation traces of exact sequence KL per seq estimator kind.
std::vector<ResultRow> run_seq_distill(const ExperimentConfig& cfg);

/// Writes the config comment block, header and sorted rows with 17 significant digits.
void write_csv(std::ostream& os, const ExperimentConfig& cfg, std::vector<ResultRow> rows);

/**
 * Dispatches to the experiment runner, echoes the resolved config, writes the
 * CSV to cfg.out_path (stdout when empty or "-"). Returns 0 on success,
 * nonzero with a diagnostic on stderr for config or I/O errors.
 */
int run_suite(const ExperimentConfig& cfg);

} // namespace klgrad
