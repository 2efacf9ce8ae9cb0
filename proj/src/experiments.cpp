#include "klgrad/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "klgrad/optimize.hpp"
#include "klgrad/parallel.hpp"
#include "klgrad/policy.hpp"
#include "klgrad/tree_policy.hpp"

namespace klgrad {

namespace {

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

const std::vector<std::string> kExperiments = {"est-mse", "grad-mse", "minimize-kl",
                                               "reward-max", "seq-distill"};

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size() || !std::isfinite(v)) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + value + "'");
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> default_kinds(const std::string& experiment) {
  if (experiment == "est-mse") return {"vanilla", "var_reduced", "squared"};
  if (experiment == "grad-mse")
    return {"vanilla_incorrect", "var_reduced_incorrect", "vanilla_correct", "vanilla_correct_loo"};
  if (experiment == "minimize-kl" || experiment == "reward-max")
    return {"analytic", "vanilla_correct", "var_reduced_incorrect", "vanilla_incorrect"};
  if (experiment == "seq-distill")
    return {"seq_vanilla", "seq_loo", "cumulative", "token_level(vanilla_correct)",
            "token_level(var_reduced_incorrect)"};
  return {};
}

std::vector<int> default_sample_sizes(const std::string& experiment) {
  if (experiment == "est-mse" || experiment == "grad-mse") return {4, 16, 64, 256, 1024, 4096};
  return {4};
}

void validate_kinds(const ExperimentConfig& cfg) {
  for (const auto& name : cfg.kinds) {
    if (cfg.experiment == "est-mse") {
      parse_estimator_kind(name);
    } else if (cfg.experiment == "seq-distill") {
      parse_seq_kind(name);
    } else {
      parse_grad_kind(name);
    }
  }
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct Stats {
  double mean = 0.0;
  double median = 0.0;
  double std_error = 0.0;
};

Stats aggregate(std::vector<double> values) {
  Stats s;
  const auto n = values.size();
  double acc = 0.0;
  for (double v : values) acc += v;
  s.mean = acc / static_cast<double>(n);

  std::sort(values.begin(), values.end());
  s.median = (n % 2 == 1) ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);

  if (n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std_error = std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
  }
  return s;
}

ResultRow make_row(const ExperimentConfig& cfg, const std::string& kind, int n, int step,
                   const std::string& metric, const Stats& s) {
  ResultRow row;
  row.experiment = cfg.experiment;
  row.kind = kind;
  row.n = n;
  row.step = step;
  row.seed_count = cfg.reps;
  row.metric = metric;
  row.mean = s.mean;
  row.median = s.median;
  row.std_error = s.std_error;
  return row;
}

double l2_distance(const GradVector& a, const GradVector& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

} // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {"experiment", "arms",  "vocab", "max-len", "n",
                                                "reps",       "steps", "beta",  "lambda",  "eta",
                                                "noise-scale", "kinds", "seed",  "out"};
  return keys;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: '" + path + "' line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (std::find(config_keys().begin(), config_keys().end(), key) == config_keys().end())
      throw std::invalid_argument("config: unknown key '" + key + "'; valid: " +
                                  join(config_keys(), ", "));
    kv[key] = value;
  }
  return kv;
}

ExperimentConfig resolve_config(const std::vector<std::map<std::string, std::string>>& overlays) {
  std::map<std::string, std::string> kv;
  for (const auto& overlay : overlays) {
    for (const auto& [key, value] : overlay) {
      if (std::find(config_keys().begin(), config_keys().end(), key) == config_keys().end())
        throw std::invalid_argument("config: unknown key '" + key + "'; valid: " +
                                    join(config_keys(), ", "));
      kv[key] = value;
    }
  }

  ExperimentConfig cfg;
  if (!kv.count("experiment"))
    throw std::invalid_argument("config: missing 'experiment'; valid: " + join(kExperiments, ", "));
  cfg.experiment = kv.at("experiment");
  if (std::find(kExperiments.begin(), kExperiments.end(), cfg.experiment) == kExperiments.end())
    throw std::invalid_argument("config: unknown experiment '" + cfg.experiment + "'; valid: " +
                                join(kExperiments, ", "));

  if (kv.count("arms")) cfg.arms = static_cast<int>(parse_int("arms", kv.at("arms")));
  if (kv.count("vocab")) cfg.vocab = static_cast<int>(parse_int("vocab", kv.at("vocab")));
  if (kv.count("max-len")) cfg.max_len = static_cast<int>(parse_int("max-len", kv.at("max-len")));
  if (kv.count("reps")) cfg.reps = static_cast<int>(parse_int("reps", kv.at("reps")));
  if (kv.count("steps")) cfg.steps = static_cast<int>(parse_int("steps", kv.at("steps")));
  if (kv.count("beta")) cfg.beta = parse_double("beta", kv.at("beta"));
  if (kv.count("lambda")) cfg.lambda = parse_double("lambda", kv.at("lambda"));
  if (kv.count("eta")) cfg.eta = parse_double("eta", kv.at("eta"));
  if (kv.count("seed")) cfg.master_seed = static_cast<std::uint64_t>(parse_int("seed", kv.at("seed")));
  if (kv.count("out")) cfg.out_path = kv.at("out");

  if (kv.count("noise-scale"))
    cfg.noise_scale = parse_double("noise-scale", kv.at("noise-scale"));
  else if (cfg.experiment == "seq-distill")
    cfg.noise_scale = 3.0; // high-KL regime default for distillation

  if (kv.count("n")) {
    cfg.sample_sizes.clear();
    for (const auto& part : split_list(kv.at("n")))
      cfg.sample_sizes.push_back(static_cast<int>(parse_int("n", part)));
    if (cfg.sample_sizes.empty()) throw std::invalid_argument("config: 'n' list is empty");
  } else {
    cfg.sample_sizes = default_sample_sizes(cfg.experiment);
  }

  if (kv.count("kinds")) {
    cfg.kinds = split_list(kv.at("kinds"));
    if (cfg.kinds.empty()) throw std::invalid_argument("config: 'kinds' list is empty");
  } else {
    cfg.kinds = default_kinds(cfg.experiment);
  }

  // Bare lambda kinds pick up the configured weight, so the CSV kind column
  // is always explicit about the lambda in effect.
  for (auto& name : cfg.kinds) {
    if (name == "lambda") name = "lambda(" + fmt_double(cfg.lambda) + ")";
    if (name == "lambda_incorrect") name = "lambda_incorrect(" + fmt_double(cfg.lambda) + ")";
  }

  if (cfg.arms < 2) throw std::invalid_argument("config: 'arms' must be at least 2");
  if (cfg.reps < 1) throw std::invalid_argument("config: 'reps' must be at least 1");
  if (cfg.steps < 1) throw std::invalid_argument("config: 'steps' must be at least 1");
  for (int n : cfg.sample_sizes)
    if (n < 1) throw std::invalid_argument("config: 'n' entries must be at least 1");
  validate_kinds(cfg);
  return cfg;
}

void ExperimentConfig::echo(std::ostream& os) const {
  std::vector<std::string> n_strs;
  for (int n : sample_sizes) n_strs.push_back(std::to_string(n));
  os << "# experiment = " << experiment << "\n";
  os << "# arms = " << arms << "\n";
  os << "# vocab = " << vocab << "\n";
  os << "# max-len = " << max_len << "\n";
  os << "# n = " << join(n_strs, ",") << "\n";
  os << "# reps = " << reps << "\n";
  os << "# steps = " << steps << "\n";
  os << "# beta = " << fmt_double(beta) << "\n";
  os << "# lambda = " << fmt_double(lambda) << "\n";
  os << "# eta = " << fmt_double(eta) << "\n";
  os << "# noise-scale = " << fmt_double(noise_scale) << "\n";
  os << "# kinds = " << join(kinds, ",") << "\n";
  os << "# seed = " << master_seed << "\n";
  os << "# out = " << (out_path.empty() ? "-" : out_path) << "\n";
}

// ---------------------------------------------------------------------------
// Kind parsing
// ---------------------------------------------------------------------------

namespace {

// Extracts the argument of "prefix(arg)" names; empty optional when the name
// is not of that shape.
bool match_call(const std::string& name, const std::string& prefix, std::string& arg) {
  if (name.size() < prefix.size() + 2 || name.compare(0, prefix.size(), prefix) != 0) return false;
  if (name[prefix.size()] != '(' || name.back() != ')') return false;
  arg = name.substr(prefix.size() + 1, name.size() - prefix.size() - 2);
  return true;
}

} // namespace

EstimatorKind parse_estimator_kind(const std::string& name) {
  if (name == "vanilla") return EstimatorKind::vanilla();
  if (name == "var_reduced") return EstimatorKind::var_reduced();
  if (name == "squared") return EstimatorKind::squared();
  std::string arg;
  if (match_call(name, "lambda", arg))
    return EstimatorKind::lambda_weighted(parse_double("lambda", arg));
  throw std::invalid_argument("unknown estimator kind '" + name +
                              "'; valid: vanilla, var_reduced, squared, lambda(<l>)");
}

GradEstimatorKind parse_grad_kind(const std::string& name) {
  if (name == "vanilla_incorrect") return GradEstimatorKind::vanilla_incorrect();
  if (name == "var_reduced_incorrect") return GradEstimatorKind::var_reduced_incorrect();
  if (name == "vanilla_correct") return GradEstimatorKind::vanilla_correct();
  if (name == "vanilla_correct_loo") return GradEstimatorKind::vanilla_correct_loo();
  if (name == "analytic") return GradEstimatorKind::analytic();
  std::string arg;
  if (match_call(name, "lambda_incorrect", arg))
    return GradEstimatorKind::lambda_incorrect(parse_double("lambda_incorrect", arg));
  throw std::invalid_argument(
      "unknown gradient kind '" + name +
      "'; valid: vanilla_incorrect, var_reduced_incorrect, lambda_incorrect(<l>), "
      "vanilla_correct, vanilla_correct_loo, analytic");
}

SeqGradKind parse_seq_kind(const std::string& name) {
  if (name == "seq_vanilla") return SeqGradKind::seq_vanilla();
  if (name == "seq_loo") return SeqGradKind::seq_loo();
  if (name == "cumulative") return SeqGradKind::cumulative();
  std::string arg;
  if (match_call(name, "token_level", arg)) return SeqGradKind::token_level(parse_grad_kind(arg));
  throw std::invalid_argument("unknown sequence gradient kind '" + name +
                              "'; valid: seq_vanilla, seq_loo, cumulative, "
                              "token_level(vanilla_incorrect|var_reduced_incorrect|vanilla_correct)");
}

// ---------------------------------------------------------------------------
// Experiment runners
// ---------------------------------------------------------------------------

std::vector<ResultRow> run_est_mse(const ExperimentConfig& cfg) {
  std::vector<EstimatorKind> kinds;
  for (const auto& name : cfg.kinds) kinds.push_back(parse_estimator_kind(name));
  const auto& ns = cfg.sample_sizes;
  const auto reps = static_cast<std::size_t>(cfg.reps);

  std::vector<double> mse(kinds.size() * ns.size() * reps);
  parallel_for(ns.size() * reps, [&](std::size_t task) {
    const std::size_t n_idx = task / reps;
    const std::size_t rep = task % reps;
    RngStream rng(cfg.master_seed, rep);
    const auto [pi_ref, pi] = init_pair(rng, cfg.arms, cfg.noise_scale);
    const double kl = exact_kl(pi, pi_ref);
    const auto ys = sample(pi, rng, ns[n_idx]);
    for (std::size_t k = 0; k < kinds.size(); ++k) {
      const double err = batch_estimate(kinds[k], pi, pi_ref, ys) - kl;
      mse[(k * ns.size() + n_idx) * reps + rep] = err * err;
    }
  });

  std::vector<ResultRow> rows;
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    for (std::size_t n_idx = 0; n_idx < ns.size(); ++n_idx) {
      const auto begin = mse.begin() + static_cast<std::ptrdiff_t>((k * ns.size() + n_idx) * reps);
      rows.push_back(make_row(cfg, cfg.kinds[k], ns[n_idx], 0, "mse",
                              aggregate({begin, begin + static_cast<std::ptrdiff_t>(reps)})));
    }
  }
  return rows;
}

std::vector<ResultRow> run_grad_mse(const ExperimentConfig& cfg) {
  std::vector<GradEstimatorKind> kinds;
  for (const auto& name : cfg.kinds) kinds.push_back(parse_grad_kind(name));
  const auto& ns = cfg.sample_sizes;
  const auto reps = static_cast<std::size_t>(cfg.reps);

  std::vector<double> rmse(kinds.size() * ns.size() * reps);
  parallel_for(ns.size() * reps, [&](std::size_t task) {
    const std::size_t n_idx = task / reps;
    const std::size_t rep = task % reps;
    RngStream rng(cfg.master_seed, rep);
    const auto [pi_ref, pi] = init_pair(rng, cfg.arms, cfg.noise_scale);
    const GradVector target = exact_kl_grad(pi, pi_ref);
    const auto ys = sample(pi, rng, ns[n_idx]);
    for (std::size_t k = 0; k < kinds.size(); ++k) {
      const GradVector g = grad_batch(kinds[k], pi, pi_ref, ys);
      rmse[(k * ns.size() + n_idx) * reps + rep] = l2_distance(g, target);
    }
  });

  std::vector<ResultRow> rows;
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    for (std::size_t n_idx = 0; n_idx < ns.size(); ++n_idx) {
      const auto begin = rmse.begin() + static_cast<std::ptrdiff_t>((k * ns.size() + n_idx) * reps);
      rows.push_back(make_row(cfg, cfg.kinds[k], ns[n_idx], 0, "root_mse",
                              aggregate({begin, begin + static_cast<std::ptrdiff_t>(reps)})));
    }
  }
  return rows;
}

namespace {

/// Per-(kind, n) slabs of per-step metric values across repetitions.
struct TraceSlab {
  std::vector<std::string> metrics;
  std::vector<double> values; // [metric][rep][step]
  std::size_t reps = 0;
  std::size_t points = 0;

  TraceSlab(std::vector<std::string> names, std::size_t reps_, std::size_t points_)
      : metrics(std::move(names)), values(metrics.size() * reps_ * points_), reps(reps_),
        points(points_) {}

  double& at(std::size_t metric, std::size_t rep, std::size_t step) {
    return values[(metric * reps + rep) * points + step];
  }

  std::vector<double> across_reps(std::size_t metric, std::size_t step) const {
    std::vector<double> out(reps);
    for (std::size_t r = 0; r < reps; ++r) out[r] = values[(metric * reps + r) * points + step];
    return out;
  }
};

} // namespace

std::vector<ResultRow> run_minimize_kl(const ExperimentConfig& cfg) {
  std::vector<GradEstimatorKind> kinds;
  for (const auto& name : cfg.kinds) kinds.push_back(parse_grad_kind(name));
  const auto& ns = cfg.sample_sizes;
  const auto reps = static_cast<std::size_t>(cfg.reps);
  const auto points = static_cast<std::size_t>(cfg.steps) + 1;

  std::vector<TraceSlab> slabs;
  for (std::size_t i = 0; i < kinds.size() * ns.size(); ++i)
    slabs.emplace_back(std::vector<std::string>{"kl_to_ref", "normalized_kl"}, reps, points);

  parallel_for(kinds.size() * ns.size() * reps, [&](std::size_t task) {
    const std::size_t cell = task / reps;
    const std::size_t rep = task % reps;
    const std::size_t k = cell / ns.size();
    const std::size_t n_idx = cell % ns.size();
    RngStream rng(cfg.master_seed, rep);
    const auto [pi_ref, pi0] = init_pair(rng, cfg.arms, cfg.noise_scale);
    const OptTrace trace =
        run_kl_minimization(pi0, pi_ref, kinds[k], ns[n_idx], cfg.steps, cfg.eta, rng);
    for (std::size_t t = 0; t < points; ++t) {
      slabs[cell].at(0, rep, t) = trace.records[t].kl_to_ref;
      slabs[cell].at(1, rep, t) = trace.records[t].normalized_kl;
    }
  });

  std::vector<ResultRow> rows;
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    for (std::size_t n_idx = 0; n_idx < ns.size(); ++n_idx) {
      const auto& slab = slabs[k * ns.size() + n_idx];
      for (std::size_t m = 0; m < slab.metrics.size(); ++m)
        for (std::size_t t = 0; t < points; ++t)
          rows.push_back(make_row(cfg, cfg.kinds[k], ns[n_idx], static_cast<int>(t),
                                  slab.metrics[m], aggregate(slab.across_reps(m, t))));
    }
  }
  return rows;
}

std::vector<ResultRow> run_reward_max_experiment(const ExperimentConfig& cfg) {
  std::vector<GradEstimatorKind> kinds;
  for (const auto& name : cfg.kinds) kinds.push_back(parse_grad_kind(name));
  const auto& ns = cfg.sample_sizes;
  const auto reps = static_cast<std::size_t>(cfg.reps);
  const auto points = static_cast<std::size_t>(cfg.steps) + 1;

  const std::vector<std::string> metrics = {"kl_to_ref", "kl_to_star", "kl_to_star_rev",
                                            "normalized_kl"};
  std::vector<TraceSlab> slabs;
  for (std::size_t i = 0; i < kinds.size() * ns.size(); ++i) slabs.emplace_back(metrics, reps, points);
  std::vector<double> conv_star(kinds.size() * ns.size() * reps);
  std::vector<double> conv_rev(kinds.size() * ns.size() * reps);

  parallel_for(kinds.size() * ns.size() * reps, [&](std::size_t task) {
    const std::size_t cell = task / reps;
    const std::size_t rep = task % reps;
    const std::size_t k = cell / ns.size();
    const std::size_t n_idx = cell % ns.size();
    RngStream rng(cfg.master_seed, rep);

    // Reference logits and the reward are the repetition's random draws; the
    // learner starts at the reference.
    std::vector<double> ref_logits(static_cast<std::size_t>(cfg.arms));
    for (auto& v : ref_logits) v = rng.normal();
    std::vector<double> reward(static_cast<std::size_t>(cfg.arms));
    for (auto& v : reward) v = rng.normal();
    const RegularizedProblem prob(Policy(std::move(ref_logits)), std::move(reward), cfg.beta);

    const OptTrace trace = run_reward_max(prob, kinds[k], ns[n_idx], cfg.steps, cfg.eta, rng);
    for (std::size_t t = 0; t < points; ++t) {
      slabs[cell].at(0, rep, t) = trace.records[t].kl_to_ref;
      slabs[cell].at(1, rep, t) = trace.records[t].kl_to_star;
      slabs[cell].at(2, rep, t) = trace.records[t].kl_to_star_rev;
      slabs[cell].at(3, rep, t) = trace.records[t].normalized_kl;
    }
    conv_star[cell * reps + rep] = trace.converged(&OptStepRecord::kl_to_star);
    conv_rev[cell * reps + rep] = trace.converged(&OptStepRecord::kl_to_star_rev);
  });

  std::vector<ResultRow> rows;
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    for (std::size_t n_idx = 0; n_idx < ns.size(); ++n_idx) {
      const std::size_t cell = k * ns.size() + n_idx;
      const auto& slab = slabs[cell];
      for (std::size_t m = 0; m < slab.metrics.size(); ++m)
        for (std::size_t t = 0; t < points; ++t)
          rows.push_back(make_row(cfg, cfg.kinds[k], ns[n_idx], static_cast<int>(t),
                                  slab.metrics[m], aggregate(slab.across_reps(m, t))));
      const auto begin_star = conv_star.begin() + static_cast<std::ptrdiff_t>(cell * reps);
      const auto begin_rev = conv_rev.begin() + static_cast<std::ptrdiff_t>(cell * reps);
      rows.push_back(make_row(cfg, cfg.kinds[k], ns[n_idx], cfg.steps, "converged_kl_to_star",
                              aggregate({begin_star, begin_star + static_cast<std::ptrdiff_t>(reps)})));
      rows.push_back(make_row(cfg, cfg.kinds[k], ns[n_idx], cfg.steps, "converged_kl_to_star_rev",
                              aggregate({begin_rev, begin_rev + static_cast<std::ptrdiff_t>(reps)})));
    }
  }
  return rows;
}

std::vector<ResultRow> run_seq_distill(const ExperimentConfig& cfg) {
  std::vector<SeqGradKind> kinds;
  for (const auto& name : cfg.kinds) kinds.push_back(parse_seq_kind(name));
  const auto& ns = cfg.sample_sizes;
  const auto reps = static_cast<std::size_t>(cfg.reps);
  const auto points = static_cast<std::size_t>(cfg.steps) + 1;
  const LengthModel lm = LengthModel::fixed();

  std::vector<TraceSlab> slabs;
  for (std::size_t i = 0; i < kinds.size() * ns.size(); ++i)
    slabs.emplace_back(std::vector<std::string>{"seq_kl", "normalized_seq_kl"}, reps, points);

  parallel_for(kinds.size() * ns.size() * reps, [&](std::size_t task) {
    const std::size_t cell = task / reps;
    const std::size_t rep = task % reps;
    const std::size_t k = cell / ns.size();
    const std::size_t n_idx = cell % ns.size();
    const int n = ns[n_idx];
    RngStream rng(cfg.master_seed, rep);

    const auto [reference, student0] = new_tree_pair(rng, cfg.vocab, cfg.max_len, cfg.noise_scale);
    TreePolicy student = student0;
    std::vector<double> theta = student.params();
    double initial = 0.0;

    for (std::size_t t = 0; t < points; ++t) {
      // Token form equals the enumerated sequence KL (cross-checked in
      // tests) and is the cheaper exact metric inside the descent loop.
      const double kl = exact_seq_kl_token_form(student, reference, lm);
      if (t == 0) initial = kl;
      slabs[cell].at(0, rep, t) = kl;
      slabs[cell].at(1, rep, t) = initial > 0.0 ? kl / initial : 0.0;
      if (t + 1 == points) break;

      std::vector<Trajectory> trajs;
      trajs.reserve(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) trajs.push_back(sample_trajectory(student, reference, rng, lm));
      const GradVector g = seq_grad_batch(kinds[k], trajs);
      for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= cfg.eta * g[j];
      student = TreePolicy(cfg.vocab, cfg.max_len, theta);
    }
  });

  std::vector<ResultRow> rows;
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    for (std::size_t n_idx = 0; n_idx < ns.size(); ++n_idx) {
      const auto& slab = slabs[k * ns.size() + n_idx];
      for (std::size_t m = 0; m < slab.metrics.size(); ++m)
        for (std::size_t t = 0; t < points; ++t)
          rows.push_back(make_row(cfg, cfg.kinds[k], ns[n_idx], static_cast<int>(t),
                                  slab.metrics[m], aggregate(slab.across_reps(m, t))));
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV emission and dispatch
// ---------------------------------------------------------------------------

void write_csv(std::ostream& os, const ExperimentConfig& cfg, std::vector<ResultRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    if (a.kind != b.kind) return a.kind < b.kind;
    if (a.n != b.n) return a.n < b.n;
    if (a.step != b.step) return a.step < b.step;
    return a.metric < b.metric;
  });

  cfg.echo(os);
  os << "experiment,kind,n,step,seed_count,metric,mean,median,stderr\n";
  for (const auto& row : rows) {
    os << row.experiment << ',' << row.kind << ',' << row.n << ',' << row.step << ','
       << row.seed_count << ',' << row.metric << ',' << fmt_double(row.mean) << ','
       << fmt_double(row.median) << ',' << fmt_double(row.std_error) << '\n';
  }
}

int run_suite(const ExperimentConfig& cfg) {
  try {
    validate_kinds(cfg);
    cfg.echo(std::cerr);

    std::vector<ResultRow> rows;
    if (cfg.experiment == "est-mse") {
      rows = run_est_mse(cfg);
    } else if (cfg.experiment == "grad-mse") {
      rows = run_grad_mse(cfg);
    } else if (cfg.experiment == "minimize-kl") {
      rows = run_minimize_kl(cfg);
    } else if (cfg.experiment == "reward-max") {
      rows = run_reward_max_experiment(cfg);
    } else if (cfg.experiment == "seq-distill") {
      rows = run_seq_distill(cfg);
    } else {
      throw std::invalid_argument("unknown experiment '" + cfg.experiment + "'; valid: " +
                                  join(kExperiments, ", "));
    }

    if (cfg.out_path.empty() || cfg.out_path == "-") {
      write_csv(std::cout, cfg, std::move(rows));
    } else {
      std::ofstream out(cfg.out_path, std::ios::binary);
      if (!out) throw std::runtime_error("cannot open output path '" + cfg.out_path + "'");
      write_csv(out, cfg, std::move(rows));
      if (!out) throw std::runtime_error("write failed for output path '" + cfg.out_path + "'");
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

} // namespace klgrad
