#pragma once

// The full synthetic pipeline: base SAE, one residual per planted domain,
// the comparison baselines, reports, and the acceptance checks.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "saeboost/eval.hpp"
#include "saeboost/synth.hpp"

namespace saeboost {

struct ReproConfig {
  WorldSpec world;
  std::size_t base_features = 512;
  std::size_t base_k = 8;
  std::size_t residual_features = 64;
  std::size_t residual_k = 4;
  /// Batch-topk k of the extended baselines; 0 = base_k.
  std::size_t extended_k = 0;
  std::uint64_t train_samples = 2000000;
  double learning_rate = 1e-3;
  std::size_t batch_size = 256;
  std::uint64_t calibration_samples = 200000;
  std::uint64_t holdout_samples = 50000;
  std::uint64_t eval_samples = 20000;
  std::size_t eval_batch = 4096;
  double alpha = 0.01;
  std::size_t seeds = 3;
  /// Domain the baselines, similarity analysis and k sweep run on.
  std::string baseline_domain = "dom-a";
  std::vector<std::size_t> sweep_ks = {4, 8, 16, 32};
  std::size_t equivalence_inputs = 1000;
  std::uint64_t dynamics_interval = 250000;
  std::size_t gradient_instances = 20;
  std::size_t roundtrip_instances = 100;

  // Acceptance bars.
  double boost_gain = 0.10;
  double general_tolerance = 0.01;
  double forgetting = 0.10;
  double sweep_noise = 0.01;
  double l0_band = 0.20;
  double calibration_ev_change = 0.02;
  double recovery_cosine = 0.8;
  double recovery_fraction = 0.8;

  void validate() const;
};

void to_json(nlohmann::json& j, const ReproConfig& c);
void from_json(const nlohmann::json& j, ReproConfig& c);

struct ModelScore {
  double general_ev = 0.0;
  double general_l0 = 0.0;
  double domain_ev = 0.0;
  double domain_l0 = 0.0;
};

struct DomainOutcome {
  std::string domain;
  ModelScore base;
  ModelScore boost;
  /// Base plus all residuals, scored on this domain.
  ModelScore all_residuals;
  double recovery = 0.0;
  double recovery_mean_cosine = 0.0;
  bool equivalent = false;
  // Residual calibration on the held-out domain split.
  double residual_l0 = 0.0;
  double calibrated_ev = 0.0;
  double topk_ev = 0.0;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  // Base calibration on the held-out general split.
  double base_topk_ev = 0.0;
  double base_calibrated_ev = 0.0;
  double base_calibrated_l0 = 0.0;
  double base_general_ev = 0.0;
  double all_residuals_general_ev = 0.0;
  std::vector<DomainOutcome> domains;
  /// Keyed by method name, scored on the baseline domain.
  std::vector<std::pair<std::string, ModelScore>> baselines;
  double boost_similarity_median = 0.0;
  double extended_most_active_similarity_median = 0.0;
  double extended_random_similarity_median = 0.0;
  double stitching_similarity_median = 0.0;
  std::vector<SweepRow> sweep;

  const ModelScore& baseline(const std::string& name) const;
};

struct Criterion {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ReproResult {
  std::vector<SeedOutcome> seeds;
  std::vector<Criterion> criteria;
  bool all_passed() const;
};

/// Runs every seed in [seed, seed + config.seeds), writes artifacts under
/// `out_dir` (created if missing) and evaluates the acceptance criteria.
/// Determinism is checked by the caller (two runs, byte comparison).
ReproResult run_paper_pattern(const ReproConfig& config, std::uint64_t seed, const std::string& out_dir);

/// One scored line per criterion: "PASS name: detail".
std::string format_criteria(const std::vector<Criterion>& criteria);

nlohmann::json to_json(const SeedOutcome& s);

/// Relative paths of every regular file under `dir`, sorted.
std::vector<std::string> list_files(const std::string& dir);

}  // namespace saeboost
