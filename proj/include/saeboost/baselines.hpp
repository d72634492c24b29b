#pragma once

// Comparison adaptation methods at a matched feature budget n.

#include <cstddef>
#include <string>
#include <vector>

#include "saeboost/trainer.hpp"

namespace saeboost {

enum class BaselineMethod { kExtendedMostActive, kExtendedRandom, kStitching, kFullFinetune };

const char* to_string(BaselineMethod method);
BaselineMethod baseline_from_string(const std::string& name);

struct BaselineSpec {
  BaselineMethod method = BaselineMethod::kExtendedMostActive;
  /// Features added; ignored by full fine-tuning.
  std::size_t added_features = 0;
  TrainConfig config;

  void validate() const;
};

enum class ExtendInit { kMostActive, kRandom };

/// How "most active" is ranked over the probe sample.
enum class ActivityRanking { kMeanMagnitude, kFrequency };

struct ExtendOptions {
  std::size_t probe_samples = 100000;
  ActivityRanking ranking = ActivityRanking::kMeanMagnitude;
  /// Relative scale of the Gaussian perturbation on copied donor weights.
  double donor_noise = 0.01;
  std::uint64_t seed = 0;
};

/// Per-feature activity of `sae` over up to `samples` rows of `probe`.
std::vector<double> feature_activity(const SaeParams& sae, BatchSource& probe, std::size_t samples,
                                     ActivityRanking ranking, std::size_t batch_size = 4096);

/// The base with n appended features (extended role). Most-active init copies
/// the n top-ranked donors with noise; random init draws fresh unit columns.
SaeParams init_extended(const SaeParams& base, BatchSource& probe, ExtendInit init, std::size_t n,
                        const ExtendOptions& options = {});

/// Trains only the appended features. b_dec stays frozen. The batch-topk k
/// is config.k, or the base's own k when the base is batch-topk.
TrainResult train_extended(const SaeParams& base, BatchSource& domain, ExtendInit init, std::size_t n,
                           TrainConfig config, const ExtendOptions& options = {}, const EvalSets& eval = {});

/// Every parameter trainable, direct reconstruction on the domain stream.
TrainResult train_full_finetune(const SaeParams& base, BatchSource& domain, TrainConfig config,
                                const EvalSets& eval = {});

struct StitchSelection {
  /// Selected feature indices, lowest cosine first (ties by index).
  std::vector<std::size_t> features;
  std::vector<double> cosines;
  /// Cosine of every feature between the two decoders.
  std::vector<double> all_cosines;
};

/// The n features whose decoder columns changed most between the two models.
StitchSelection select_changed_features(const SaeParams& original, const SaeParams& finetuned,
                                        std::size_t n);

/// `original` with the selected fine-tuned features appended (stitched role).
SaeParams stitch_features(const SaeParams& original, const SaeParams& finetuned,
                          const StitchSelection& selection);

struct StitchResult {
  SaeParams params;
  StitchSelection selection;
  TrainResult finetune;
};

StitchResult stitch_from_finetuned(const SaeParams& original, const SaeParams& finetuned, std::size_t n);

StitchResult train_stitching(const SaeParams& base, BatchSource& domain, std::size_t n, TrainConfig config,
                             const EvalSets& eval = {});

}  // namespace saeboost
