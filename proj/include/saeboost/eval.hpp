#pragma once

// Reports: EV/L0 per (model, dataset), decoder-similarity analysis, top-k
// sweeps, and decoder-column export for external projection tools.

#include <cstddef>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "saeboost/metrics.hpp"
#include "saeboost/trainer.hpp"

namespace saeboost {

/// ISO-8601 UTC. Under deterministic mode this is SOURCE_DATE_EPOCH, or the
/// Unix epoch when that is unset.
std::string report_timestamp();

struct EvalReport {
  std::string dataset_id;
  std::string model_id;
  double ev = 0.0;
  double mean_l0 = 0.0;
  std::size_t samples = 0;
  /// (component name, mean L0) in stack order.
  std::vector<std::pair<std::string, double>> component_l0;
  std::string timestamp;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  /// Header row plus one data row.
  void write_csv(std::ostream& os) const;
};

EvalReport make_eval_report(const BoostStack& stack, const EvalResult& result, std::string model_id,
                            std::string dataset_id);

/// Writes eval_<model>_<dataset>.json and .csv into `dir`; returns both paths.
std::vector<std::string> write_eval_report(const std::string& dir, const EvalReport& report);

/// Characters outside [A-Za-z0-9._-] become '_'.
std::string sanitize_id(const std::string& id);

inline constexpr std::size_t kSimilarityBins = 50;

struct SimilarityReport {
  std::vector<double> max_cosine;
  std::vector<std::size_t> best_match;
  /// Features whose maximum was negative (counted in bin 0).
  std::vector<std::size_t> negative;
  /// kSimilarityBins uniform bins over [0, 1].
  std::vector<std::size_t> histogram;
  /// (value, fraction <= value) over the sorted maxima.
  std::vector<std::pair<double, double>> cdf;
  double median = 0.0;
  double mean = 0.0;

  nlohmann::json to_json() const;
  /// feature,max_cosine,best_match rows.
  void write_csv(std::ostream& os) const;
};

/// For each column of `added` (d x n), the largest cosine with any column of
/// `base` (d x m). Zero-norm columns raise NumericError.
SimilarityReport max_cosine_similarity(const Matrix& added, const Matrix& base);

/// Decoder columns [first, F) of `model` against the whole decoder of `base`.
SimilarityReport max_cosine_similarity(const SaeParams& model, const SaeParams& base, std::size_t first = 0);

struct SweepRow {
  std::size_t k = 0;
  double general_ev = 0.0;
  double general_l0 = 0.0;
  double domain_ev = 0.0;
  double domain_l0 = 0.0;
};

struct SweepInputs {
  BatchSource* domain_train = nullptr;
  /// Residuals are calibrated on this stream when set.
  BatchSource* calibration = nullptr;
  const Matrix* general_eval = nullptr;
  const Matrix* domain_eval = nullptr;
  std::size_t residual_features = 0;
  double alpha = 0.01;
  std::uint64_t init_seed = 0;
  std::size_t eval_batch = 4096;
};

/// Trains one residual per k with the same budget, seed and stream, and
/// evaluates each stacked on the base.
std::vector<SweepRow> sweep_topk(const SaeParams& base, const std::vector<std::size_t>& ks,
                                 const TrainConfig& config, const SweepInputs& inputs);

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

/// model_id,feature_id,v0..v{d-1} rows of unit decoder columns.
void export_feature_embeddings(std::ostream& os,
                               const std::vector<std::pair<std::string, const SaeParams*>>& models);

}  // namespace saeboost
