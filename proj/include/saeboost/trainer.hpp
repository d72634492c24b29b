#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "saeboost/sae.hpp"
#include "saeboost/source.hpp"
#include "saeboost/stack.hpp"

namespace saeboost {

struct TrainConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 4096;
  /// Activation samples to consume (one residual-stream vector per token).
  std::uint64_t total_samples = 0;
  double l1_coefficient = 0.0;
  /// Overrides the batch-topk k of the trained SAE when nonzero.
  std::size_t k = 0;
  bool normalize_decoder = true;
  /// Dead-feature resampling: checked every `resample_interval` samples,
  /// features idle for `resample_window` samples are re-initialized. 0 = off.
  std::uint64_t resample_interval = 0;
  std::uint64_t resample_window = 0;
  /// No resampling once this many samples have been seen; 0 = no cutoff.
  std::uint64_t resample_until = 0;
  /// Resampled encoder rows get this multiple of the mean alive row norm.
  double resample_encoder_scale = 0.2;
  /// Samples between dynamics-log records; 0 disables the log.
  std::uint64_t eval_interval = 0;
  /// Linear learning-rate warmup length in samples; 0 = constant rate.
  std::uint64_t warmup_samples = 0;
  std::uint64_t seed = 0;
  bool deterministic = true;

  void validate() const;
  AdamHyper adam() const { return {learning_rate, beta1, beta2, epsilon}; }
};

/// What the trained SAE reconstructs: the input itself, or the error a frozen
/// stack leaves on it (e = x - stack(x)). The encoder always reads x.
struct TrainTarget {
  enum class Mode { kDirect, kResidual };

  Mode mode = Mode::kDirect;
  std::shared_ptr<const BoostStack> frozen;

  static TrainTarget direct() { return {}; }
  static TrainTarget residual(std::shared_ptr<const BoostStack> stack) {
    return {Mode::kResidual, std::move(stack)};
  }
};

/// Reconstruction target for a batch under `target`.
Matrix make_target(const TrainTarget& target, const Matrix& x);

/// The training-time forward pass in residual mode: the frozen stack's
/// reconstruction, the residual SAE's output, and their sum.
struct ResidualForward {
  Matrix frozen_x_hat;
  Matrix residual_e_hat;
  Matrix combined;
};

ResidualForward residual_forward(const BoostStack& frozen, const SaeParams& residual, const Matrix& x);

template <typename T>
struct Gradients {
  BasicMatrix<T> w_enc;
  std::vector<T> b_enc;
  BasicMatrix<T> w_dec;
  std::optional<std::vector<T>> b_dec;
};

template <typename T>
struct LossAndGrads {
  double loss = 0.0;
  double reconstruction_loss = 0.0;
  double l1_term = 0.0;
  Gradients<T> grads;
  BasicReconstruction<T> forward;
};

/// loss = (1/B) sum_b |t_b - x_hat_b|^2 + lambda * (1/B) sum_b |z_b|_1.
///
/// The gate's support is held fixed within the batch, so gradients reach
/// only active latents.
template <typename T>
LossAndGrads<T> compute_loss_and_grads(const BasicSaeParams<T>& sae, const BasicMatrix<T>& x,
                                       const BasicMatrix<T>& target, double l1_coefficient);

LossAndGrads<float> compute_loss_and_grads(const SaeParams& sae, const Matrix& x,
                                           const TrainTarget& target, double l1_coefficient);

struct DynamicsRecord {
  std::uint64_t samples = 0;
  double general_ev = std::numeric_limits<double>::quiet_NaN();
  double domain_ev = std::numeric_limits<double>::quiet_NaN();
  double mean_l0 = 0.0;
  double loss = 0.0;
};

struct DynamicsLog {
  std::vector<DynamicsRecord> records;
  std::vector<std::string> warnings;

  /// `samples,general_ev,domain_ev,mean_l0,loss` with a header row.
  void write_csv(std::ostream& os) const;
  void write_csv(const std::string& path) const;
};

/// Held-out sets scored at every dynamics record. For residual targets the
/// score is that of the frozen stack with the model in training appended.
struct EvalSets {
  const Matrix* general = nullptr;
  const Matrix* domain = nullptr;
};

/// Which parameters the optimizer may touch. Features below `first_feature`
/// are frozen (encoder rows, encoder bias entries, decoder columns).
struct TrainableRange {
  std::size_t first_feature = 0;
  bool decoder_bias = true;
};

struct TrainResult {
  SaeParams params;
  DynamicsLog log;
  std::uint64_t samples_seen = 0;
  std::size_t resampled_features = 0;
};

/// Raised when a step produces non-finite values. Carries the parameters
/// from before the failing step.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& message, SaeParams last_good, std::uint64_t samples_seen);

  const SaeParams& last_good() const noexcept { return *last_good_; }
  std::uint64_t samples_seen() const noexcept { return samples_seen_; }

 private:
  std::shared_ptr<const SaeParams> last_good_;
  std::uint64_t samples_seen_;
};

TrainResult train(const SaeParams& init, BatchSource& stream, const TrainConfig& config,
                  const TrainTarget& target, const EvalSets& eval = {},
                  const TrainableRange& trainable = {});

/// Decoder columns sampled uniformly on the unit sphere, W_enc = W_dec^T,
/// b_enc = 0. b_dec is the mean of `warmup` (zeros without one) except for
/// residual SAEs, which have none.
SaeParams init_params(std::size_t d, std::size_t features, SaeRole role, std::uint64_t seed,
                      std::size_t k, const Matrix* warmup = nullptr);

/// Rescales trainable decoder columns to unit norm and the matching encoder
/// rows and bias entries by the inverse factor, so active features compute
/// the same reconstruction.
void normalize_decoder(SaeParams& sae, std::size_t first_feature = 0);

struct ResampleResult {
  SaeParams params;
  std::vector<std::size_t> resampled;
};

/// Re-initializes every trainable feature whose activity count is zero:
/// the decoder column becomes the highest-error candidate (normalized), the
/// encoder row a scaled copy of it, and the encoder bias zero.
ResampleResult resample_dead_features(const SaeParams& sae, std::span<const std::uint64_t> activity,
                                      const Matrix& candidates, std::span<const double> candidate_error,
                                      std::size_t first_feature = 0, double encoder_scale = 0.2);

}  // namespace saeboost
