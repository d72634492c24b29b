#pragma once

// SAE parameterization and forward passes.
//
//   pre   = W_enc x + b_enc                 (encode)
//   z     = sigma(pre)                      (batch-topk or jumpReLU gate)
//   x_hat = W_dec z (+ b_dec)               (decode; residual SAEs carry no b_dec)

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "saeboost/tensor.hpp"

namespace saeboost {

class BatchSource;

enum class SaeRole { kBase, kResidual, kExtended, kStitched, kFinetuned };

const char* to_string(SaeRole role);
SaeRole role_from_string(const std::string& name);

/// Keep the k*B largest positive pre-activations across a batch of B rows.
struct BatchTopK {
  std::size_t k = 1;
  friend bool operator==(const BatchTopK&, const BatchTopK&) = default;
};

/// Per-feature strict threshold gate: z_f = pre_f if pre_f > theta_f else 0.
/// A threshold of +inf disables the feature.
struct JumpRelu {
  std::vector<float> thresholds;
  friend bool operator==(const JumpRelu&, const JumpRelu&) = default;
};

using ActivationConfig = std::variant<BatchTopK, JumpRelu>;

inline bool is_batch_topk(const ActivationConfig& a) { return std::holds_alternative<BatchTopK>(a); }

template <typename T>
struct BasicSaeParams {
  SaeRole role = SaeRole::kBase;
  BasicMatrix<T> w_enc;                 // F x d
  std::vector<T> b_enc;                 // F
  BasicMatrix<T> w_dec;                 // d x F
  std::optional<std::vector<T>> b_dec;  // d; absent for residual SAEs
  ActivationConfig activation = BatchTopK{1};

  std::size_t input_dim() const noexcept { return w_enc.cols(); }
  std::size_t dict_size() const noexcept { return w_enc.rows(); }

  /// Throws ShapeError/ConfigError/NumericError when an invariant is broken.
  void validate() const;

  template <typename U>
  BasicSaeParams<U> cast() const {
    BasicSaeParams<U> out;
    out.role = role;
    out.w_enc = w_enc.template cast<U>();
    out.b_enc.assign(b_enc.begin(), b_enc.end());
    out.w_dec = w_dec.template cast<U>();
    if (b_dec) out.b_dec = std::vector<U>(b_dec->begin(), b_dec->end());
    out.activation = activation;
    return out;
  }
};

using SaeParams = BasicSaeParams<float>;
using SaeParams64 = BasicSaeParams<double>;

/// Bitwise equality of every field.
bool bitwise_equal(const SaeParams& a, const SaeParams& b);

template <typename T>
struct BasicLatentBatch {
  BasicMatrix<T> pre;   // B x F, before the gate
  BasicMatrix<T> post;  // B x F, after the gate

  std::size_t nonzero_count() const;
};

using LatentBatch = BasicLatentBatch<float>;

template <typename T>
BasicMatrix<T> encode(const BasicSaeParams<T>& sae, const BasicMatrix<T>& x);

template <typename T>
BasicLatentBatch<T> apply_batch_topk(const BasicMatrix<T>& pre, std::size_t k);

template <typename T>
BasicLatentBatch<T> apply_jumprelu(const BasicMatrix<T>& pre, const std::vector<float>& thresholds);

template <typename T>
BasicLatentBatch<T> apply_activation(const ActivationConfig& act, const BasicMatrix<T>& pre);

template <typename T>
BasicMatrix<T> decode(const BasicSaeParams<T>& sae, const BasicMatrix<T>& z);

template <typename T>
struct BasicReconstruction {
  BasicMatrix<T> x_hat;
  BasicLatentBatch<T> latents;
};

using Reconstruction = BasicReconstruction<float>;

template <typename T>
BasicReconstruction<T> reconstruct(const BasicSaeParams<T>& sae, const BasicMatrix<T>& x);

struct CalibrationOptions {
  double alpha = 0.01;
  std::size_t batch_size = 4096;
  /// Features [0, frozen_prefix) keep the thresholds given in `inherited`.
  std::size_t frozen_prefix = 0;
  std::vector<float> inherited;
};

/// Threshold scaling so the calibration activations themselves pass the
/// strict comparison.
constexpr double kThresholdShrink = 1e-6;

/// Converts a batch-topk SAE to jumpReLU. theta_f is the alpha-quantile
/// (lower empirical, no interpolation) of the pre-activations batch-topk kept
/// for feature f, times (1 - 1e-6); +inf when f was never kept.
SaeParams calibrate_thresholds(const SaeParams& sae, BatchSource& calibration,
                               const CalibrationOptions& options = {});

/// Column f of W_dec scaled to unit norm, as a flat d-vector.
std::vector<float> unit_decoder_column(const SaeParams& sae, std::size_t f);

}  // namespace saeboost
