#include "saeboost/sae.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <type_traits>

#include "saeboost/source.hpp"

namespace saeboost {

const char* to_string(SaeRole role) {
  switch (role) {
    case SaeRole::kBase: return "base";
    case SaeRole::kResidual: return "residual";
    case SaeRole::kExtended: return "extended";
    case SaeRole::kStitched: return "stitched";
    case SaeRole::kFinetuned: return "finetuned";
  }
  return "base";
}

SaeRole role_from_string(const std::string& name) {
  if (name == "base") return SaeRole::kBase;
  if (name == "residual") return SaeRole::kResidual;
  if (name == "extended") return SaeRole::kExtended;
  if (name == "stitched") return SaeRole::kStitched;
  if (name == "finetuned") return SaeRole::kFinetuned;
  throw FormatError("unknown SAE role '" + name + "'");
}

template <typename T>
void BasicSaeParams<T>::validate() const {
  const std::size_t f = dict_size();
  const std::size_t d = input_dim();
  if (f == 0 || d == 0) throw ShapeError("SAE needs d >= 1 and F >= 1");
  if (b_enc.size() != f) throw ShapeError("b_enc length " + std::to_string(b_enc.size()) + " != F");
  if (w_dec.rows() != d || w_dec.cols() != f) {
    throw ShapeError("W_dec is " + std::to_string(w_dec.rows()) + "x" + std::to_string(w_dec.cols()) +
                     ", expected " + std::to_string(d) + "x" + std::to_string(f));
  }
  if (b_dec && b_dec->size() != d) throw ShapeError("b_dec length != d");
  if (role == SaeRole::kResidual && b_dec) {
    throw ConfigError("residual SAE must not carry a decoder bias");
  }
  if (const auto* topk = std::get_if<BatchTopK>(&activation)) {
    if (topk->k < 1 || topk->k > f) {
      throw ConfigError("batch-topk k=" + std::to_string(topk->k) + " outside [1, " +
                        std::to_string(f) + "]");
    }
  } else {
    const auto& jr = std::get<JumpRelu>(activation);
    if (jr.thresholds.size() != f) throw ShapeError("jumpReLU threshold count != F");
    for (float t : jr.thresholds) {
      if (std::isnan(t) || t < 0.0f) throw ConfigError("jumpReLU thresholds must be >= 0");
    }
  }
  if (!all_finite(w_enc) || !all_finite(w_dec) || !all_finite<T>(b_enc) ||
      (b_dec && !all_finite<T>(*b_dec))) {
    throw NumericError("SAE weights contain non-finite values");
  }
}

bool bitwise_equal(const SaeParams& a, const SaeParams& b) {
  if (a.role != b.role || a.activation != b.activation) return false;
  if (a.activation.index() == 1) {
    const auto& ta = std::get<JumpRelu>(a.activation).thresholds;
    const auto& tb = std::get<JumpRelu>(b.activation).thresholds;
    if (!bitwise_equal<float>(ta, tb)) return false;
  }
  if (a.b_dec.has_value() != b.b_dec.has_value()) return false;
  if (a.b_dec && !bitwise_equal<float>(*a.b_dec, *b.b_dec)) return false;
  return bitwise_equal(a.w_enc, b.w_enc) && bitwise_equal(a.w_dec, b.w_dec) &&
         bitwise_equal<float>(a.b_enc, b.b_enc);
}

template <typename T>
std::size_t BasicLatentBatch<T>::nonzero_count() const {
  std::size_t n = 0;
  for (T v : post.values()) n += (v != T{0});
  return n;
}

template <typename T>
BasicMatrix<T> encode(const BasicSaeParams<T>& sae, const BasicMatrix<T>& x) {
  if (x.cols() != sae.input_dim()) {
    throw ShapeError("encode: input width " + std::to_string(x.cols()) + " != d=" +
                     std::to_string(sae.input_dim()));
  }
  BasicMatrix<T> pre = matmul_nt(x, sae.w_enc);
  const std::size_t f = sae.dict_size();
  for (std::size_t r = 0; r < pre.rows(); ++r) {
    T* row = pre.row(r).data();
    for (std::size_t j = 0; j < f; ++j) row[j] += sae.b_enc[j];
  }
  return pre;
}

template <typename T>
BasicLatentBatch<T> apply_batch_topk(const BasicMatrix<T>& pre, std::size_t k) {
  const std::size_t features = pre.cols();
  if (k < 1 || k > features) {
    throw ConfigError("batch-topk k=" + std::to_string(k) + " outside [1, " +
                      std::to_string(features) + "]");
  }
  const std::size_t budget = k * pre.rows();
  const auto values = pre.values();
  std::vector<std::uint32_t> candidates(values.size() + 1);
  std::size_t positives = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    candidates[positives] = static_cast<std::uint32_t>(i);
    positives += values[i] > T{0};
  }
  candidates.resize(positives);
  if (candidates.size() > budget) {
    // Cheap prefilter: a value below the true cutoff, estimated from a fixed
    // stride sample. If at least `budget` candidates clear it, the exact top
    // set lies among them.
    constexpr std::size_t kStride = 8;
    if (candidates.size() >= 4 * budget && budget >= 64) {
      std::vector<T> sample;
      sample.reserve(candidates.size() / kStride + 1);
      for (std::size_t c = 0; c < candidates.size(); c += kStride) sample.push_back(values[candidates[c]]);
      const std::size_t rank = std::min(sample.size() - 1, 2 * budget / kStride);
      std::nth_element(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(rank), sample.end(),
                       std::greater<>());
      const T floor = sample[rank];
      std::vector<std::uint32_t> above(candidates.size());
      std::size_t kept = 0;
      for (std::uint32_t i : candidates) {
        above[kept] = i;
        kept += values[i] >= floor;
      }
      if (kept >= budget) {
        above.resize(kept);
        candidates.swap(above);
      }
    }
    // Larger value first; equal values resolved by ascending (sample, feature),
    // which is ascending flat index in row-major storage.
    if constexpr (std::is_same_v<T, float>) {
      // Positive floats order like their bit patterns, so one integer key
      // carries both the value and the tie-break.
      std::vector<std::uint64_t> keys(candidates.size());
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        const std::uint32_t i = candidates[c];
        keys[c] = (static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(values[i])) << 32) |
                  (0xffffffffu - i);
      }
      std::nth_element(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(budget), keys.end(),
                       std::greater<>());
      candidates.resize(budget);
      for (std::size_t c = 0; c < budget; ++c) {
        candidates[c] = 0xffffffffu - static_cast<std::uint32_t>(keys[c] & 0xffffffffu);
      }
    } else {
      auto before = [&](std::uint32_t a, std::uint32_t b) {
        return values[a] > values[b] || (values[a] == values[b] && a < b);
      };
      std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(budget),
                       candidates.end(), before);
      candidates.resize(budget);
    }
  }
  BasicLatentBatch<T> out{pre, BasicMatrix<T>(pre.rows(), features)};
  auto post = out.post.values();
  for (std::uint32_t i : candidates) post[i] = values[i];
  return out;
}

template <typename T>
BasicLatentBatch<T> apply_jumprelu(const BasicMatrix<T>& pre, const std::vector<float>& thresholds) {
  const std::size_t features = pre.cols();
  if (thresholds.size() != features) {
    throw ShapeError("jumpReLU: " + std::to_string(thresholds.size()) + " thresholds for " +
                     std::to_string(features) + " features");
  }
  BasicLatentBatch<T> out{pre, BasicMatrix<T>(pre.rows(), features)};
  for (std::size_t r = 0; r < pre.rows(); ++r) {
    auto in = pre.row(r);
    auto dst = out.post.row(r);
    for (std::size_t f = 0; f < features; ++f) {
      if (in[f] > static_cast<T>(thresholds[f])) dst[f] = in[f];
    }
  }
  return out;
}

template <typename T>
BasicLatentBatch<T> apply_activation(const ActivationConfig& act, const BasicMatrix<T>& pre) {
  if (const auto* topk = std::get_if<BatchTopK>(&act)) return apply_batch_topk(pre, topk->k);
  return apply_jumprelu(pre, std::get<JumpRelu>(act).thresholds);
}

template <typename T>
BasicMatrix<T> decode(const BasicSaeParams<T>& sae, const BasicMatrix<T>& z) {
  const std::size_t features = sae.dict_size();
  const std::size_t d = sae.input_dim();
  if (z.cols() != features) {
    throw ShapeError("decode: latent width " + std::to_string(z.cols()) + " != F=" +
                     std::to_string(features));
  }
  // Feature-major copy of W_dec so each active feature adds one contiguous row.
  const BasicMatrix<T> directions = transpose(sae.w_dec);
  BasicMatrix<T> out(z.rows(), d);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    T* acc = out.row(r).data();
    auto zr = z.row(r);
    for (std::size_t f = 0; f < features; ++f) {
      const T a = zr[f];
      if (a == T{0}) continue;
      const T* dir = directions.row(f).data();
      for (std::size_t i = 0; i < d; ++i) acc[i] += a * dir[i];
    }
    if (sae.b_dec) {
      for (std::size_t i = 0; i < d; ++i) acc[i] += (*sae.b_dec)[i];
    }
  }
  return out;
}

template <typename T>
BasicReconstruction<T> reconstruct(const BasicSaeParams<T>& sae, const BasicMatrix<T>& x) {
  BasicLatentBatch<T> latents = apply_activation(sae.activation, encode(sae, x));
  BasicMatrix<T> x_hat = decode(sae, latents.post);
  return {std::move(x_hat), std::move(latents)};
}

SaeParams calibrate_thresholds(const SaeParams& sae, BatchSource& calibration,
                               const CalibrationOptions& options) {
  const auto* topk = std::get_if<BatchTopK>(&sae.activation);
  if (topk == nullptr) throw ConfigError("calibrate_thresholds needs a batch-topk SAE");
  if (options.alpha < 0.0 || options.alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
  if (options.frozen_prefix > sae.dict_size() || options.inherited.size() < options.frozen_prefix) {
    throw ConfigError("inherited thresholds do not cover the frozen prefix");
  }
  const std::size_t features = sae.dict_size();
  std::vector<std::vector<float>> kept(features);
  std::size_t rows = 0;
  while (true) {
    Matrix batch = calibration.next(options.batch_size);
    if (batch.rows() == 0) break;
    rows += batch.rows();
    const LatentBatch lat = apply_batch_topk(encode(sae, batch), topk->k);
    for (std::size_t r = 0; r < batch.rows(); ++r) {
      auto post = lat.post.row(r);
      for (std::size_t f = 0; f < features; ++f) {
        if (post[f] != 0.0f) kept[f].push_back(post[f]);
      }
    }
  }
  if (rows == 0) throw DataError("calibration stream is empty");

  std::vector<float> thresholds(features, std::numeric_limits<float>::infinity());
  for (std::size_t f = 0; f < features; ++f) {
    if (f < options.frozen_prefix) {
      thresholds[f] = options.inherited[f];
      continue;
    }
    auto& values = kept[f];
    if (values.empty()) continue;
    const auto rank = static_cast<std::size_t>(options.alpha * static_cast<double>(values.size() - 1));
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank), values.end());
    thresholds[f] = static_cast<float>(static_cast<double>(values[rank]) * (1.0 - kThresholdShrink));
  }
  SaeParams out = sae;
  out.activation = JumpRelu{std::move(thresholds)};
  return out;
}

std::vector<float> unit_decoder_column(const SaeParams& sae, std::size_t f) {
  const std::size_t d = sae.input_dim();
  double norm2 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double v = sae.w_dec(i, f);
    norm2 += v * v;
  }
  if (norm2 == 0.0) throw NumericError("decoder column " + std::to_string(f) + " has zero norm");
  const double inv = 1.0 / std::sqrt(norm2);
  std::vector<float> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(sae.w_dec(i, f) * inv);
  return out;
}

#define SAEBOOST_INSTANTIATE(T)                                                                  \
  template struct BasicSaeParams<T>;                                                             \
  template struct BasicLatentBatch<T>;                                                           \
  template BasicMatrix<T> encode<T>(const BasicSaeParams<T>&, const BasicMatrix<T>&);            \
  template BasicLatentBatch<T> apply_batch_topk<T>(const BasicMatrix<T>&, std::size_t);          \
  template BasicLatentBatch<T> apply_jumprelu<T>(const BasicMatrix<T>&, const std::vector<float>&); \
  template BasicLatentBatch<T> apply_activation<T>(const ActivationConfig&, const BasicMatrix<T>&); \
  template BasicMatrix<T> decode<T>(const BasicSaeParams<T>&, const BasicMatrix<T>&);            \
  template BasicReconstruction<T> reconstruct<T>(const BasicSaeParams<T>&, const BasicMatrix<T>&);

SAEBOOST_INSTANTIATE(float)
SAEBOOST_INSTANTIATE(double)

#undef SAEBOOST_INSTANTIATE

}  // namespace saeboost
