#pragma once

#include <string>
#include <vector>

#include "saeboost/sae.hpp"

namespace saeboost {

struct ResidualEntry {
  std::string domain_id;
  SaeParams sae;
};

/// A base SAE plus residual SAEs applied in insertion order at inference:
/// x_total = base(x) + sum_i residual_i(x).
class BoostStack {
 public:
  explicit BoostStack(SaeParams base);

  /// Appends a residual; rejects width mismatches, decoder biases and
  /// duplicate domain ids.
  void add_residual(std::string domain_id, SaeParams residual);

  const SaeParams& base() const noexcept { return base_; }
  const std::vector<ResidualEntry>& residuals() const noexcept { return residuals_; }
  std::size_t input_dim() const noexcept { return base_.input_dim(); }
  std::size_t component_count() const noexcept { return 1 + residuals_.size(); }

 private:
  SaeParams base_;
  std::vector<ResidualEntry> residuals_;
};

struct StackReconstruction {
  Matrix x_hat;
  /// latents[0] belongs to the base, latents[i + 1] to residual i.
  std::vector<LatentBatch> latents;
};

/// Every component reads the same x; residual outputs are added to the base
/// reconstruction one at a time in insertion order.
StackReconstruction stitched_reconstruct(const BoostStack& stack, const Matrix& x);

/// In-place elementwise a += b, the summation used for stitching.
void accumulate(Matrix& a, const Matrix& b);

/// Mean over samples of the active-feature count summed over components.
double stack_l0(const std::vector<LatentBatch>& latents);

/// Mean active features per sample, one entry per component.
std::vector<double> component_l0(const std::vector<LatentBatch>& latents);

}  // namespace saeboost
