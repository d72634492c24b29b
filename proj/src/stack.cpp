#include "saeboost/stack.hpp"

#include <algorithm>

namespace saeboost {

BoostStack::BoostStack(SaeParams base) : base_(std::move(base)) {
  base_.validate();
  if (base_.role == SaeRole::kResidual) throw ConfigError("stack base cannot be a residual SAE");
}

void BoostStack::add_residual(std::string domain_id, SaeParams residual) {
  residual.validate();
  if (residual.role != SaeRole::kResidual || residual.b_dec) {
    throw ConfigError("stack member '" + domain_id + "' is not a bias-free residual SAE");
  }
  if (residual.input_dim() != base_.input_dim()) {
    throw ShapeError("residual '" + domain_id + "' has d=" + std::to_string(residual.input_dim()) +
                     ", base has d=" + std::to_string(base_.input_dim()));
  }
  const bool duplicate = std::any_of(residuals_.begin(), residuals_.end(),
                                     [&](const ResidualEntry& e) { return e.domain_id == domain_id; });
  if (duplicate) throw ConfigError("duplicate residual domain id '" + domain_id + "'");
  residuals_.push_back({std::move(domain_id), std::move(residual)});
}

void accumulate(Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("accumulate: shape mismatch");
  auto dst = a.values();
  auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

StackReconstruction stitched_reconstruct(const BoostStack& stack, const Matrix& x) {
  if (x.cols() != stack.input_dim()) {
    throw ShapeError("stitched_reconstruct: input width " + std::to_string(x.cols()) +
                     " != d=" + std::to_string(stack.input_dim()));
  }
  StackReconstruction out;
  out.latents.reserve(stack.component_count());
  Reconstruction base = reconstruct(stack.base(), x);
  out.x_hat = std::move(base.x_hat);
  out.latents.push_back(std::move(base.latents));
  for (const auto& entry : stack.residuals()) {
    Reconstruction part = reconstruct(entry.sae, x);
    accumulate(out.x_hat, part.x_hat);
    out.latents.push_back(std::move(part.latents));
  }
  return out;
}

std::vector<double> component_l0(const std::vector<LatentBatch>& latents) {
  std::vector<double> out;
  out.reserve(latents.size());
  for (const auto& lat : latents) {
    const std::size_t rows = lat.post.rows();
    out.push_back(rows == 0 ? 0.0
                            : static_cast<double>(lat.nonzero_count()) / static_cast<double>(rows));
  }
  return out;
}

double stack_l0(const std::vector<LatentBatch>& latents) {
  if (latents.empty() || latents.front().post.rows() == 0) return 0.0;
  std::size_t total = 0;
  for (const auto& lat : latents) total += lat.nonzero_count();
  return static_cast<double>(total) / static_cast<double>(latents.front().post.rows());
}

}  // namespace saeboost
