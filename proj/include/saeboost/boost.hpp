#pragma once

#include <cstddef>
#include <memory>

#include "saeboost/stack.hpp"
#include "saeboost/trainer.hpp"

namespace saeboost {

/// Full-scale reference sizes: base k, residual k and residual dictionary.
inline constexpr std::size_t kPaperBaseK = 50;
inline constexpr std::size_t kPaperResidualK = 5;
inline constexpr std::size_t kPaperResidualSize = 1024;

inline constexpr std::size_t kDefaultResidualK = kPaperResidualK;

/// Residual dictionary for a base of `base_features`: one eighth, at least 1.
std::size_t default_residual_size(std::size_t base_features);

struct BoostOptions {
  /// Residual dictionary size; 0 selects default_residual_size(F_base).
  std::size_t features = 0;
  std::uint64_t init_seed = 0;
};

/// Trains one residual SAE against the error the frozen stack leaves on the
/// domain stream. `config.k` of 0 means kDefaultResidualK.
TrainResult train_boost(std::shared_ptr<const BoostStack> frozen, BatchSource& domain,
                        TrainConfig config, const BoostOptions& options = {}, const EvalSets& eval = {});

TrainResult train_boost(const SaeParams& base, BatchSource& domain, const TrainConfig& config,
                        const BoostOptions& options = {}, const EvalSets& eval = {});

}  // namespace saeboost
