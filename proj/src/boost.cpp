#include "saeboost/boost.hpp"

#include <algorithm>

namespace saeboost {

std::size_t default_residual_size(std::size_t base_features) {
  return std::max<std::size_t>(1, base_features / 8);
}

TrainResult train_boost(std::shared_ptr<const BoostStack> frozen, BatchSource& domain,
                        TrainConfig config, const BoostOptions& options, const EvalSets& eval) {
  if (!frozen) throw ConfigError("train_boost needs a base stack");
  const std::size_t features =
      options.features != 0 ? options.features : default_residual_size(frozen->base().dict_size());
  if (config.k == 0) config.k = kDefaultResidualK;
  if (config.k > features) {
    throw ConfigError("residual k=" + std::to_string(config.k) + " exceeds its dictionary size " +
                      std::to_string(features));
  }
  const SaeParams init =
      init_params(frozen->input_dim(), features, SaeRole::kResidual, options.init_seed, config.k);
  return train(init, domain, config, TrainTarget::residual(std::move(frozen)), eval);
}

TrainResult train_boost(const SaeParams& base, BatchSource& domain, const TrainConfig& config,
                        const BoostOptions& options, const EvalSets& eval) {
  return train_boost(std::make_shared<const BoostStack>(base), domain, config, options, eval);
}

}  // namespace saeboost
