#pragma once

#include <cstddef>
#include <vector>

#include "saeboost/source.hpp"
#include "saeboost/stack.hpp"

namespace saeboost {

/// Streaming accumulator for explained variance
///   EV = 1 - sum_n |x_n - x_hat_n|^2 / sum_n |x_n - mu|^2
/// with mu the mean of the evaluated set. Per-dimension moments are merged
/// batch by batch (Chan et al.), which matches a two-pass computation.
class ExplainedVariance {
 public:
  explicit ExplainedVariance(std::size_t dim);

  void add(const Matrix& x, const Matrix& x_hat);

  std::size_t count() const noexcept { return count_; }
  double squared_error() const noexcept { return sse_; }
  double total_variance() const;
  /// Throws DataError on an empty or zero-variance set.
  double value() const;

 private:
  std::size_t count_ = 0;
  double sse_ = 0.0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

struct EvalResult {
  double ev = 0.0;
  double mean_l0 = 0.0;
  std::vector<double> component_l0;
  std::size_t samples = 0;
};

/// One pass over `data` (from its current position) through the stack.
EvalResult evaluate(const BoostStack& stack, BatchSource& data, std::size_t batch_size);
EvalResult evaluate(const BoostStack& stack, const Matrix& data, std::size_t batch_size);

double explained_variance(const BoostStack& stack, BatchSource& data, std::size_t batch_size);
double mean_l0(const BoostStack& stack, BatchSource& data, std::size_t batch_size);

}  // namespace saeboost
