#include "saeboost/metrics.hpp"

#include <algorithm>

namespace saeboost {

ExplainedVariance::ExplainedVariance(std::size_t dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}

void ExplainedVariance::add(const Matrix& x, const Matrix& x_hat) {
  const std::size_t d = mean_.size();
  if (x.cols() != d || x_hat.cols() != d || x.rows() != x_hat.rows()) {
    throw ShapeError("explained variance: batch shapes disagree");
  }
  const std::size_t n = x.rows();
  if (n == 0) return;

  std::vector<double> batch_mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    auto xr = x.row(r);
    auto hr = x_hat.row(r);
    for (std::size_t i = 0; i < d; ++i) {
      batch_mean[i] += xr[i];
      const double e = static_cast<double>(xr[i]) - static_cast<double>(hr[i]);
      sse_ += e * e;
    }
  }
  for (double& m : batch_mean) m /= static_cast<double>(n);
  std::vector<double> batch_m2(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    auto xr = x.row(r);
    for (std::size_t i = 0; i < d; ++i) {
      const double c = static_cast<double>(xr[i]) - batch_mean[i];
      batch_m2[i] += c * c;
    }
  }

  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(n);
  const double total = na + nb;
  for (std::size_t i = 0; i < d; ++i) {
    const double delta = batch_mean[i] - mean_[i];
    mean_[i] += delta * nb / total;
    m2_[i] += batch_m2[i] + delta * delta * na * nb / total;
  }
  count_ += n;
}

double ExplainedVariance::total_variance() const {
  double v = 0.0;
  for (double m : m2_) v += m;
  return v;
}

double ExplainedVariance::value() const {
  if (count_ == 0) throw DataError("explained variance over an empty set");
  const double var = total_variance();
  if (!(var > 0.0)) throw DataError("explained variance undefined: evaluation set has zero variance");
  return 1.0 - sse_ / var;
}

namespace {

template <typename NextBatch>
EvalResult evaluate_batches(const BoostStack& stack, std::size_t dim, NextBatch&& next) {
  if (dim != stack.input_dim()) {
    throw ShapeError("evaluate: data width " + std::to_string(dim) + " != d=" +
                     std::to_string(stack.input_dim()));
  }
  ExplainedVariance ev(stack.input_dim());
  std::vector<std::size_t> active(stack.component_count(), 0);
  while (true) {
    Matrix batch = next();
    if (batch.rows() == 0) break;
    const StackReconstruction rec = stitched_reconstruct(stack, batch);
    ev.add(batch, rec.x_hat);
    for (std::size_t c = 0; c < rec.latents.size(); ++c) active[c] += rec.latents[c].nonzero_count();
  }
  if (ev.count() == 0) throw DataError("evaluation set is empty");
  EvalResult out;
  out.samples = ev.count();
  out.ev = ev.value();
  const double n = static_cast<double>(out.samples);
  std::size_t total = 0;
  for (std::size_t a : active) {
    out.component_l0.push_back(static_cast<double>(a) / n);
    total += a;
  }
  out.mean_l0 = static_cast<double>(total) / n;
  return out;
}

}  // namespace

EvalResult evaluate(const BoostStack& stack, BatchSource& data, std::size_t batch_size) {
  return evaluate_batches(stack, data.dim(), [&] { return data.next(batch_size); });
}

EvalResult evaluate(const BoostStack& stack, const Matrix& data, std::size_t batch_size) {
  std::size_t cursor = 0;
  return evaluate_batches(stack, data.cols(), [&] {
    const std::size_t take = std::min(batch_size, data.rows() - cursor);
    Matrix batch = data.slice_rows(cursor, take);
    cursor += take;
    return batch;
  });
}

double explained_variance(const BoostStack& stack, BatchSource& data, std::size_t batch_size) {
  return evaluate(stack, data, batch_size).ev;
}

double mean_l0(const BoostStack& stack, BatchSource& data, std::size_t batch_size) {
  return evaluate(stack, data, batch_size).mean_l0;
}

}  // namespace saeboost
