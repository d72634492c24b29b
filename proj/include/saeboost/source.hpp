#pragma once

#include <cstddef>
#include <memory>

#include "saeboost/tensor.hpp"

namespace saeboost {

/// Sequential producer of activation batches. Implementations are
/// deterministic: rewind() followed by the same next() calls yields the same
/// rows.
class BatchSource {
 public:
  virtual ~BatchSource() = default;

  virtual std::size_t dim() const = 0;
  /// Up to `max_rows` rows; an empty matrix means the source is exhausted.
  virtual Matrix next(std::size_t max_rows) = 0;
  virtual void rewind() = 0;
};

/// Streams rows of an in-memory matrix, optionally cycling forever.
class MatrixSource final : public BatchSource {
 public:
  explicit MatrixSource(Matrix data, bool cycle = false);

  std::size_t dim() const override { return data_.cols(); }
  Matrix next(std::size_t max_rows) override;
  void rewind() override { cursor_ = 0; }

  const Matrix& data() const { return data_; }

 private:
  Matrix data_;
  bool cycle_;
  std::size_t cursor_ = 0;
};

/// Restarts `inner` whenever it runs dry, for multi-epoch passes over
/// finite data. Does not own `inner`.
class CyclingSource final : public BatchSource {
 public:
  explicit CyclingSource(BatchSource& inner) : inner_(&inner) {}

  std::size_t dim() const override { return inner_->dim(); }
  Matrix next(std::size_t max_rows) override;
  void rewind() override { inner_->rewind(); }

 private:
  BatchSource* inner_;
};

/// Drains a source into one matrix (at most `limit` rows; 0 = no limit).
Matrix collect(BatchSource& source, std::size_t limit = 0, std::size_t chunk = 4096);

}  // namespace saeboost
