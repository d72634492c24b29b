#include "saeboost/source.hpp"

#include <algorithm>
#include <vector>

namespace saeboost {

MatrixSource::MatrixSource(Matrix data, bool cycle) : data_(std::move(data)), cycle_(cycle) {}

Matrix MatrixSource::next(std::size_t max_rows) {
  if (data_.rows() == 0 || max_rows == 0) return {};
  if (cursor_ >= data_.rows()) {
    if (!cycle_) return {};
    cursor_ = 0;
  }
  const std::size_t take = std::min(max_rows, data_.rows() - cursor_);
  Matrix out = data_.slice_rows(cursor_, take);
  cursor_ += take;
  return out;
}

Matrix CyclingSource::next(std::size_t max_rows) {
  Matrix out = inner_->next(max_rows);
  if (out.rows() == 0 && max_rows > 0) {
    inner_->rewind();
    out = inner_->next(max_rows);
  }
  return out;
}

Matrix collect(BatchSource& source, std::size_t limit, std::size_t chunk) {
  std::vector<float> values;
  std::size_t rows = 0;
  while (limit == 0 || rows < limit) {
    const std::size_t want = limit == 0 ? chunk : std::min(chunk, limit - rows);
    Matrix batch = source.next(want);
    if (batch.rows() == 0) break;
    values.insert(values.end(), batch.values().begin(), batch.values().end());
    rows += batch.rows();
  }
  return Matrix(rows, source.dim(), std::move(values));
}

}  // namespace saeboost
