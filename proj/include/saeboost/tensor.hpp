#pragma once

// Dense row-major matrices, the seeded random stream, and Adam.
//
// All kernels accumulate every output element in a fixed order (ascending
// inner index), so results are bitwise identical for any worker count.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "saeboost/error.hpp"

namespace saeboost {

template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  static BasicMatrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged initializer rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return BasicMatrix(r, c, std::move(data));
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  /// Copies rows [first, first + count).
  BasicMatrix slice_rows(std::size_t first, std::size_t count) const {
    if (first + count > rows_) throw ShapeError("row slice out of range");
    std::vector<T> out(data_.begin() + static_cast<std::ptrdiff_t>(first * cols_),
                       data_.begin() + static_cast<std::ptrdiff_t>((first + count) * cols_));
    return BasicMatrix(count, cols_, std::move(out));
  }

  template <typename U>
  BasicMatrix<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return BasicMatrix<U>(rows_, cols_, std::move(out));
  }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;
using Matrix64 = BasicMatrix<double>;

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

/// a * b^T without materializing the transpose for the caller.
template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a);

template <typename T>
bool all_finite(std::span<const T> values);

template <typename T>
bool all_finite(const BasicMatrix<T>& m) {
  return all_finite(m.values());
}

/// Byte-level equality (distinguishes -0.0 from 0.0 and compares NaN payloads).
template <typename T>
bool bitwise_equal(std::span<const T> a, std::span<const T> b);

template <typename T>
bool bitwise_equal(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && bitwise_equal(a.values(), b.values());
}

// ---------------------------------------------------------------------------
// Runtime knobs

/// Global determinism flag. Kernels are order-fixed either way; the flag
/// additionally pins wall-clock fields in emitted reports.
bool deterministic_mode();
void set_deterministic_mode(bool on);

/// Worker cap, read from SAEBOOST_THREADS on first use.
int worker_count();
void set_worker_count(int n);

// ---------------------------------------------------------------------------
// Random stream: xoshiro256** seeded through splitmix64.
//
// Both algorithms are fully specified by Blackman & Vigna, so a seed yields the
// same stream on every platform. Normals use Box-Muller on top of uniform().

std::uint64_t splitmix64(std::uint64_t& state);

/// Stateless mix of (seed, stream) into a 64-bit seed for counter-based use.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n), n > 0, unbiased.
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  std::string name;
  std::vector<T> m;
  std::vector<T> v;
  std::uint64_t step = 0;
  AdamHyper hyper;

  AdamState() = default;
  AdamState(std::string param_name, std::size_t n, AdamHyper h)
      : name(std::move(param_name)), m(n, T{0}), v(n, T{0}), hyper(h) {}

  void reset_entry(std::size_t i) {
    m[i] = T{0};
    v[i] = T{0};
  }
};

/// Bias-corrected Adam update of `param` in place.
template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamState<T>& state);

template <typename T>
void adam_step(BasicMatrix<T>& param, const BasicMatrix<T>& grad, AdamState<T>& state) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols()) {
    throw ShapeError("adam_step: gradient shape mismatch for '" + state.name + "'");
  }
  adam_step<T>(param.values(), grad.values(), state);
}

}  // namespace saeboost
