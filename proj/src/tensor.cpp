#include "saeboost/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <numbers>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace saeboost {

namespace {

std::atomic<bool> g_deterministic{true};
std::atomic<int> g_workers{0};

int read_worker_env() {
  if (const char* env = std::getenv("SAEBOOST_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// Rows below this are not worth a parallel region.
constexpr std::size_t kParallelMinWork = 1u << 16;

}  // namespace

bool deterministic_mode() { return g_deterministic.load(); }
void set_deterministic_mode(bool on) { g_deterministic.store(on); }

int worker_count() {
  int n = g_workers.load();
  if (n <= 0) {
    n = read_worker_env();
    g_workers.store(n);
  }
  return n;
}

void set_worker_count(int n) { g_workers.store(n > 0 ? n : 1); }

namespace {

// Accumulates rows [i, i + R) of a*b over output columns [j0, j0 + w) in
// registers. Every element still sums its products over k in ascending order.
template <typename T, std::size_t R, std::size_t JB>
void matmul_block(const T* ap, const T* bp, T* cp, std::size_t i, std::size_t j0, std::size_t w,
                  std::size_t inner, std::size_t m) {
  T acc[R][JB] = {};
  if (w == JB) {
    for (std::size_t k = 0; k < inner; ++k) {
      const T* b = bp + k * m + j0;
      for (std::size_t r = 0; r < R; ++r) {
        const T a = ap[(i + r) * inner + k];
        for (std::size_t j = 0; j < JB; ++j) acc[r][j] += a * b[j];
      }
    }
  } else {
    for (std::size_t k = 0; k < inner; ++k) {
      const T* b = bp + k * m + j0;
      for (std::size_t r = 0; r < R; ++r) {
        const T a = ap[(i + r) * inner + k];
        for (std::size_t j = 0; j < w; ++j) acc[r][j] += a * b[j];
      }
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < w; ++j) cp[(i + r) * m + j0 + j] = acc[r][j];
  }
}

}  // namespace

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  constexpr std::size_t kRows = 4;
  constexpr std::size_t kCols = 256 / sizeof(T);
  const std::size_t n = a.rows();
  const std::size_t inner = a.cols();
  const std::size_t m = b.cols();
  BasicMatrix<T> c(n, m);
  const T* ap = a.values().data();
  const T* bp = b.values().data();
  T* cp = c.values().data();
  // Row blocks are fixed by n alone, so the work split never changes results.
  const std::size_t blocks = (n + kRows - 1) / kRows;
  [[maybe_unused]] const bool parallel = n * inner * m >= kParallelMinWork && worker_count() > 1;
#pragma omp parallel for schedule(static) num_threads(worker_count()) if (parallel)
  for (std::ptrdiff_t bb = 0; bb < static_cast<std::ptrdiff_t>(blocks); ++bb) {
    const std::size_t i = static_cast<std::size_t>(bb) * kRows;
    for (std::size_t j0 = 0; j0 < m; j0 += kCols) {
      const std::size_t w = std::min(kCols, m - j0);
      if (i + kRows <= n) {
        matmul_block<T, kRows, kCols>(ap, bp, cp, i, j0, w, inner, m);
      } else {
        for (std::size_t r = i; r < n; ++r) matmul_block<T, 1, kCols>(ap, bp, cp, r, j0, w, inner, m);
      }
    }
  }
  return c;
}

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a) {
  BasicMatrix<T> t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  }
  return t;
}

template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.cols()) + " differ");
  }
  return matmul(a, transpose(b));
}

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
bool bitwise_equal(std::span<const T> a, std::span<const T> b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}

// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = seed;
  std::uint64_t h = splitmix64(s);
  s = h ^ (stream * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL);
  return splitmix64(s);
}

Rng::Rng(std::uint64_t seed) {
  std::uint64_t state = seed;
  for (auto& word : s_) word = splitmix64(state);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = std::rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection on the top of the range keeps the result unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

// ---------------------------------------------------------------------------

template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamState<T>& state) {
  if (param.size() != grad.size() || state.m.size() != param.size() ||
      state.v.size() != param.size()) {
    throw ShapeError("adam_step: buffer sizes disagree for '" + state.name + "'");
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw NumericError("non-finite gradient in '" + state.name + "' at index " +
                         std::to_string(i));
    }
  }
  state.step += 1;
  const auto& h = state.hyper;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  const T b1 = static_cast<T>(h.beta1);
  const T b2 = static_cast<T>(h.beta2);
  const T one_m_b1 = static_cast<T>(1.0 - h.beta1);
  const T one_m_b2 = static_cast<T>(1.0 - h.beta2);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    state.m[i] = b1 * state.m[i] + one_m_b1 * g;
    state.v[i] = b2 * state.v[i] + one_m_b2 * g * g;
    const double m_hat = static_cast<double>(state.m[i]) / bc1;
    const double v_hat = static_cast<double>(state.v[i]) / bc2;
    param[i] -= static_cast<T>(h.learning_rate * m_hat / (std::sqrt(v_hat) + h.epsilon));
  }
}

#define SAEBOOST_INSTANTIATE(T)                                                        \
  template BasicMatrix<T> matmul<T>(const BasicMatrix<T>&, const BasicMatrix<T>&);    \
  template BasicMatrix<T> matmul_nt<T>(const BasicMatrix<T>&, const BasicMatrix<T>&); \
  template BasicMatrix<T> transpose<T>(const BasicMatrix<T>&);                         \
  template bool all_finite<T>(std::span<const T>);                                     \
  template bool bitwise_equal<T>(std::span<const T>, std::span<const T>);              \
  template void adam_step<T>(std::span<T>, std::span<const T>, AdamState<T>&);

SAEBOOST_INSTANTIATE(float)
SAEBOOST_INSTANTIATE(double)

#undef SAEBOOST_INSTANTIATE

}  // namespace saeboost
