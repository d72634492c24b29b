#pragma once

// Reference computations for tests: plain loops in double precision, written
// without the library's kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <tuple>
#include <vector>

#include "saeboost/sae.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

template <typename M>
Mat to_mat(const M& m) {
  Mat out(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out[r][c] = static_cast<double>(m(r, c));
  }
  return out;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  const std::size_t n = a.size(), k = b.size(), m = b.empty() ? 0 : b[0].size();
  Mat out(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i][p] * b[p][j];
      out[i][j] = s;
    }
  }
  return out;
}

/// Plain parameter set in double precision.
struct Sae {
  Mat w_enc;                  // F x d
  std::vector<double> b_enc;  // F
  Mat w_dec;                  // d x F
  std::vector<double> b_dec;  // d, empty when absent
};

template <typename T>
Sae from_params(const saeboost::BasicSaeParams<T>& p) {
  Sae s;
  s.w_enc = to_mat(p.w_enc);
  s.b_enc.assign(p.b_enc.begin(), p.b_enc.end());
  s.w_dec = to_mat(p.w_dec);
  if (p.b_dec) s.b_dec.assign(p.b_dec->begin(), p.b_dec->end());
  return s;
}

inline Mat pre_activations(const Sae& s, const Mat& x) {
  Mat out(x.size(), std::vector<double>(s.b_enc.size()));
  for (std::size_t b = 0; b < x.size(); ++b) {
    for (std::size_t f = 0; f < s.b_enc.size(); ++f) {
      double acc = s.b_enc[f];
      for (std::size_t i = 0; i < x[b].size(); ++i) acc += s.w_enc[f][i] * x[b][i];
      out[b][f] = acc;
    }
  }
  return out;
}

/// Support mask of batch-topk: every positive candidate ranked by value,
/// ties by (row, feature); the first k*B survive.
inline std::vector<std::vector<bool>> topk_mask(const Mat& pre, std::size_t k) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> cand;
  for (std::size_t r = 0; r < pre.size(); ++r) {
    for (std::size_t f = 0; f < pre[r].size(); ++f) {
      if (pre[r][f] > 0) cand.emplace_back(pre[r][f], r, f);
    }
  }
  std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  std::vector<std::vector<bool>> mask(pre.size(), std::vector<bool>(pre.empty() ? 0 : pre[0].size(), false));
  const std::size_t budget = std::min(cand.size(), k * pre.size());
  for (std::size_t i = 0; i < budget; ++i) mask[std::get<1>(cand[i])][std::get<2>(cand[i])] = true;
  return mask;
}

inline std::vector<std::vector<bool>> jumprelu_mask(const Mat& pre, const std::vector<float>& th) {
  std::vector<std::vector<bool>> mask(pre.size(), std::vector<bool>(th.size(), false));
  for (std::size_t r = 0; r < pre.size(); ++r) {
    for (std::size_t f = 0; f < th.size(); ++f) mask[r][f] = pre[r][f] > static_cast<double>(th[f]);
  }
  return mask;
}

/// loss = (1/B) sum_b |t_b - x_hat_b|^2 + l1 * (1/B) sum_b sum_f z_bf with the
/// support held at `mask`.
inline double loss(const Sae& s, const Mat& x, const Mat& t, double l1, const std::vector<std::vector<bool>>& mask) {
  const Mat pre = pre_activations(s, x);
  const std::size_t d = x.empty() ? 0 : x[0].size();
  double total = 0.0;
  for (std::size_t b = 0; b < x.size(); ++b) {
    std::vector<double> xh(d, 0.0);
    if (!s.b_dec.empty()) xh = s.b_dec;
    double zsum = 0.0;
    for (std::size_t f = 0; f < s.b_enc.size(); ++f) {
      if (!mask[b][f]) continue;
      zsum += pre[b][f];
      for (std::size_t i = 0; i < d; ++i) xh[i] += s.w_dec[i][f] * pre[b][f];
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) sq += (t[b][i] - xh[i]) * (t[b][i] - xh[i]);
    total += sq + l1 * zsum;
  }
  return total / static_cast<double>(x.size());
}

/// 1 - SSE / sum |x - mean|^2, two passes.
inline double explained_variance(const Mat& x, const Mat& xh) {
  const std::size_t n = x.size(), d = x[0].size();
  std::vector<double> mu(d, 0.0);
  for (const auto& r : x) {
    for (std::size_t i = 0; i < d; ++i) mu[i] += r[i];
  }
  for (auto& m : mu) m /= static_cast<double>(n);
  double sse = 0.0, tv = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < d; ++i) {
      sse += (x[b][i] - xh[b][i]) * (x[b][i] - xh[b][i]);
      tv += (x[b][i] - mu[i]) * (x[b][i] - mu[i]);
    }
  }
  return 1.0 - sse / tv;
}

/// A random tiny 64-bit instance (d <= 8, F <= 16, B <= 4) from std::mt19937_64.
struct Tiny {
  saeboost::SaeParams64 sae;
  saeboost::Matrix64 x;
  saeboost::Matrix64 target;
  double l1 = 0.0;
};

inline Tiny random_tiny(std::uint64_t seed, bool allow_l1 = true) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(gen);
  };
  Tiny t;
  const std::size_t d = pick(1, 8), f = pick(1, 16), b = pick(1, 4);
  const bool residual = pick(0, 1) == 0;
  t.sae.role = residual ? saeboost::SaeRole::kResidual : saeboost::SaeRole::kBase;
  t.sae.w_enc = saeboost::Matrix64(f, d);
  for (auto& v : t.sae.w_enc.values()) v = 0.7 * normal(gen);
  t.sae.b_enc.resize(f);
  for (auto& v : t.sae.b_enc) v = 0.3 * normal(gen);
  t.sae.w_dec = saeboost::Matrix64(d, f);
  for (auto& v : t.sae.w_dec.values()) v = 0.7 * normal(gen);
  if (!residual) {
    t.sae.b_dec = std::vector<double>(d);
    for (auto& v : *t.sae.b_dec) v = 0.3 * normal(gen);
  }
  if (pick(0, 1) == 0) {
    t.sae.activation = saeboost::BatchTopK{pick(1, f)};
  } else {
    std::vector<float> th(f);
    for (auto& v : th) v = static_cast<float>(0.5 * unit(gen));
    t.sae.activation = saeboost::JumpRelu{th};
  }
  t.x = saeboost::Matrix64(b, d);
  for (auto& v : t.x.values()) v = normal(gen);
  t.target = saeboost::Matrix64(b, d);
  for (auto& v : t.target.values()) v = normal(gen);
  t.l1 = allow_l1 ? 0.1 * unit(gen) : 0.0;
  return t;
}

inline std::vector<std::vector<bool>> support(const Tiny& t) {
  const Mat pre = pre_activations(from_params(t.sae), to_mat(t.x));
  if (const auto* k = std::get_if<saeboost::BatchTopK>(&t.sae.activation)) return topk_mask(pre, k->k);
  return jumprelu_mask(pre, std::get<saeboost::JumpRelu>(t.sae.activation).thresholds);
}

struct FdResult {
  std::size_t partials = 0;
  std::size_t failures = 0;
  double worst_abs = 0.0;
  double worst_rel = 0.0;
};

/// Central differences of oracle::loss at step eps against `analytic`
/// (flattened in the order w_enc, b_enc, w_dec, b_dec).
inline FdResult finite_differences(const Tiny& t, const std::vector<double>& analytic, double eps, double rel_tol,
                                   double abs_tol) {
  Sae s = from_params(t.sae);
  const Mat x = to_mat(t.x), tg = to_mat(t.target);
  const auto mask = support(t);
  std::vector<double*> slots;
  for (auto& row : s.w_enc) {
    for (auto& v : row) slots.push_back(&v);
  }
  for (auto& v : s.b_enc) slots.push_back(&v);
  // w_dec is d x F; the library flattens it row-major as well.
  for (auto& row : s.w_dec) {
    for (auto& v : row) slots.push_back(&v);
  }
  for (auto& v : s.b_dec) slots.push_back(&v);
  FdResult r;
  for (std::size_t i = 0; i < slots.size() && i < analytic.size(); ++i) {
    const double saved = *slots[i];
    *slots[i] = saved + eps;
    const double up = loss(s, x, tg, t.l1, mask);
    *slots[i] = saved - eps;
    const double down = loss(s, x, tg, t.l1, mask);
    *slots[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double diff = std::abs(numeric - analytic[i]);
    const double mag = std::max(std::abs(numeric), std::abs(analytic[i]));
    r.worst_abs = std::max(r.worst_abs, diff);
    if (mag > 0) r.worst_rel = std::max(r.worst_rel, diff / mag);
    if (diff > std::max(abs_tol, rel_tol * mag)) ++r.failures;
    ++r.partials;
  }
  if (slots.size() != analytic.size()) r.failures += 1;
  return r;
}

}  // namespace oracle
