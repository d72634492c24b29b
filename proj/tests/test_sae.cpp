#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "saeboost/sae.hpp"
#include "saeboost/source.hpp"
#include "saeboost/trainer.hpp"

using namespace saeboost;

namespace {

SaeParams identity_sae(std::size_t d, std::size_t k) {
  SaeParams p;
  p.w_enc = Matrix::identity(d);
  p.b_enc.assign(d, 0.0f);
  p.w_dec = Matrix::identity(d);
  p.b_dec = std::vector<float>(d, 0.0f);
  p.activation = BatchTopK{k};
  return p;
}

Matrix gaussian_rows(std::uint64_t seed, std::size_t n, std::size_t d) {
  Rng rng(seed);
  Matrix m(n, d);
  for (auto& v : m.values()) v = static_cast<float>(rng.normal());
  return m;
}

}  // namespace

TEST_CASE("batch-topk keeps the k*B largest values across the batch") {
  const Matrix pre = Matrix::from_rows({{9, 8}, {1, 2}});
  const LatentBatch lat = apply_batch_topk(pre, 1);
  CHECK(lat.post == Matrix::from_rows({{9, 8}, {0, 0}}));
  CHECK(lat.nonzero_count() == 2);
}

TEST_CASE("batch-topk drops non-positive values even with budget left") {
  const Matrix pre = Matrix::from_rows({{-1, 0, 3}, {0, -2, -5}});
  const LatentBatch lat = apply_batch_topk(pre, 3);
  CHECK(lat.post == Matrix::from_rows({{0, 0, 3}, {0, 0, 0}}));
}

TEST_CASE("batch-topk breaks ties toward the lower flat index") {
  const Matrix pre = Matrix::from_rows({{1, 1, 1}, {1, 1, 1}});
  const LatentBatch lat = apply_batch_topk(pre, 1);
  CHECK(lat.post == Matrix::from_rows({{1, 1, 0}, {0, 0, 0}}));
}

TEST_CASE("batch-topk agrees with the sorting oracle on random batches") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + rng.below(6), f = 1 + rng.below(20), k = 1 + rng.below(f);
    Matrix pre(b, f);
    // Quantized values so ties are common.
    for (auto& v : pre.values()) v = static_cast<float>(static_cast<int>(rng.below(9)) - 3);
    const auto mask = oracle::topk_mask(oracle::to_mat(pre), k);
    const LatentBatch lat = apply_batch_topk(pre, k);
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t c = 0; c < f; ++c) REQUIRE(lat.post(r, c) == (mask[r][c] ? pre(r, c) : 0.0f));
    }
  }
}

TEST_CASE("jumpReLU gate is strict and honors infinite thresholds") {
  const Matrix pre = Matrix::from_rows({{0.5f, 0.6f, 100.0f}});
  const float inf = std::numeric_limits<float>::infinity();
  const LatentBatch lat = apply_jumprelu(pre, {0.5f, 0.5f, inf});
  CHECK(lat.post == Matrix::from_rows({{0.0f, 0.6f, 0.0f}}));
}

TEST_CASE("forward pass matches the loop oracle") {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const oracle::Tiny t = oracle::random_tiny(s);
    const auto rec = reconstruct(t.sae, t.x);
    const auto sae = oracle::from_params(t.sae);
    const auto pre = oracle::pre_activations(sae, oracle::to_mat(t.x));
    const auto mask = oracle::support(t);
    for (std::size_t r = 0; r < t.x.rows(); ++r) {
      for (std::size_t i = 0; i < t.x.cols(); ++i) {
        double want = sae.b_dec.empty() ? 0.0 : sae.b_dec[i];
        for (std::size_t f = 0; f < sae.b_enc.size(); ++f) {
          if (mask[r][f]) want += sae.w_dec[i][f] * pre[r][f];
        }
        REQUIRE(rec.x_hat(r, i) == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("identity SAE with k=d reconstructs positive inputs exactly") {
  const SaeParams p = identity_sae(3, 3);
  const Matrix x = Matrix::from_rows({{1, 2, 3}, {0.5f, 0.25f, 4}});
  CHECK(reconstruct(p, x).x_hat == x);
}

TEST_CASE("validate catches broken invariants") {
  SaeParams p = identity_sae(4, 2);
  CHECK_NOTHROW(p.validate());
  SaeParams bad = p;
  bad.activation = BatchTopK{5};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.role = SaeRole::kResidual;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = p;
  bad.b_enc.pop_back();
  CHECK_THROWS_AS(bad.validate(), ShapeError);
  bad = p;
  bad.w_dec(0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(bad.validate(), NumericError);
  bad = p;
  bad.activation = JumpRelu{{0.1f, -1.0f, 0.0f, 0.0f}};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("role names round-trip") {
  for (SaeRole r : {SaeRole::kBase, SaeRole::kResidual, SaeRole::kExtended, SaeRole::kStitched,
                    SaeRole::kFinetuned}) {
    CHECK(role_from_string(to_string(r)) == r);
  }
  CHECK_THROWS(role_from_string("nope"));
}

TEST_CASE("calibrated thresholds equal the lower quantile of kept activations") {
  const std::size_t d = 6, f = 24, k = 3;
  SaeParams sae = init_params(d, f, SaeRole::kBase, 5, k);
  const Matrix data = gaussian_rows(6, 3000, d);
  const double alpha = 0.05;
  MatrixSource src(data);
  const SaeParams cal = calibrate_thresholds(sae, src, {alpha, 512, 0, {}});

  // Oracle: batch-topk over the same 512-row batches, sort, take the lower quantile.
  std::vector<std::vector<float>> kept(f);
  for (std::size_t first = 0; first < data.rows(); first += 512) {
    const Matrix batch = data.slice_rows(first, std::min<std::size_t>(512, data.rows() - first));
    const auto mask = oracle::topk_mask(oracle::to_mat(encode(sae, batch)), k);
    const Matrix pre = encode(sae, batch);
    for (std::size_t r = 0; r < batch.rows(); ++r) {
      for (std::size_t c = 0; c < f; ++c) {
        if (mask[r][c]) kept[c].push_back(pre(r, c));
      }
    }
  }
  const auto& th = std::get<JumpRelu>(cal.activation).thresholds;
  for (std::size_t c = 0; c < f; ++c) {
    if (kept[c].empty()) {
      CHECK(std::isinf(th[c]));
      continue;
    }
    std::sort(kept[c].begin(), kept[c].end());
    const auto idx = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(kept[c].size() - 1)));
    CHECK(th[c] == static_cast<float>(static_cast<double>(kept[c][idx]) * (1.0 - 1e-6)));
  }
}

TEST_CASE("calibration keeps the inherited prefix and the activation count near k") {
  const std::size_t d = 8, f = 32, k = 4;
  SaeParams sae = init_params(d, f, SaeRole::kBase, 9, k);
  const Matrix data = gaussian_rows(10, 4000, d);
  MatrixSource src(data);
  std::vector<float> inherited(f, 0.25f);
  const SaeParams cal = calibrate_thresholds(sae, src, {0.0, 1000, 5, inherited});
  const auto& th = std::get<JumpRelu>(cal.activation).thresholds;
  for (std::size_t c = 0; c < 5; ++c) CHECK(th[c] == 0.25f);

  MatrixSource again(data);
  const SaeParams full = calibrate_thresholds(sae, again, {0.01, 1000, 0, {}});
  const auto lat = reconstruct(full, data).latents;
  const double l0 = static_cast<double>(lat.nonzero_count()) / static_cast<double>(data.rows());
  CHECK(l0 == doctest::Approx(static_cast<double>(k)).epsilon(0.2));
}

TEST_CASE("calibration rejects jumpReLU input, bad alpha and empty streams") {
  SaeParams sae = init_params(4, 8, SaeRole::kBase, 1, 2);
  MatrixSource empty(Matrix(0, 4));
  CHECK_THROWS_AS(calibrate_thresholds(sae, empty), DataError);
  MatrixSource src(gaussian_rows(1, 10, 4));
  CHECK_THROWS_AS(calibrate_thresholds(sae, src, {1.5, 16, 0, {}}), ConfigError);
  SaeParams jr = sae;
  jr.activation = JumpRelu{std::vector<float>(8, 0.0f)};
  CHECK_THROWS_AS(calibrate_thresholds(jr, src), ConfigError);
}

TEST_CASE("unit decoder columns have unit norm") {
  const SaeParams sae = init_params(16, 20, SaeRole::kBase, 3, 4);
  for (std::size_t f = 0; f < 20; ++f) {
    double n = 0;
    for (float v : unit_decoder_column(sae, f)) n += double(v) * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
  }
}
