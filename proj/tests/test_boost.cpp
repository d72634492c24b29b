#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "saeboost/boost.hpp"
#include "saeboost/metrics.hpp"
#include "saeboost/stack.hpp"
#include "saeboost/synth.hpp"

using namespace saeboost;

namespace {

Matrix gaussian_rows(std::uint64_t seed, std::size_t n, std::size_t d) {
  Rng rng(seed);
  Matrix m(n, d);
  for (auto& v : m.values()) v = static_cast<float>(rng.normal());
  return m;
}

SaeParams residual_sae(std::size_t d, std::size_t f, std::size_t k, std::uint64_t seed) {
  return init_params(d, f, SaeRole::kResidual, seed, k);
}

double row_norm_ratio(const Matrix& num, const Matrix& den) {
  double a = 0, b = 0;
  for (float v : num.values()) a += double(v) * v;
  for (float v : den.values()) b += double(v) * v;
  return std::sqrt(a / b);
}

}  // namespace

TEST_CASE("stack reconstruction is the base plus every residual in order") {
  const Matrix x = gaussian_rows(1, 20, 6);
  const SaeParams base = init_params(6, 12, SaeRole::kBase, 2, 3, &x);
  BoostStack stack(base);
  stack.add_residual("a", residual_sae(6, 4, 1, 3));
  stack.add_residual("b", residual_sae(6, 5, 2, 4));
  const StackReconstruction rec = stitched_reconstruct(stack, x);

  Matrix want = reconstruct(base, x).x_hat;
  for (const auto& r : stack.residuals()) accumulate(want, reconstruct(r.sae, x).x_hat);
  CHECK(bitwise_equal(rec.x_hat, want));
  REQUIRE(rec.latents.size() == 3);

  const auto per = component_l0(rec.latents);
  double total = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(per[c] == doctest::Approx(double(rec.latents[c].nonzero_count()) / 20.0));
    total += per[c];
  }
  CHECK(stack_l0(rec.latents) == doctest::Approx(total));
}

TEST_CASE("stack matches the double-precision oracle") {
  const Matrix x = gaussian_rows(5, 16, 7);
  const SaeParams base = init_params(7, 14, SaeRole::kBase, 6, 3, &x);
  const SaeParams res = residual_sae(7, 6, 2, 7);
  BoostStack stack(base);
  stack.add_residual("a", res);
  const Matrix got = stitched_reconstruct(stack, x).x_hat;
  const auto ox = oracle::to_mat(x);
  auto forward = [&](const SaeParams& p) {
    const auto s = oracle::from_params(p);
    const auto pre = oracle::pre_activations(s, ox);
    const auto mask = oracle::topk_mask(pre, std::get<BatchTopK>(p.activation).k);
    oracle::Mat out(x.rows(), std::vector<double>(x.cols(), 0.0));
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t i = 0; i < x.cols(); ++i) {
        double v = s.b_dec.empty() ? 0.0 : s.b_dec[i];
        for (std::size_t f = 0; f < s.b_enc.size(); ++f) {
          if (mask[r][f]) v += s.w_dec[i][f] * pre[r][f];
        }
        out[r][i] = v;
      }
    }
    return out;
  };
  const auto b = forward(base), e = forward(res);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t i = 0; i < x.cols(); ++i) CHECK(got(r, i) == doctest::Approx(b[r][i] + e[r][i]).epsilon(1e-5));
  }
}

TEST_CASE("add_residual enforces role, width and unique ids") {
  const SaeParams base = init_params(6, 12, SaeRole::kBase, 2, 3);
  BoostStack stack(base);
  stack.add_residual("a", residual_sae(6, 4, 1, 3));
  CHECK_THROWS_AS(stack.add_residual("a", residual_sae(6, 4, 1, 4)), ConfigError);
  CHECK_THROWS_AS(stack.add_residual("w", residual_sae(5, 4, 1, 4)), ShapeError);
  SaeParams with_bias = init_params(6, 4, SaeRole::kBase, 5, 1);
  CHECK_THROWS_AS(stack.add_residual("b", with_bias), ConfigError);
  CHECK(stack.component_count() == 2);
}

TEST_CASE("training-time residual forward equals the inference stack bitwise") {
  const Matrix x = gaussian_rows(9, 1000, 8);
  const SaeParams base = init_params(8, 16, SaeRole::kBase, 10, 3, &x);
  const SaeParams res = residual_sae(8, 6, 2, 11);
  BoostStack frozen(base);
  const ResidualForward fwd = residual_forward(frozen, res, x);
  BoostStack full(base);
  full.add_residual("dom", res);
  const Matrix inference = stitched_reconstruct(full, x).x_hat;
  CHECK(bitwise_equal(fwd.combined, inference));
  CHECK(bitwise_equal(fwd.frozen_x_hat, reconstruct(base, x).x_hat));
}

TEST_CASE("default residual size and k") {
  CHECK(default_residual_size(512) == 64);
  CHECK(default_residual_size(4) == 1);
  const Matrix x = gaussian_rows(12, 512, 8);
  const SaeParams base = init_params(8, 64, SaeRole::kBase, 13, 4, &x);
  MatrixSource src(x, true);
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.total_samples = 128;
  const TrainResult r = train_boost(base, src, cfg);
  CHECK(r.params.dict_size() == 8);
  CHECK(std::get<BatchTopK>(r.params.activation).k == kDefaultResidualK);
  BoostOptions tiny;
  tiny.features = 3;
  MatrixSource again(x, true);
  CHECK_THROWS_AS(train_boost(base, again, cfg, tiny), ConfigError);
}

TEST_CASE("a residual on a perfect base learns to output almost nothing") {
  // Identity base with k = d reconstructs non-negative inputs exactly.
  const std::size_t d = 6;
  SaeParams base;
  base.w_enc = Matrix::identity(d);
  base.b_enc.assign(d, 0.0f);
  base.w_dec = Matrix::identity(d);
  base.b_dec = std::vector<float>(d, 0.0f);
  base.activation = BatchTopK{d};
  Matrix x = gaussian_rows(20, 2048, d);
  for (auto& v : x.values()) v = std::abs(v) + 0.1f;
  REQUIRE(bitwise_equal(reconstruct(base, x).x_hat, x));

  MatrixSource src(x, true);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 128;
  cfg.total_samples = 40000;
  cfg.k = 2;
  BoostOptions opt;
  opt.features = 8;
  opt.init_seed = 21;
  const TrainResult r = train_boost(base, src, cfg, opt);
  const Matrix out = reconstruct(r.params, x).x_hat;
  const double ratio = row_norm_ratio(out, x);
  MESSAGE("residual output / input norm " << ratio);
  CHECK(ratio < 1e-2);
}

TEST_CASE("boosting a domain improves domain EV") {
  WorldSpec spec;
  spec.d = 16;
  spec.general_features = 24;
  spec.domains = {{"dom-a", 8}};
  spec.general_active = 3;
  spec.domain_active = 2;
  spec.noise_std = 0.02;
  spec.max_cross_cosine = 0.8;
  const PlantedWorld world = build_world(spec, 30);
  const Matrix warm = sample_shard(world, DomainMix::single("general"), 1000, 31).data;
  SyntheticSource general(world, DomainMix::single("general"), 32);
  TrainConfig cfg;
  cfg.learning_rate = 2e-3;
  cfg.batch_size = 256;
  cfg.total_samples = 200000;
  const TrainResult base = train(init_params(16, 32, SaeRole::kBase, 33, 3, &warm), general, cfg,
                                 TrainTarget::direct());
  SyntheticSource domain(world, DomainMix::single("dom-a"), 34);
  TrainConfig rcfg = cfg;
  rcfg.k = 2;
  BoostOptions opt;
  opt.features = 16;
  opt.init_seed = 35;
  const TrainResult res = train_boost(base.params, domain, rcfg, opt);

  const Matrix dom_eval = sample_shard(world, DomainMix::single("dom-a"), 4000, 36).data;
  const Matrix gen_eval = sample_shard(world, DomainMix::single("general"), 4000, 37).data;
  BoostStack alone(base.params);
  BoostStack boosted(base.params);
  boosted.add_residual("dom-a", res.params);
  const double dom_before = evaluate(alone, dom_eval, 1024).ev;
  const double dom_after = evaluate(boosted, dom_eval, 1024).ev;
  const double gen_before = evaluate(alone, gen_eval, 1024).ev;
  const double gen_after = evaluate(boosted, gen_eval, 1024).ev;
  MESSAGE("domain EV " << dom_before << " -> " << dom_after << ", general EV " << gen_before << " -> "
                       << gen_after);
  CHECK(dom_after > dom_before);
}
