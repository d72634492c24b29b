#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <sstream>

#include "oracles.hpp"
#include "saeboost/boost.hpp"
#include "saeboost/metrics.hpp"
#include "saeboost/selfcheck.hpp"
#include "saeboost/synth.hpp"
#include "saeboost/trainer.hpp"

using namespace saeboost;

namespace {

std::vector<double> flatten(const Gradients<double>& g) {
  std::vector<double> out(g.w_enc.values().begin(), g.w_enc.values().end());
  out.insert(out.end(), g.b_enc.begin(), g.b_enc.end());
  out.insert(out.end(), g.w_dec.values().begin(), g.w_dec.values().end());
  if (g.b_dec) out.insert(out.end(), g.b_dec->begin(), g.b_dec->end());
  return out;
}

WorldSpec small_world() {
  WorldSpec s;
  s.d = 16;
  s.general_features = 32;
  s.domains = {{"dom-a", 8}};
  s.general_active = 3;
  s.domain_active = 2;
  s.noise_std = 0.02;
  s.max_cross_cosine = 0.8;
  return s;
}

Matrix gaussian_rows(std::uint64_t seed, std::size_t n, std::size_t d) {
  Rng rng(seed);
  Matrix m(n, d);
  for (auto& v : m.values()) v = static_cast<float>(rng.normal());
  return m;
}

}  // namespace

TEST_CASE("analytic gradients match central differences of the oracle loss") {
  std::size_t partials = 0;
  for (std::uint64_t s = 0; s < 40; ++s) {
    const oracle::Tiny t = oracle::random_tiny(1000 + s);
    const auto lg = compute_loss_and_grads<double>(t.sae, t.x, t.target, t.l1);
    const auto mask = oracle::support(t);
    CHECK(lg.loss == doctest::Approx(oracle::loss(oracle::from_params(t.sae), oracle::to_mat(t.x),
                                                  oracle::to_mat(t.target), t.l1, mask))
                         .epsilon(1e-12));
    const auto fd = oracle::finite_differences(t, flatten(lg.grads), 1e-3, 1e-4, 1e-6);
    INFO("instance " << s << " worst rel " << fd.worst_rel << " worst abs " << fd.worst_abs);
    CHECK(fd.failures == 0);
    partials += fd.partials;
  }
  CHECK(partials > 0);
}

TEST_CASE("gradients vanish off the support") {
  oracle::Tiny t = oracle::random_tiny(77, false);
  t.sae.activation = JumpRelu{std::vector<float>(t.sae.dict_size(), std::numeric_limits<float>::infinity())};
  const auto lg = compute_loss_and_grads<double>(t.sae, t.x, t.target, 0.0);
  for (double v : lg.grads.w_enc.values()) CHECK(v == 0.0);
  for (double v : lg.grads.w_dec.values()) CHECK(v == 0.0);
  for (double v : lg.grads.b_enc) CHECK(v == 0.0);
}

TEST_CASE("built-in gradient self-check passes") {
  const CheckOutcome c = check_gradients(10, 5);
  INFO(c.detail);
  CHECK(c.passed);
  CHECK(c.instances == 10);
}

TEST_CASE("init_params draws unit decoder columns and tied encoder") {
  const Matrix warm = gaussian_rows(2, 100, 6);
  const SaeParams p = init_params(6, 10, SaeRole::kBase, 4, 3, &warm);
  for (std::size_t f = 0; f < 10; ++f) {
    double n = 0;
    for (std::size_t i = 0; i < 6; ++i) {
      n += double(p.w_dec(i, f)) * p.w_dec(i, f);
      CHECK(p.w_enc(f, i) == p.w_dec(i, f));
    }
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(p.b_enc[f] == 0.0f);
  }
  REQUIRE(p.b_dec);
  double mean0 = 0;
  for (std::size_t r = 0; r < 100; ++r) mean0 += warm(r, 0);
  CHECK((*p.b_dec)[0] == doctest::Approx(mean0 / 100).epsilon(1e-5));
  const SaeParams r = init_params(6, 10, SaeRole::kResidual, 4, 3, &warm);
  CHECK_FALSE(r.b_dec.has_value());
  CHECK(bitwise_equal(init_params(6, 10, SaeRole::kBase, 4, 3), init_params(6, 10, SaeRole::kBase, 4, 3)));
}

TEST_CASE("decoder normalization preserves the reconstruction on the active support") {
  SaeParams p = init_params(8, 16, SaeRole::kBase, 3, 4);
  Rng rng(5);
  for (std::size_t f = 0; f < 16; ++f) {
    const float s = static_cast<float>(0.2 + 3.0 * rng.uniform());
    for (std::size_t i = 0; i < 8; ++i) p.w_dec(i, f) *= s;
  }
  const Matrix x = gaussian_rows(6, 32, 8);
  const auto before = reconstruct(p, x);
  std::vector<std::vector<bool>> mask(x.rows(), std::vector<bool>(16));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t f = 0; f < 16; ++f) mask[r][f] = before.latents.post(r, f) != 0.0f;
  }
  normalize_decoder(p);
  // Oracle forward pass of the normalized weights on the original support.
  const auto sae = oracle::from_params(p);
  const auto pre = oracle::pre_activations(sae, oracle::to_mat(x));
  double worst = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double diff2 = 0.0, norm2 = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      double xh = sae.b_dec[i];
      for (std::size_t f = 0; f < 16; ++f) {
        if (mask[r][f]) xh += sae.w_dec[i][f] * pre[r][f];
      }
      diff2 += (xh - before.x_hat(r, i)) * (xh - before.x_hat(r, i));
      norm2 += double(before.x_hat(r, i)) * before.x_hat(r, i);
    }
    worst = std::max(worst, std::sqrt(diff2 / std::max(norm2, 1e-30)));
  }
  CHECK(worst <= 1e-5);
  for (std::size_t f = 0; f < 16; ++f) {
    double n = 0;
    for (std::size_t i = 0; i < 8; ++i) n += double(p.w_dec(i, f)) * p.w_dec(i, f);
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("a dead feature is resampled from the highest-error candidate") {
  SaeParams p = init_params(4, 6, SaeRole::kBase, 1, 2);
  for (float& v : p.w_enc.row(2)) v = 0.0f;
  std::vector<std::uint64_t> activity = {5, 5, 0, 5, 5, 5};
  const Matrix cand = Matrix::from_rows({{1, 0, 0, 0}, {0, 3, 4, 0}});
  const std::vector<double> err = {0.1, 9.0};
  const ResampleResult rs = resample_dead_features(p, activity, cand, err);
  REQUIRE(rs.resampled == std::vector<std::size_t>{2});
  CHECK(rs.params.w_dec(1, 2) == doctest::Approx(0.6));
  CHECK(rs.params.w_dec(2, 2) == doctest::Approx(0.8));
  CHECK(rs.params.b_enc[2] == 0.0f);
  double enc = 0;
  for (float v : rs.params.w_enc.row(2)) enc += std::abs(v);
  CHECK(enc > 0);
  for (std::size_t f : {0, 1, 3, 4, 5}) {
    for (std::size_t i = 0; i < 4; ++i) CHECK(rs.params.w_dec(i, f) == p.w_dec(i, f));
  }
}

TEST_CASE("training on a planted stream reaches general EV above 0.8") {
  const PlantedWorld world = build_world(small_world(), 21);
  SyntheticSource stream(world, DomainMix::single("general"), 22);
  const ActivationShard held = sample_shard(world, DomainMix::single("general"), 4000, 23);
  const Matrix warm = sample_shard(world, DomainMix::single("general"), 1000, 24).data;
  const SaeParams init = init_params(16, 64, SaeRole::kBase, 25, 4, &warm);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 256;
  cfg.total_samples = 300000;
  cfg.eval_interval = 50000;
  const EvalSets eval{&held.data, nullptr};
  const TrainResult r = train(init, stream, cfg, TrainTarget::direct(), eval);
  CHECK(r.samples_seen == cfg.total_samples);
  const double ev = evaluate(BoostStack(r.params), held.data, 1024).ev;
  MESSAGE("final general EV " << ev);
  CHECK(ev > 0.8);

  REQUIRE(r.log.records.size() == 6);
  // Loss averages over consecutive logging windows go down.
  CHECK(r.log.records.back().loss < r.log.records.front().loss);
  CHECK(r.log.records.back().general_ev > r.log.records.front().general_ev - 1e-9);
  std::ostringstream csv;
  r.log.write_csv(csv);
  CHECK(csv.str().rfind("samples,general_ev,domain_ev,mean_l0,loss\n", 0) == 0);
}

TEST_CASE("training is bitwise reproducible") {
  const Matrix data = gaussian_rows(31, 2048, 8);
  const SaeParams init = init_params(8, 16, SaeRole::kBase, 32, 3, &data);
  TrainConfig cfg;
  cfg.batch_size = 128;
  cfg.total_samples = 8192;
  MatrixSource a(data, true), b(data, true);
  const TrainResult ra = train(init, a, cfg, TrainTarget::direct());
  const TrainResult rb = train(init, b, cfg, TrainTarget::direct());
  CHECK(bitwise_equal(ra.params, rb.params));
}

TEST_CASE("residual training never mutates the frozen base") {
  const Matrix data = gaussian_rows(41, 1024, 8);
  const SaeParams base = init_params(8, 16, SaeRole::kBase, 42, 3, &data);
  const SaeParams base_copy = base;
  auto stack = std::make_shared<const BoostStack>(base);
  MatrixSource src(data, true);
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.total_samples = 4096;
  cfg.k = 2;
  BoostOptions opt;
  opt.features = 8;
  const TrainResult r = train_boost(stack, src, cfg, opt);
  CHECK(bitwise_equal(stack->base(), base_copy));
  CHECK(r.params.role == SaeRole::kResidual);
  CHECK_FALSE(r.params.b_dec.has_value());
}

TEST_CASE("residual target is the frozen stack's error") {
  const Matrix x = gaussian_rows(51, 10, 5);
  const SaeParams base = init_params(5, 8, SaeRole::kBase, 52, 2, &x);
  auto stack = std::make_shared<const BoostStack>(base);
  const Matrix t = make_target(TrainTarget::residual(stack), x);
  const Matrix xh = reconstruct(base, x).x_hat;
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(t.values()[i] == x.values()[i] - xh.values()[i]);
  CHECK(make_target(TrainTarget::direct(), x) == x);
}

TEST_CASE("non-finite inputs abort training with the last good parameters") {
  Matrix data = gaussian_rows(61, 256, 4);
  data(200, 1) = std::numeric_limits<float>::infinity();
  const SaeParams init = init_params(4, 8, SaeRole::kBase, 62, 2);
  MatrixSource src(data);
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.total_samples = 256;
  try {
    train(init, src, cfg, TrainTarget::direct());
    FAIL("expected TrainingAborted");
  } catch (const TrainingAborted& e) {
    CHECK(e.samples_seen() == 192);
    CHECK(all_finite(e.last_good().w_enc));
  }
}

TEST_CASE("frozen prefix features do not move") {
  const Matrix data = gaussian_rows(71, 1024, 6);
  const SaeParams init = init_params(6, 12, SaeRole::kBase, 72, 3, &data);
  MatrixSource src(data, true);
  TrainConfig cfg;
  cfg.batch_size = 128;
  cfg.total_samples = 2048;
  const TrainResult r = train(init, src, cfg, TrainTarget::direct(), {}, TrainableRange{5, false});
  for (std::size_t f = 0; f < 5; ++f) {
    CHECK(r.params.b_enc[f] == init.b_enc[f]);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(r.params.w_enc(f, i) == init.w_enc(f, i));
      CHECK(r.params.w_dec(i, f) == init.w_dec(i, f));
    }
  }
  CHECK(*r.params.b_dec == *init.b_dec);
  bool moved = false;
  for (std::size_t i = 0; i < 6; ++i) moved = moved || r.params.w_dec(i, 7) != init.w_dec(i, 7);
  CHECK(moved);
}

TEST_CASE("exhausted data ends training with a warning") {
  const Matrix data = gaussian_rows(81, 100, 4);
  MatrixSource src(data);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.total_samples = 1000;
  const TrainResult r = train(init_params(4, 8, SaeRole::kBase, 1, 2), src, cfg, TrainTarget::direct());
  CHECK(r.samples_seen == 100);
  CHECK(r.log.warnings.size() == 1);
}

TEST_CASE("invalid training configs are rejected") {
  TrainConfig cfg;
  cfg.learning_rate = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.resample_interval = 100;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
