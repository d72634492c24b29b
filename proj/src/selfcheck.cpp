#include "saeboost/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>

#include "saeboost/shard_io.hpp"
#include "saeboost/trainer.hpp"

namespace saeboost {

namespace {

double gate_slack(const SaeParams64& sae, const Matrix64& pre) {
  std::vector<double> v(pre.values().begin(), pre.values().end());
  if (const auto* topk = std::get_if<BatchTopK>(&sae.activation)) {
    std::sort(v.begin(), v.end(), std::greater<>());
    const std::size_t budget = std::min(topk->k * pre.rows(), v.size());
    const auto positives = static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](double a) { return a > 0; }));
    if (positives <= budget) {
      double slack = std::numeric_limits<double>::infinity();
      for (double a : v) slack = std::min(slack, std::abs(a));
      return slack;
    }
    return std::min(v[budget - 1], v[budget - 1] - v[budget]);
  }
  const auto& th = std::get<JumpRelu>(sae.activation).thresholds;
  double slack = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < pre.rows(); ++r) {
    for (std::size_t f = 0; f < pre.cols(); ++f) slack = std::min(slack, std::abs(pre(r, f) - th[f]));
  }
  return slack;
}

Matrix64 random_matrix64(Rng& rng, std::size_t r, std::size_t c, double scale) {
  Matrix64 m(r, c);
  for (auto& v : m.values()) v = rng.normal(0.0, scale);
  return m;
}

}  // namespace

TinyInstance random_tiny_instance(std::uint64_t seed, double margin) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(derive_seed(seed, attempt));
    const std::size_t d = 2 + rng.below(7);
    const std::size_t features = 2 + rng.below(15);
    const std::size_t batch = 1 + rng.below(4);
    TinyInstance inst;
    const bool residual = rng.below(2) == 0;
    inst.sae.role = residual ? SaeRole::kResidual : SaeRole::kBase;
    inst.sae.w_enc = random_matrix64(rng, features, d, 0.7);
    inst.sae.b_enc.resize(features);
    for (auto& v : inst.sae.b_enc) v = rng.normal(0.0, 0.3);
    inst.sae.w_dec = random_matrix64(rng, d, features, 0.7);
    if (!residual) {
      inst.sae.b_dec = std::vector<double>(d);
      for (auto& v : *inst.sae.b_dec) v = rng.normal(0.0, 0.3);
    }
    if (rng.below(2) == 0) {
      inst.sae.activation = BatchTopK{1 + rng.below(features)};
    } else {
      std::vector<float> th(features);
      for (auto& v : th) v = static_cast<float>(rng.uniform() * 0.5);
      inst.sae.activation = JumpRelu{std::move(th)};
    }
    inst.x = random_matrix64(rng, batch, d, 1.0);
    inst.target = random_matrix64(rng, batch, d, 1.0);
    inst.l1 = rng.uniform() * 0.1;

    double scale = 1.0;
    for (double v : inst.x.values()) scale = std::max(scale, std::abs(v));
    if (gate_slack(inst.sae, encode(inst.sae, inst.x)) > margin * scale) return inst;
  }
}

CheckOutcome check_gradients(std::size_t instances, std::uint64_t seed, double eps, double rel_tol,
                             double abs_tol) {
  CheckOutcome out;
  out.passed = true;
  std::ostringstream first_failure;
  for (std::size_t i = 0; i < instances; ++i) {
    TinyInstance inst = random_tiny_instance(derive_seed(seed, i), 10.0 * eps);
    const auto analytic = compute_loss_and_grads<double>(inst.sae, inst.x, inst.target, inst.l1);
    SaeParams64 probe = inst.sae;
    auto loss_at = [&]() { return compute_loss_and_grads<double>(probe, inst.x, inst.target, inst.l1).loss; };
    auto compare = [&](const char* name, std::size_t index, double& slot, double a) {
      const double saved = slot;
      slot = saved + eps;
      const double up = loss_at();
      slot = saved - eps;
      const double down = loss_at();
      slot = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double diff = std::abs(a - numeric);
      const double mag = std::max(std::abs(a), std::abs(numeric));
      out.worst_abs = std::max(out.worst_abs, diff);
      if (mag > 0) out.worst_rel = std::max(out.worst_rel, diff / mag);
      ++out.comparisons;
      if (diff > std::max(abs_tol, rel_tol * mag)) {
        if (out.passed) {
          first_failure << "instance " << i << ' ' << name << '[' << index << "]: analytic " << a << " numeric "
                        << numeric;
        }
        out.passed = false;
      }
    };
    const auto& g = analytic.grads;
    for (std::size_t j = 0; j < probe.w_enc.size(); ++j) compare("w_enc", j, probe.w_enc.values()[j], g.w_enc.values()[j]);
    for (std::size_t j = 0; j < probe.b_enc.size(); ++j) compare("b_enc", j, probe.b_enc[j], g.b_enc[j]);
    for (std::size_t j = 0; j < probe.w_dec.size(); ++j) compare("w_dec", j, probe.w_dec.values()[j], g.w_dec.values()[j]);
    if (probe.b_dec) {
      for (std::size_t j = 0; j < probe.b_dec->size(); ++j) compare("b_dec", j, (*probe.b_dec)[j], (*g.b_dec)[j]);
    }
    ++out.instances;
  }
  std::ostringstream detail;
  detail << out.instances << " instances, " << out.comparisons << " partials, worst abs " << out.worst_abs
         << ", worst rel " << out.worst_rel;
  if (!out.passed) detail << "; " << first_failure.str();
  out.detail = detail.str();
  return out;
}

SaeParams random_params(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = 1 + rng.below(12);
  const std::size_t features = 1 + rng.below(24);
  SaeParams p;
  p.role = static_cast<SaeRole>(rng.below(5));
  p.w_enc = Matrix(features, d);
  for (auto& v : p.w_enc.values()) v = static_cast<float>(rng.normal());
  p.b_enc.resize(features);
  for (auto& v : p.b_enc) v = static_cast<float>(rng.normal());
  p.w_dec = Matrix(d, features);
  for (auto& v : p.w_dec.values()) v = static_cast<float>(rng.normal());
  if (p.role != SaeRole::kResidual) {
    p.b_dec = std::vector<float>(d);
    for (auto& v : *p.b_dec) v = static_cast<float>(rng.normal());
  }
  if (rng.below(2) == 0) {
    p.activation = BatchTopK{1 + rng.below(features)};
  } else {
    std::vector<float> th(features);
    for (auto& v : th) {
      v = rng.below(4) == 0 ? std::numeric_limits<float>::infinity() : static_cast<float>(rng.uniform());
    }
    p.activation = JumpRelu{std::move(th)};
  }
  // Edge values the byte comparison must preserve.
  p.w_enc.values()[0] = -0.0f;
  if (p.w_dec.size() > 1) p.w_dec.values()[1] = std::numeric_limits<float>::denorm_min();
  return p;
}

CheckOutcome check_round_trips(std::size_t instances, std::uint64_t seed, const std::string& scratch_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(scratch_dir);
  CheckOutcome out;
  out.passed = true;
  std::ostringstream failure;
  const std::string shard_path = (fs::path(scratch_dir) / "roundtrip.saea").string();
  const std::string ckpt_path = (fs::path(scratch_dir) / "roundtrip.saec").string();
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng(derive_seed(seed, i));
    const std::size_t n = 1 + rng.below(64);
    const std::size_t d = 1 + rng.below(32);
    Matrix data(n, d);
    for (auto& v : data.values()) v = static_cast<float>(rng.normal(0.0, 3.0));
    data.values()[0] = -0.0f;
    ShardMetadata meta{"dom-" + std::to_string(rng.below(100)), "synthetic", std::to_string(rng.below(40)),
                       "instance " + std::to_string(i)};
    write_shard(shard_path, data, meta);
    const ActivationShard back = read_shard(shard_path);
    const bool shard_ok = bitwise_equal(back.data, data) && back.meta == meta;

    const SaeParams params = random_params(derive_seed(seed, 1000000 + i));
    nlohmann::json provenance = {{"instance", i}, {"note", "round trip"}};
    save_checkpoint(ckpt_path, params, provenance);
    const Checkpoint loaded = load_checkpoint(ckpt_path);
    const bool ckpt_ok = bitwise_equal(loaded.params, params) && loaded.provenance == provenance &&
                         loaded.params.b_dec.has_value() == params.b_dec.has_value() &&
                         serialize_checkpoint(loaded.params, loaded.provenance) ==
                             serialize_checkpoint(params, provenance);
    out.comparisons += 2;
    ++out.instances;
    if (!(shard_ok && ckpt_ok) && out.passed) {
      failure << "instance " << i << (shard_ok ? "" : " shard") << (ckpt_ok ? "" : " checkpoint");
      out.passed = false;
    }
  }
  fs::remove(shard_path);
  fs::remove(shard_path + ".meta.json");
  fs::remove(ckpt_path);
  out.detail = std::to_string(out.instances) + " shard and checkpoint instances";
  if (!out.passed) out.detail += "; first mismatch: " + failure.str();
  return out;
}

}  // namespace saeboost
