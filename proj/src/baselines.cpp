#include "saeboost/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace saeboost {

const char* to_string(BaselineMethod method) {
  switch (method) {
    case BaselineMethod::kExtendedMostActive: return "extended-most-active";
    case BaselineMethod::kExtendedRandom: return "extended-random";
    case BaselineMethod::kStitching: return "stitching";
    case BaselineMethod::kFullFinetune: return "full-finetune";
  }
  return "?";
}

BaselineMethod baseline_from_string(const std::string& name) {
  for (auto m : {BaselineMethod::kExtendedMostActive, BaselineMethod::kExtendedRandom,
                 BaselineMethod::kStitching, BaselineMethod::kFullFinetune}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("unknown baseline method '" + name + "'");
}

void BaselineSpec::validate() const {
  config.validate();
  if (method != BaselineMethod::kFullFinetune && added_features < 1) {
    throw ConfigError(std::string(to_string(method)) + " needs at least one added feature");
  }
}

namespace {

std::size_t topk_of(const SaeParams& sae, const TrainConfig& config, const char* what) {
  if (config.k != 0) return config.k;
  if (const auto* t = std::get_if<BatchTopK>(&sae.activation)) return t->k;
  throw ConfigError(std::string(what) + " of a jumpReLU model needs an explicit k");
}

void perturb(std::span<float> v, double rel, Rng& rng) {
  double n2 = 0.0;
  for (float x : v) n2 += static_cast<double>(x) * x;
  const double scale = rel * std::sqrt(n2 / static_cast<double>(v.size()));
  for (float& x : v) x = static_cast<float>(x + scale * rng.normal());
}

}  // namespace

std::vector<double> feature_activity(const SaeParams& sae, BatchSource& probe, std::size_t samples,
                                     ActivityRanking ranking, std::size_t batch_size) {
  const std::size_t features = sae.dict_size();
  std::vector<double> sum(features, 0.0);
  std::size_t seen = 0;
  while (seen < samples) {
    Matrix x = probe.next(std::min(batch_size, samples - seen));
    if (x.rows() == 0) break;
    const LatentBatch lat = apply_activation<float>(sae.activation, encode(sae, x));
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto row = lat.post.row(r);
      for (std::size_t f = 0; f < features; ++f) {
        if (row[f] == 0.0f) continue;
        sum[f] += ranking == ActivityRanking::kFrequency ? 1.0 : static_cast<double>(row[f]);
      }
    }
    seen += x.rows();
  }
  if (seen == 0) throw DataError("activity probe is empty");
  for (double& s : sum) s /= static_cast<double>(seen);
  return sum;
}

SaeParams init_extended(const SaeParams& base, BatchSource& probe, ExtendInit init, std::size_t n,
                        const ExtendOptions& options) {
  base.validate();
  const std::size_t features = base.dict_size();
  const std::size_t d = base.input_dim();
  if (n < 1) throw ConfigError("extension needs n >= 1");
  if (init == ExtendInit::kMostActive && n >= features) {
    throw ConfigError("most-active init needs n < F (" + std::to_string(n) + " >= " +
                      std::to_string(features) + ")");
  }

  SaeParams ext;
  ext.role = SaeRole::kExtended;
  ext.w_enc = Matrix(features + n, d);
  ext.w_dec = Matrix(d, features + n);
  ext.b_enc.assign(features + n, 0.0f);
  ext.b_dec = base.b_dec;
  ext.activation = base.activation;
  if (auto* jr = std::get_if<JumpRelu>(&ext.activation)) {
    jr->thresholds.resize(features + n, 0.0f);
  }
  for (std::size_t f = 0; f < features; ++f) {
    std::copy(base.w_enc.row(f).begin(), base.w_enc.row(f).end(), ext.w_enc.row(f).begin());
    ext.b_enc[f] = base.b_enc[f];
    for (std::size_t i = 0; i < d; ++i) ext.w_dec(i, f) = base.w_dec(i, f);
  }

  Rng rng(derive_seed(options.seed, 0x455854ULL));
  if (init == ExtendInit::kMostActive) {
    const auto activity = feature_activity(base, probe, options.probe_samples, options.ranking);
    std::vector<std::size_t> order(features);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return activity[a] > activity[b]; });
    std::vector<float> col(d);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t donor = order[j];
      const std::size_t f = features + j;
      std::copy(base.w_enc.row(donor).begin(), base.w_enc.row(donor).end(), ext.w_enc.row(f).begin());
      perturb(ext.w_enc.row(f), options.donor_noise, rng);
      ext.b_enc[f] = base.b_enc[donor];
      for (std::size_t i = 0; i < d; ++i) col[i] = base.w_dec(i, donor);
      perturb(col, options.donor_noise, rng);
      for (std::size_t i = 0; i < d; ++i) ext.w_dec(i, f) = col[i];
    }
  } else {
    const SaeParams fresh = init_params(d, n, SaeRole::kResidual, rng.next_u64(), 1);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t f = features + j;
      std::copy(fresh.w_enc.row(j).begin(), fresh.w_enc.row(j).end(), ext.w_enc.row(f).begin());
      for (std::size_t i = 0; i < d; ++i) ext.w_dec(i, f) = fresh.w_dec(i, j);
    }
  }
  normalize_decoder(ext, features);
  ext.validate();
  return ext;
}

TrainResult train_extended(const SaeParams& base, BatchSource& domain, ExtendInit init, std::size_t n,
                           TrainConfig config, const ExtendOptions& options, const EvalSets& eval) {
  config.k = topk_of(base, config, "extension");
  SaeParams start = base;
  start.activation = BatchTopK{config.k};
  SaeParams ext = init_extended(start, domain, init, n, options);
  domain.rewind();
  return train(ext, domain, config, TrainTarget::direct(), eval, {base.dict_size(), false});
}

TrainResult train_full_finetune(const SaeParams& base, BatchSource& domain, TrainConfig config,
                                const EvalSets& eval) {
  config.k = topk_of(base, config, "fine-tuning");
  SaeParams start = base;
  start.role = SaeRole::kFinetuned;
  start.activation = BatchTopK{config.k};
  return train(start, domain, config, TrainTarget::direct(), eval);
}

StitchSelection select_changed_features(const SaeParams& original, const SaeParams& finetuned,
                                        std::size_t n) {
  const std::size_t features = original.dict_size();
  if (finetuned.dict_size() != features || finetuned.input_dim() != original.input_dim()) {
    throw ShapeError("stitching needs two models of the same shape");
  }
  if (n < 1 || n > features) throw ConfigError("stitching selects 1..F features");
  StitchSelection out;
  out.all_cosines.resize(features);
  const std::size_t d = original.input_dim();
  for (std::size_t f = 0; f < features; ++f) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    bool same = true;
    for (std::size_t i = 0; i < d; ++i) {
      const double a = original.w_dec(i, f);
      const double b = finetuned.w_dec(i, f);
      dot += a * b;
      na += a * a;
      nb += b * b;
      same = same && original.w_dec(i, f) == finetuned.w_dec(i, f);
    }
    if (na == 0.0 || nb == 0.0) throw NumericError("decoder column " + std::to_string(f) + " has zero norm");
    out.all_cosines[f] = same ? 1.0 : dot / std::sqrt(na * nb);
  }
  std::vector<std::size_t> order(features);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.all_cosines[a] < out.all_cosines[b]; });
  out.features.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  for (std::size_t f : out.features) out.cosines.push_back(out.all_cosines[f]);
  return out;
}

SaeParams stitch_features(const SaeParams& original, const SaeParams& finetuned,
                          const StitchSelection& selection) {
  const std::size_t features = original.dict_size();
  const std::size_t d = original.input_dim();
  const std::size_t n = selection.features.size();
  SaeParams out;
  out.role = SaeRole::kStitched;
  out.w_enc = Matrix(features + n, d);
  out.w_dec = Matrix(d, features + n);
  out.b_enc.assign(features + n, 0.0f);
  out.b_dec = original.b_dec;
  for (std::size_t f = 0; f < features; ++f) {
    std::copy(original.w_enc.row(f).begin(), original.w_enc.row(f).end(), out.w_enc.row(f).begin());
    out.b_enc[f] = original.b_enc[f];
    for (std::size_t i = 0; i < d; ++i) out.w_dec(i, f) = original.w_dec(i, f);
  }
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = selection.features[j];
    if (src >= finetuned.dict_size()) throw ShapeError("stitch selection out of range");
    const std::size_t f = features + j;
    std::copy(finetuned.w_enc.row(src).begin(), finetuned.w_enc.row(src).end(), out.w_enc.row(f).begin());
    out.b_enc[f] = finetuned.b_enc[src];
    for (std::size_t i = 0; i < d; ++i) out.w_dec(i, f) = finetuned.w_dec(i, src);
  }

  const auto* jo = std::get_if<JumpRelu>(&original.activation);
  const auto* jf = std::get_if<JumpRelu>(&finetuned.activation);
  if (jo != nullptr && jf != nullptr) {
    JumpRelu act{jo->thresholds};
    for (std::size_t src : selection.features) act.thresholds.push_back(jf->thresholds[src]);
    out.activation = std::move(act);
  } else if (const auto* t = std::get_if<BatchTopK>(&original.activation)) {
    out.activation = *t;
  } else if (const auto* tf = std::get_if<BatchTopK>(&finetuned.activation)) {
    out.activation = *tf;
  }
  out.validate();
  return out;
}

StitchResult stitch_from_finetuned(const SaeParams& original, const SaeParams& finetuned, std::size_t n) {
  StitchResult out;
  out.selection = select_changed_features(original, finetuned, n);
  out.params = stitch_features(original, finetuned, out.selection);
  out.finetune.params = finetuned;
  return out;
}

StitchResult train_stitching(const SaeParams& base, BatchSource& domain, std::size_t n, TrainConfig config,
                             const EvalSets& eval) {
  TrainResult ft = train_full_finetune(base, domain, config, eval);
  SaeParams original = base;
  if (!is_batch_topk(original.activation) || config.k != 0) {
    original.activation = BatchTopK{config.k != 0 ? config.k : std::get<BatchTopK>(ft.params.activation).k};
  }
  StitchResult out = stitch_from_finetuned(original, ft.params, n);
  out.finetune = std::move(ft);
  return out;
}

}  // namespace saeboost
