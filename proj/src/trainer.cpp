#include "saeboost/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "saeboost/metrics.hpp"

namespace saeboost {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(l1_coefficient >= 0.0)) throw ConfigError("L1 coefficient must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("Adam epsilon must be > 0");
  if (resample_interval > 0 && resample_window == 0) {
    throw ConfigError("resampling needs a nonzero inactivity window");
  }
  if (!(resample_encoder_scale > 0.0)) throw ConfigError("resample encoder scale must be > 0");
}

Matrix make_target(const TrainTarget& target, const Matrix& x) {
  if (target.mode == TrainTarget::Mode::kDirect) return x;
  if (!target.frozen) throw ConfigError("residual target without a frozen stack");
  const StackReconstruction rec = stitched_reconstruct(*target.frozen, x);
  Matrix e = x;
  auto dst = e.values();
  auto src = rec.x_hat.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= src[i];
  return e;
}

ResidualForward residual_forward(const BoostStack& frozen, const SaeParams& residual, const Matrix& x) {
  ResidualForward out;
  out.frozen_x_hat = stitched_reconstruct(frozen, x).x_hat;
  out.residual_e_hat = reconstruct(residual, x).x_hat;
  out.combined = out.frozen_x_hat;
  accumulate(out.combined, out.residual_e_hat);
  return out;
}

template <typename T>
LossAndGrads<T> compute_loss_and_grads(const BasicSaeParams<T>& sae, const BasicMatrix<T>& x,
                                       const BasicMatrix<T>& target, double l1_coefficient) {
  const std::size_t d = sae.input_dim();
  const std::size_t features = sae.dict_size();
  const std::size_t batch = x.rows();
  if (target.rows() != batch || target.cols() != d) {
    throw ShapeError("loss target is " + std::to_string(target.rows()) + "x" +
                     std::to_string(target.cols()) + ", expected " + std::to_string(batch) + "x" +
                     std::to_string(d));
  }
  if (batch == 0) throw DataError("empty training batch");

  LossAndGrads<T> out;
  out.forward = reconstruct(sae, x);
  const BasicMatrix<T>& x_hat = out.forward.x_hat;
  const BasicMatrix<T>& z = out.forward.latents.post;
  const double inv_batch = 1.0 / static_cast<double>(batch);

  // d loss / d x_hat = 2 (x_hat - t) / B
  BasicMatrix<T> upstream(batch, d);
  double sq = 0.0;
  double l1 = 0.0;
  const T scale = static_cast<T>(2.0 * inv_batch);
  for (std::size_t b = 0; b < batch; ++b) {
    auto xh = x_hat.row(b);
    auto t = target.row(b);
    auto g = upstream.row(b);
    for (std::size_t i = 0; i < d; ++i) {
      const T r = xh[i] - t[i];
      sq += static_cast<double>(r) * static_cast<double>(r);
      g[i] = scale * r;
    }
    for (T v : z.row(b)) l1 += static_cast<double>(v);
  }
  out.reconstruction_loss = sq * inv_batch;
  out.l1_term = l1 * inv_batch;
  out.loss = out.reconstruction_loss + l1_coefficient * out.l1_term;
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss");

  auto& grads = out.grads;
  grads.w_enc = BasicMatrix<T>(features, d);
  grads.b_enc.assign(features, T{0});
  if (sae.b_dec) {
    std::vector<T> gb(d, T{0});
    for (std::size_t b = 0; b < batch; ++b) {
      auto g = upstream.row(b);
      for (std::size_t i = 0; i < d; ++i) gb[i] += g[i];
    }
    grads.b_dec = std::move(gb);
  }

  const BasicMatrix<T> directions = transpose(sae.w_dec);  // F x d
  BasicMatrix<T> grad_directions(features, d);
  const T l1_upstream = static_cast<T>(l1_coefficient * inv_batch);
  for (std::size_t b = 0; b < batch; ++b) {
    auto zr = z.row(b);
    const T* g = upstream.row(b).data();
    const T* xr = x.row(b).data();
    for (std::size_t f = 0; f < features; ++f) {
      const T a = zr[f];
      if (a == T{0}) continue;
      const T* dir = directions.row(f).data();
      T* gd = grad_directions.row(f).data();
      T delta = T{0};
      for (std::size_t i = 0; i < d; ++i) {
        gd[i] += a * g[i];
        delta += dir[i] * g[i];
      }
      // z = pre on the support (z >= 0), so d|z|/dpre = 1 there.
      delta += l1_upstream;
      T* ge = grads.w_enc.row(f).data();
      for (std::size_t i = 0; i < d; ++i) ge[i] += delta * xr[i];
      grads.b_enc[f] += delta;
    }
  }
  grads.w_dec = transpose(grad_directions);
  return out;
}

LossAndGrads<float> compute_loss_and_grads(const SaeParams& sae, const Matrix& x,
                                           const TrainTarget& target, double l1_coefficient) {
  return compute_loss_and_grads<float>(sae, x, make_target(target, x), l1_coefficient);
}

template LossAndGrads<float> compute_loss_and_grads<float>(const SaeParams&, const Matrix&,
                                                           const Matrix&, double);
template LossAndGrads<double> compute_loss_and_grads<double>(const SaeParams64&, const Matrix64&,
                                                             const Matrix64&, double);

// ---------------------------------------------------------------------------

void DynamicsLog::write_csv(std::ostream& os) const {
  os << "samples,general_ev,domain_ev,mean_l0,loss\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%llu,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<unsigned long long>(r.samples), r.general_ev, r.domain_ev, r.mean_l0,
                  r.loss);
    os << buf;
  }
}

void DynamicsLog::write_csv(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  write_csv(os);
  if (!os) throw IoError("write failed for " + path);
}

TrainingAborted::TrainingAborted(const std::string& message, SaeParams last_good,
                                 std::uint64_t samples_seen)
    : NumericError(message),
      last_good_(std::make_shared<const SaeParams>(std::move(last_good))),
      samples_seen_(samples_seen) {}

// ---------------------------------------------------------------------------

SaeParams init_params(std::size_t d, std::size_t features, SaeRole role, std::uint64_t seed,
                      std::size_t k, const Matrix* warmup) {
  if (d < 1 || features < 1) throw ConfigError("init_params needs d >= 1 and F >= 1");
  Rng rng(seed);
  SaeParams sae;
  sae.role = role;
  sae.w_dec = Matrix(d, features);
  std::vector<double> column(d);
  for (std::size_t f = 0; f < features; ++f) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (double& v : column) {
        v = rng.normal();
        norm2 += v * v;
      }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t i = 0; i < d; ++i) sae.w_dec(i, f) = static_cast<float>(column[i] * inv);
  }
  sae.w_enc = transpose(sae.w_dec);
  sae.b_enc.assign(features, 0.0f);
  if (role != SaeRole::kResidual) {
    std::vector<float> bias(d, 0.0f);
    if (warmup != nullptr && warmup->rows() > 0) {
      if (warmup->cols() != d) throw ShapeError("warm-up sample width != d");
      std::vector<double> mean(d, 0.0);
      for (std::size_t r = 0; r < warmup->rows(); ++r) {
        auto row = warmup->row(r);
        for (std::size_t i = 0; i < d; ++i) mean[i] += row[i];
      }
      for (std::size_t i = 0; i < d; ++i) {
        bias[i] = static_cast<float>(mean[i] / static_cast<double>(warmup->rows()));
      }
    }
    sae.b_dec = std::move(bias);
  }
  sae.activation = BatchTopK{std::clamp<std::size_t>(k, 1, features)};
  sae.validate();
  return sae;
}

void normalize_decoder(SaeParams& sae, std::size_t first_feature) {
  const std::size_t d = sae.input_dim();
  for (std::size_t f = first_feature; f < sae.dict_size(); ++f) {
    double norm2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double v = sae.w_dec(i, f);
      norm2 += v * v;
    }
    if (norm2 == 0.0) continue;
    const double norm = std::sqrt(norm2);
    const float inv = static_cast<float>(1.0 / norm);
    const float scale = static_cast<float>(norm);
    for (std::size_t i = 0; i < d; ++i) sae.w_dec(i, f) *= inv;
    for (float& w : sae.w_enc.row(f)) w *= scale;
    sae.b_enc[f] *= scale;
  }
}

ResampleResult resample_dead_features(const SaeParams& sae, std::span<const std::uint64_t> activity,
                                      const Matrix& candidates, std::span<const double> candidate_error,
                                      std::size_t first_feature, double encoder_scale) {
  const std::size_t features = sae.dict_size();
  const std::size_t d = sae.input_dim();
  if (activity.size() != features) throw ShapeError("activity counters must have one entry per feature");
  if (candidates.rows() != candidate_error.size()) throw ShapeError("one error per candidate required");
  if (candidates.rows() > 0 && candidates.cols() != d) throw ShapeError("candidate width != d");

  ResampleResult out{sae, {}};
  std::vector<std::size_t> dead;
  double alive_norm = 0.0;
  std::size_t alive = 0;
  for (std::size_t f = 0; f < features; ++f) {
    if (f >= first_feature && activity[f] == 0) {
      dead.push_back(f);
    } else {
      double n2 = 0.0;
      for (float w : sae.w_enc.row(f)) n2 += static_cast<double>(w) * w;
      alive_norm += std::sqrt(n2);
      ++alive;
    }
  }
  if (dead.empty() || candidates.rows() == 0) return out;

  std::vector<std::size_t> order(candidates.rows());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return candidate_error[a] > candidate_error[b];
  });
  // Candidates with zero norm cannot define a direction.
  std::vector<std::size_t> usable;
  for (std::size_t idx : order) {
    double n2 = 0.0;
    for (float v : candidates.row(idx)) n2 += static_cast<double>(v) * v;
    if (n2 > 0.0) usable.push_back(idx);
  }
  if (usable.empty()) return out;

  const double row_norm = encoder_scale * (alive > 0 ? alive_norm / static_cast<double>(alive) : 1.0);
  for (std::size_t j = 0; j < dead.size(); ++j) {
    const std::size_t f = dead[j];
    auto src = candidates.row(usable[j % usable.size()]);
    double n2 = 0.0;
    for (float v : src) n2 += static_cast<double>(v) * v;
    const double inv = 1.0 / std::sqrt(n2);
    for (std::size_t i = 0; i < d; ++i) {
      const double u = src[i] * inv;
      out.params.w_dec(i, f) = static_cast<float>(u);
      out.params.w_enc(f, i) = static_cast<float>(u * row_norm);
    }
    out.params.b_enc[f] = 0.0f;
    out.resampled.push_back(f);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double composite_ev(const SaeParams& model, const TrainTarget& target, const Matrix& data,
                    std::size_t batch_size) {
  if (target.mode == TrainTarget::Mode::kResidual) {
    BoostStack stack = *target.frozen;
    stack.add_residual("__training__", model);
    return evaluate(stack, data, batch_size).ev;
  }
  return evaluate(BoostStack(model), data, batch_size).ev;
}

void mask_frozen(Gradients<float>& g, const TrainableRange& trainable) {
  const std::size_t frozen = trainable.first_feature;
  if (frozen > 0) {
    const std::size_t d = g.w_enc.cols();
    for (std::size_t f = 0; f < frozen; ++f) {
      for (float& v : g.w_enc.row(f)) v = 0.0f;
      g.b_enc[f] = 0.0f;
      for (std::size_t i = 0; i < d; ++i) g.w_dec(i, f) = 0.0f;
    }
  }
  if (!trainable.decoder_bias && g.b_dec) std::fill(g.b_dec->begin(), g.b_dec->end(), 0.0f);
}

}  // namespace

TrainResult train(const SaeParams& init, BatchSource& stream, const TrainConfig& config,
                  const TrainTarget& target, const EvalSets& eval, const TrainableRange& trainable) {
  config.validate();
  init.validate();
  if (stream.dim() != init.input_dim()) {
    throw ShapeError("training stream width " + std::to_string(stream.dim()) + " != d=" +
                     std::to_string(init.input_dim()));
  }
  if (target.mode == TrainTarget::Mode::kResidual) {
    if (!target.frozen) throw ConfigError("residual training needs a frozen stack");
    if (target.frozen->input_dim() != init.input_dim()) throw ShapeError("frozen stack width != d");
  }
  if (trainable.first_feature > init.dict_size()) throw ConfigError("frozen prefix exceeds F");

  TrainResult result;
  result.params = init;
  SaeParams& sae = result.params;
  if (config.k != 0) sae.activation = BatchTopK{config.k};
  sae.validate();

  const std::size_t features = sae.dict_size();
  const AdamHyper hyper = config.adam();
  AdamState<float> st_w_enc("W_enc", sae.w_enc.size(), hyper);
  AdamState<float> st_b_enc("b_enc", features, hyper);
  AdamState<float> st_w_dec("W_dec", sae.w_dec.size(), hyper);
  AdamState<float> st_b_dec("b_dec", sae.b_dec ? sae.b_dec->size() : 0, hyper);
  const bool train_b_dec = sae.b_dec.has_value() && trainable.decoder_bias;

  const bool resampling = config.resample_interval > 0;
  std::vector<std::uint64_t> last_active(features, 0);
  std::uint64_t next_resample = config.resample_interval;

  std::uint64_t next_record = config.eval_interval;
  double interval_loss = 0.0;
  double interval_l0 = 0.0;
  std::uint64_t interval_rows = 0;
  std::uint64_t step = 0;

  auto& seen = result.samples_seen;
  while (seen < config.total_samples) {
    const auto want = static_cast<std::size_t>(
        std::min<std::uint64_t>(config.batch_size, config.total_samples - seen));
    Matrix x = stream.next(want);
    if (x.rows() == 0) {
      result.log.warnings.push_back("data exhausted after " + std::to_string(seen) + " of " +
                                    std::to_string(config.total_samples) + " budgeted samples");
      break;
    }

    const Matrix t = make_target(target, x);
    LossAndGrads<float> lg;
    try {
      lg = compute_loss_and_grads<float>(sae, x, t, config.l1_coefficient);
    } catch (const NumericError& e) {
      throw TrainingAborted(std::string(e.what()) + " at batch " + std::to_string(step), sae, seen);
    }
    mask_frozen(lg.grads, trainable);

    const SaeParams last_good = sae;
    try {
      AdamHyper h = hyper;
      if (config.warmup_samples > 0 && seen < config.warmup_samples) {
        h.learning_rate *= static_cast<double>(seen + x.rows()) / static_cast<double>(config.warmup_samples);
      }
      st_w_enc.hyper = st_b_enc.hyper = st_w_dec.hyper = st_b_dec.hyper = h;
      adam_step(sae.w_enc, lg.grads.w_enc, st_w_enc);
      adam_step<float>(sae.b_enc, lg.grads.b_enc, st_b_enc);
      adam_step(sae.w_dec, lg.grads.w_dec, st_w_dec);
      if (train_b_dec) adam_step<float>(*sae.b_dec, *lg.grads.b_dec, st_b_dec);
      if (config.normalize_decoder) normalize_decoder(sae, trainable.first_feature);
      if (!all_finite(sae.w_enc) || !all_finite(sae.w_dec) || !all_finite<float>(sae.b_enc)) {
        throw NumericError("parameters became non-finite");
      }
    } catch (const NumericError& e) {
      throw TrainingAborted(std::string(e.what()) + " at batch " + std::to_string(step), last_good, seen);
    }

    seen += x.rows();
    ++step;
    const auto& z = lg.forward.latents.post;
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      for (std::size_t f = 0; f < features; ++f) {
        if (row[f] != 0.0f) last_active[f] = seen;
      }
    }
    interval_loss += lg.loss * static_cast<double>(x.rows());
    interval_l0 += static_cast<double>(lg.forward.latents.nonzero_count());
    interval_rows += x.rows();

    if (resampling && seen >= next_resample && (config.resample_until == 0 || seen <= config.resample_until)) {
      next_resample += config.resample_interval;
      std::vector<std::uint64_t> activity(features, 1);
      for (std::size_t f = trainable.first_feature; f < features; ++f) {
        const std::uint64_t idle = seen - last_active[f];
        if (idle >= config.resample_window) activity[f] = 0;
      }
      // High-error rows of the current batch, expressed in target space.
      Matrix candidates = t;
      std::vector<double> errors(t.rows(), 0.0);
      for (std::size_t r = 0; r < t.rows(); ++r) {
        auto tr = candidates.row(r);
        auto hr = lg.forward.x_hat.row(r);
        for (std::size_t i = 0; i < tr.size(); ++i) {
          const double e = static_cast<double>(tr[i]) - hr[i];
          errors[r] += e * e;
          if (sae.b_dec) tr[i] -= (*sae.b_dec)[i];
        }
      }
      ResampleResult rs = resample_dead_features(sae, activity, candidates, errors, trainable.first_feature,
                                                config.resample_encoder_scale);
      if (!rs.resampled.empty()) {
        const std::size_t d = sae.input_dim();
        for (std::size_t f : rs.resampled) {
          for (std::size_t i = 0; i < d; ++i) {
            st_w_enc.reset_entry(f * d + i);
            st_w_dec.reset_entry(i * features + f);
          }
          st_b_enc.reset_entry(f);
          last_active[f] = seen;
        }
        result.resampled_features += rs.resampled.size();
        sae = std::move(rs.params);
      }
    }

    if (config.eval_interval > 0 && seen >= next_record) {
      while (next_record <= seen) next_record += config.eval_interval;
      DynamicsRecord rec;
      rec.samples = seen;
      const std::size_t eval_batch = config.batch_size;
      if (eval.general) rec.general_ev = composite_ev(sae, target, *eval.general, eval_batch);
      if (eval.domain) rec.domain_ev = composite_ev(sae, target, *eval.domain, eval_batch);
      rec.mean_l0 = interval_l0 / static_cast<double>(interval_rows);
      rec.loss = interval_loss / static_cast<double>(interval_rows);
      result.log.records.push_back(rec);
      interval_loss = interval_l0 = 0.0;
      interval_rows = 0;
    }
  }
  return result;
}

}  // namespace saeboost
