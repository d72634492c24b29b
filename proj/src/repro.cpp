#include "saeboost/repro.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <memory>
#include <sstream>

#include "saeboost/baselines.hpp"
#include "saeboost/boost.hpp"
#include "saeboost/metrics.hpp"
#include "saeboost/selfcheck.hpp"
#include "saeboost/shard_io.hpp"
#include "saeboost/stack.hpp"
#include "saeboost/trainer.hpp"

namespace saeboost {

namespace fs = std::filesystem;

void ReproConfig::validate() const {
  world.validate();
  if (base_features == 0 || residual_features == 0) throw ConfigError("dictionary sizes must be positive");
  if (base_k == 0 || base_k > base_features) throw ConfigError("base k must lie in [1, base_features]");
  if (residual_k == 0 || residual_k > residual_features) {
    throw ConfigError("residual k must lie in [1, residual_features]");
  }
  if (train_samples == 0 || calibration_samples == 0 || holdout_samples == 0 || eval_samples == 0) {
    throw ConfigError("sample counts must be positive");
  }
  if (batch_size == 0 || eval_batch == 0) throw ConfigError("batch sizes must be positive");
  if (seeds == 0) throw ConfigError("at least one seed is required");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in [0, 1)");
  bool found = false;
  for (const auto& dom : world.domains) found = found || dom.id == baseline_domain;
  if (!found) throw ConfigError("baseline domain '" + baseline_domain + "' is not a world domain");
  for (std::size_t k : sweep_ks) {
    if (k == 0 || k > residual_features) throw ConfigError("sweep k outside [1, residual_features]");
  }
}

#define SAEBOOST_REPRO_FIELDS(X)                                                                         \
  X(base_features) X(base_k) X(residual_features) X(residual_k) X(extended_k) X(train_samples)          \
  X(learning_rate) X(batch_size) X(calibration_samples) X(holdout_samples) X(eval_samples) X(eval_batch) \
  X(alpha) X(seeds) X(baseline_domain) X(sweep_ks) X(equivalence_inputs) X(dynamics_interval)           \
  X(gradient_instances) X(roundtrip_instances) X(boost_gain) X(general_tolerance) X(forgetting)         \
  X(sweep_noise) X(l0_band) X(calibration_ev_change) X(recovery_cosine) X(recovery_fraction)

void to_json(nlohmann::json& j, const ReproConfig& c) {
  j = nlohmann::json::object();
  j["world"] = c.world;
#define X(f) j[#f] = c.f;
  SAEBOOST_REPRO_FIELDS(X)
#undef X
}

void from_json(const nlohmann::json& j, ReproConfig& c) {
  if (!j.is_object()) throw ConfigError("repro config must be a JSON object");
  static const std::vector<std::string> known = {
      "world",
#define X(f) #f,
      SAEBOOST_REPRO_FIELDS(X)
#undef X
  };
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown repro config key '" + key + "'");
    }
  }
  try {
    if (j.contains("world")) c.world = j.at("world").get<WorldSpec>();
#define X(f) \
  if (j.contains(#f)) j.at(#f).get_to(c.f);
    SAEBOOST_REPRO_FIELDS(X)
#undef X
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("repro config: ") + e.what());
  }
}

#undef SAEBOOST_REPRO_FIELDS

const ModelScore& SeedOutcome::baseline(const std::string& name) const {
  for (const auto& [n, s] : baselines) {
    if (n == name) return s;
  }
  throw ConfigError("no baseline named '" + name + "'");
}

bool ReproResult::all_passed() const {
  return std::all_of(criteria.begin(), criteria.end(), [](const Criterion& c) { return c.passed; });
}

namespace {

constexpr const char* kExtendedMostActive = "extended-most-active";
constexpr const char* kExtendedRandom = "extended-random";
constexpr const char* kStitching = "stitching";
constexpr const char* kFullFinetune = "full-finetune";

// Stream tags mixed into the run seed.
enum StreamTag : std::uint64_t {
  kGeneralTrain = 1,
  kBaseInit,
  kWarmup,
  kGeneralCalibration,
  kGeneralHoldout,
  kGeneralEval,
  kExtendSeed,
  kDomainBase = 100,
  kEquivalenceBase = 300,
};

std::uint64_t domain_stream(std::uint64_t seed, std::size_t domain, std::uint64_t slot) {
  return derive_seed(seed, kDomainBase + 10 * domain + slot);
}

nlohmann::json score_json(const ModelScore& s) {
  return {{"general_ev", s.general_ev},
          {"general_l0", s.general_l0},
          {"domain_ev", s.domain_ev},
          {"domain_l0", s.domain_l0}};
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

class RunWriter {
 public:
  explicit RunWriter(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  void text(const std::string& name, const std::string& body) const {
    atomic_write((dir_ / name).string(), body);
  }
  void json(const std::string& name, const nlohmann::json& j) const { text(name, j.dump(2) + "\n"); }
  void checkpoint(const std::string& name, const SaeParams& p, const nlohmann::json& provenance) const {
    save_checkpoint((dir_ / name).string(), p, provenance);
  }
  void report(const EvalReport& r) const { write_eval_report(dir_.string(), r); }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
};

struct SeedContext {
  const ReproConfig& cfg;
  std::uint64_t seed;
  PlantedWorld world;
  Matrix general_eval;
  Matrix general_holdout;
  std::vector<Matrix> domain_eval;
  std::vector<Matrix> domain_holdout;
};

ModelScore score(const BoostStack& stack, const SeedContext& ctx, std::size_t domain, const RunWriter& out,
                 const std::string& model_id) {
  const EvalResult g = evaluate(stack, ctx.general_eval, ctx.cfg.eval_batch);
  const EvalResult d = evaluate(stack, ctx.domain_eval[domain], ctx.cfg.eval_batch);
  out.report(make_eval_report(stack, g, model_id, "general"));
  out.report(make_eval_report(stack, d, model_id, ctx.world.spec.domains[domain].id));
  return {g.ev, g.mean_l0, d.ev, d.mean_l0};
}

TrainConfig base_train_config(const ReproConfig& cfg, std::uint64_t seed, std::size_t k) {
  TrainConfig c;
  c.learning_rate = cfg.learning_rate;
  c.batch_size = cfg.batch_size;
  c.total_samples = cfg.train_samples;
  c.k = k;
  c.eval_interval = cfg.dynamics_interval;
  c.seed = seed;
  c.deterministic = deterministic_mode();
  return c;
}

std::string dynamics_csv(const DynamicsLog& log) {
  std::ostringstream os;
  log.write_csv(os);
  return os.str();
}

nlohmann::json provenance(const std::string& model, std::uint64_t seed, const std::string& trained_on) {
  return {{"model", model}, {"seed", seed}, {"trained_on", trained_on}};
}

SeedOutcome run_seed(const ReproConfig& cfg, std::uint64_t seed, const RunWriter& out) {
  SeedContext ctx{cfg, seed, build_world(cfg.world, seed), {}, {}, {}, {}};
  const PlantedWorld& world = ctx.world;
  const std::size_t d = world.spec.d;
  const DomainMix general = DomainMix::single("general");
  ctx.general_eval = sample_shard(world, general, cfg.eval_samples, derive_seed(seed, kGeneralEval)).data;
  ctx.general_holdout = sample_shard(world, general, cfg.holdout_samples, derive_seed(seed, kGeneralHoldout)).data;
  for (std::size_t i = 0; i < world.domains.size(); ++i) {
    const DomainMix mix = DomainMix::single(world.spec.domains[i].id);
    ctx.domain_eval.push_back(sample_shard(world, mix, cfg.eval_samples, domain_stream(seed, i, 4)).data);
    ctx.domain_holdout.push_back(sample_shard(world, mix, cfg.holdout_samples, domain_stream(seed, i, 3)).data);
  }
  const std::size_t home = static_cast<std::size_t>(world.domain_index(cfg.baseline_domain));
  out.json("world.json", {{"spec", world.spec}, {"seed", seed}});

  SeedOutcome res;
  res.seed = seed;

  // Base SAE on general data, then jumpReLU thresholds from general data.
  const Matrix warm = sample_shard(world, general, 4096, derive_seed(seed, kWarmup)).data;
  SyntheticSource general_train(world, general, derive_seed(seed, kGeneralTrain));
  const EvalSets base_eval{&ctx.general_eval, &ctx.domain_eval[home]};
  TrainResult base_run = train(init_params(d, cfg.base_features, SaeRole::kBase, derive_seed(seed, kBaseInit),
                                           cfg.base_k, &warm),
                               general_train, base_train_config(cfg, seed, cfg.base_k), TrainTarget::direct(),
                               base_eval);
  const SaeParams& base_topk = base_run.params;
  out.checkpoint("base_topk.saec", base_topk, provenance("base", seed, "general"));
  out.text("dynamics_base.csv", dynamics_csv(base_run.log));

  SyntheticSource general_cal(world, general, derive_seed(seed, kGeneralCalibration), cfg.calibration_samples);
  const SaeParams base = calibrate_thresholds(base_topk, general_cal, {cfg.alpha, cfg.eval_batch, 0, {}});
  out.checkpoint("base.saec", base, provenance("base", seed, "general"));
  const BoostStack base_stack(base);
  res.base_topk_ev = evaluate(BoostStack(base_topk), ctx.general_holdout, cfg.eval_batch).ev;
  {
    const EvalResult h = evaluate(base_stack, ctx.general_holdout, cfg.eval_batch);
    res.base_calibrated_ev = h.ev;
    res.base_calibrated_l0 = h.mean_l0;
  }

  // One residual per domain, each against the base alone.
  auto frozen = std::make_shared<const BoostStack>(base);
  std::vector<SaeParams> residuals;
  std::vector<SaeParams> residuals_topk;
  for (std::size_t i = 0; i < world.domains.size(); ++i) {
    const std::string& id = world.spec.domains[i].id;
    const DomainMix mix = DomainMix::single(id);
    SyntheticSource train_stream(world, mix, domain_stream(seed, i, 1));
    TrainConfig rc = base_train_config(cfg, seed, cfg.residual_k);
    TrainResult run = train_boost(frozen, train_stream, rc, {cfg.residual_features, domain_stream(seed, i, 5)},
                                  {&ctx.general_eval, &ctx.domain_eval[i]});
    out.text("dynamics_residual_" + sanitize_id(id) + ".csv", dynamics_csv(run.log));
    SyntheticSource cal(world, mix, domain_stream(seed, i, 2), cfg.calibration_samples);
    SaeParams residual = calibrate_thresholds(run.params, cal, {cfg.alpha, cfg.eval_batch, 0, {}});
    out.checkpoint("residual_" + sanitize_id(id) + "_topk.saec", run.params, provenance("residual", seed, id));
    out.checkpoint("residual_" + sanitize_id(id) + ".saec", residual, provenance("residual", seed, id));
    residuals_topk.push_back(std::move(run.params));
    residuals.push_back(std::move(residual));
  }

  BoostStack all(base);
  for (std::size_t i = 0; i < residuals.size(); ++i) all.add_residual(world.spec.domains[i].id, residuals[i]);
  res.base_general_ev = evaluate(base_stack, ctx.general_eval, cfg.eval_batch).ev;
  res.all_residuals_general_ev = evaluate(all, ctx.general_eval, cfg.eval_batch).ev;

  for (std::size_t i = 0; i < world.domains.size(); ++i) {
    const std::string& id = world.spec.domains[i].id;
    DomainOutcome dom;
    dom.domain = id;
    dom.base = score(base_stack, ctx, i, out, "base");
    BoostStack boost(base);
    boost.add_residual(id, residuals[i]);
    dom.boost = score(boost, ctx, i, out, "boost-" + id);
    dom.all_residuals = score(all, ctx, i, out, "boost-all");

    const FeatureMatch match = match_features(residuals[i].w_dec, world.domains[i], cfg.recovery_cosine);
    dom.recovery = match.fraction_above;
    dom.recovery_mean_cosine = match.mean_best;

    const Matrix x = sample_shard(world, DomainMix::single(id), cfg.equivalence_inputs,
                                  derive_seed(seed, kEquivalenceBase + i))
                         .data;
    const ResidualForward train_side = residual_forward(*frozen, residuals[i], x);
    dom.equivalent = bitwise_equal(train_side.combined, stitched_reconstruct(boost, x).x_hat);

    const EvalResult cal = evaluate(boost, ctx.domain_holdout[i], cfg.eval_batch);
    dom.residual_l0 = cal.component_l0.at(1);
    dom.calibrated_ev = cal.ev;
    BoostStack topk_stack(base);
    topk_stack.add_residual(id, residuals_topk[i]);
    dom.topk_ev = evaluate(topk_stack, ctx.domain_holdout[i], cfg.eval_batch).ev;
    res.domains.push_back(dom);
  }

  // Baselines on the home domain at the residual's feature budget.
  const std::string& home_id = world.spec.domains[home].id;
  const DomainMix home_mix = DomainMix::single(home_id);
  SyntheticSource home_train(world, home_mix, domain_stream(seed, home, 1));
  SyntheticSource home_cal(world, home_mix, domain_stream(seed, home, 2), cfg.calibration_samples);
  const std::vector<float>& base_thresholds = std::get<JumpRelu>(base.activation).thresholds;
  const std::size_t ext_k = cfg.extended_k != 0 ? cfg.extended_k : cfg.base_k;
  const EvalSets home_eval{&ctx.general_eval, &ctx.domain_eval[home]};

  std::vector<std::pair<std::string, SaeParams>> extended;
  for (auto [name, init] : {std::pair{kExtendedMostActive, ExtendInit::kMostActive},
                            std::pair{kExtendedRandom, ExtendInit::kRandom}}) {
    home_train.rewind();
    ExtendOptions eo;
    eo.seed = derive_seed(seed, kExtendSeed + static_cast<std::uint64_t>(init));
    TrainResult run = train_extended(base_topk, home_train, init, cfg.residual_features,
                                     base_train_config(cfg, seed, ext_k), eo, home_eval);
    out.text(std::string("dynamics_") + name + ".csv", dynamics_csv(run.log));
    home_cal.rewind();
    SaeParams calibrated = calibrate_thresholds(run.params, home_cal,
                                                {cfg.alpha, cfg.eval_batch, cfg.base_features, base_thresholds});
    out.checkpoint(std::string(name) + ".saec", calibrated, provenance(name, seed, home_id));
    res.baselines.emplace_back(name, score(BoostStack(calibrated), ctx, home, out, name));
    extended.emplace_back(name, std::move(calibrated));
  }

  home_train.rewind();
  TrainResult ft_run = train_full_finetune(base_topk, home_train, base_train_config(cfg, seed, cfg.base_k), home_eval);
  out.text("dynamics_full-finetune.csv", dynamics_csv(ft_run.log));
  home_cal.rewind();
  const SaeParams finetuned = calibrate_thresholds(ft_run.params, home_cal, {cfg.alpha, cfg.eval_batch, 0, {}});
  out.checkpoint("full-finetune.saec", finetuned, provenance(kFullFinetune, seed, home_id));
  const StitchResult stitched = stitch_from_finetuned(base, finetuned, cfg.residual_features);
  out.checkpoint("stitching.saec", stitched.params, provenance(kStitching, seed, home_id));
  res.baselines.emplace_back(kStitching, score(BoostStack(stitched.params), ctx, home, out, kStitching));
  res.baselines.emplace_back(kFullFinetune, score(BoostStack(finetuned), ctx, home, out, kFullFinetune));

  // Decoder similarity of added features to the base.
  auto similarity = [&](const std::string& name, const SaeParams& model, std::size_t first) {
    const SimilarityReport r = max_cosine_similarity(model, base, first);
    std::ostringstream csv;
    r.write_csv(csv);
    out.text("similarity_" + name + ".csv", csv.str());
    out.json("similarity_" + name + ".json", r.to_json());
    return r.median;
  };
  res.boost_similarity_median = similarity("boost", residuals[home], 0);
  res.extended_most_active_similarity_median = similarity(kExtendedMostActive, extended[0].second, cfg.base_features);
  res.extended_random_similarity_median = similarity(kExtendedRandom, extended[1].second, cfg.base_features);
  res.stitching_similarity_median = similarity(kStitching, stitched.params, cfg.base_features);
  {
    std::ostringstream csv;
    export_feature_embeddings(csv, {{"base", &base},
                                    {"boost", &residuals[home]},
                                    {kExtendedMostActive, &extended[0].second},
                                    {kStitching, &stitched.params}});
    out.text("feature_embeddings.csv", csv.str());
  }

  out.json("outcome.json", to_json(res));
  return res;
}

std::vector<SweepRow> run_sweep(const ReproConfig& cfg, std::uint64_t seed, const RunWriter& out) {
  const PlantedWorld world = build_world(cfg.world, seed);
  const std::size_t home = static_cast<std::size_t>(world.domain_index(cfg.baseline_domain));
  const DomainMix mix = DomainMix::single(cfg.baseline_domain);
  const Matrix general_eval =
      sample_shard(world, DomainMix::single("general"), cfg.eval_samples, derive_seed(seed, kGeneralEval)).data;
  const Matrix domain_eval = sample_shard(world, mix, cfg.eval_samples, domain_stream(seed, home, 4)).data;
  SyntheticSource train_stream(world, mix, domain_stream(seed, home, 1));
  SyntheticSource cal(world, mix, domain_stream(seed, home, 2), cfg.calibration_samples);
  const SaeParams base = load_checkpoint((out.dir() / "base.saec").string()).params;
  SweepInputs in;
  in.domain_train = &train_stream;
  in.calibration = &cal;
  in.general_eval = &general_eval;
  in.domain_eval = &domain_eval;
  in.residual_features = cfg.residual_features;
  in.alpha = cfg.alpha;
  in.init_seed = domain_stream(seed, home, 5);
  in.eval_batch = cfg.eval_batch;
  TrainConfig c = base_train_config(cfg, seed, cfg.residual_k);
  c.eval_interval = 0;
  std::vector<SweepRow> rows = sweep_topk(base, cfg.sweep_ks, c, in);
  std::ostringstream csv;
  write_sweep_csv(csv, rows);
  out.text("sweep_k.csv", csv.str());
  return rows;
}

// ---------------------------------------------------------------------------
// Criteria

Criterion equivalence_criterion(const std::vector<SeedOutcome>& seeds, const ReproConfig& cfg) {
  std::size_t checked = 0, equal = 0;
  for (const auto& s : seeds) {
    for (const auto& d : s.domains) {
      ++checked;
      equal += d.equivalent;
    }
  }
  return {"train/inference equivalence", checked > 0 && equal == checked,
          std::to_string(equal) + "/" + std::to_string(checked) + " residuals bitwise equal on " +
              std::to_string(cfg.equivalence_inputs) + " inputs"};
}

Criterion boost_criterion(const std::vector<SeedOutcome>& seeds, const ReproConfig& cfg) {
  bool ok = true;
  double worst = std::numeric_limits<double>::infinity();
  std::string where;
  for (const auto& s : seeds) {
    for (const auto& d : s.domains) {
      const double gain = d.boost.domain_ev - d.base.domain_ev;
      if (gain < worst) {
        worst = gain;
        where = "seed " + std::to_string(s.seed) + " " + d.domain + " (" + fixed(d.base.domain_ev) + " -> " +
                fixed(d.boost.domain_ev) + ")";
      }
      ok = ok && gain >= cfg.boost_gain;
    }
  }
  return {"boost pattern", ok, "min domain EV gain " + fixed(worst) + " at " + where + "; need >= " + fixed(cfg.boost_gain, 2)};
}

Criterion general_criterion(const std::vector<SeedOutcome>& seeds, const ReproConfig& cfg) {
  bool ok = true;
  double worst = 0.0;
  std::string where;
  auto consider = [&](double base, double boosted, const std::string& label) {
    const double rel = std::abs(boosted - base) / base;
    if (rel >= worst) {
      worst = rel;
      where = label;
    }
    ok = ok && rel <= cfg.general_tolerance;
  };
  for (const auto& s : seeds) {
    for (const auto& d : s.domains) {
      consider(d.base.general_ev, d.boost.general_ev, "seed " + std::to_string(s.seed) + " " + d.domain);
    }
    consider(s.base_general_ev, s.all_residuals_general_ev, "seed " + std::to_string(s.seed) + " all domains");
  }
  return {"general preservation", ok,
          "max relative general EV change " + fixed(100.0 * worst, 3) + "% at " + where + "; need <= " +
              fixed(100.0 * cfg.general_tolerance, 1) + "%"};
}

Criterion baseline_criterion(const std::vector<SeedOutcome>& seeds, const ReproConfig& cfg) {
  std::size_t ft_best = 0, forgetting = 0, stitch_below = 0, ext_ma_l0 = 0, ext_rand_l0 = 0;
  for (const auto& s : seeds) {
    const auto home = std::find_if(s.domains.begin(), s.domains.end(),
                                   [&](const DomainOutcome& d) { return d.domain == cfg.baseline_domain; });
    const ModelScore& boost = home->boost;
    const ModelScore& ft = s.baseline(kFullFinetune);
    const ModelScore& st = s.baseline(kStitching);
    const ModelScore& ema = s.baseline(kExtendedMostActive);
    const ModelScore& er = s.baseline(kExtendedRandom);
    const double others = std::max({home->base.domain_ev, boost.domain_ev, st.domain_ev, ema.domain_ev, er.domain_ev});
    ft_best += ft.domain_ev > others;
    forgetting += (home->base.general_ev - ft.general_ev) / home->base.general_ev >= cfg.forgetting;
    stitch_below += st.domain_ev < boost.domain_ev;
    ext_ma_l0 += ema.domain_l0 > boost.domain_l0;
    ext_rand_l0 += er.domain_l0 > boost.domain_l0;
  }
  const std::size_t n = seeds.size();
  auto majority = [&](std::size_t wins) { return 2 * wins > n; };
  const bool ok = majority(ft_best) && forgetting == n && majority(stitch_below) && majority(ext_ma_l0);
  auto frac = [&](std::size_t w) { return std::to_string(w) + "/" + std::to_string(n); };
  return {"baseline ordering", ok,
          "fine-tune highest domain EV " + frac(ft_best) + ", fine-tune general drop >= " +
              fixed(100.0 * cfg.forgetting, 0) + "% " + frac(forgetting) + ", stitching < boost " +
              frac(stitch_below) + ", extended (most-active) L0 > boost L0 " + frac(ext_ma_l0) +
              "; random-init extended L0 > boost L0 " + frac(ext_rand_l0) + " (not gated)"};
}

Criterion similarity_criterion(const std::vector<SeedOutcome>& seeds) {
  bool ok = true;
  std::ostringstream detail;
  for (const auto& s : seeds) {
    ok = ok && s.boost_similarity_median < s.extended_most_active_similarity_median;
    detail << (detail.tellp() > 0 ? "; " : "") << "seed " << s.seed << " median boost "
           << fixed(s.boost_similarity_median, 3) << " vs extended " << fixed(s.extended_most_active_similarity_median, 3)
           << " (random-init " << fixed(s.extended_random_similarity_median, 3) << ", stitching "
           << fixed(s.stitching_similarity_median, 3) << ", not gated)";
  }
  return {"similarity pattern", ok, detail.str()};
}

Criterion sweep_criterion(const std::vector<SeedOutcome>& seeds, const ReproConfig& cfg) {
  // Means over seeds, row by row.
  std::vector<SweepRow> rows = seeds.front().sweep;
  for (auto& r : rows) r.domain_ev = r.domain_l0 = r.general_ev = r.general_l0 = 0.0;
  for (const auto& s : seeds) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows[i].domain_ev += s.sweep.at(i).domain_ev / static_cast<double>(seeds.size());
      rows[i].domain_l0 += s.sweep.at(i).domain_l0 / static_cast<double>(seeds.size());
    }
  }
  bool ok = rows.size() >= 2;
  std::ostringstream detail;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0) {
      ok = ok && rows[i].domain_ev >= rows[i - 1].domain_ev - cfg.sweep_noise;
      ok = ok && rows[i].domain_l0 > rows[i - 1].domain_l0;
    }
    detail << (i ? ", " : "mean over seeds: ") << "k=" << rows[i].k << " EV " << fixed(rows[i].domain_ev) << " L0 "
           << fixed(rows[i].domain_l0, 2);
  }
  return {"top-k sweep pattern", ok, detail.str()};
}

Criterion calibration_criterion(const std::vector<SeedOutcome>& seeds, const ReproConfig& cfg) {
  bool ok = true;
  double worst_l0 = 0.0, worst_ev = 0.0;
  auto check = [&](double l0, double k, double ev_change) {
    const double dev = std::abs(l0 - k) / k;
    worst_l0 = std::max(worst_l0, dev);
    worst_ev = std::max(worst_ev, std::abs(ev_change));
    ok = ok && dev <= cfg.l0_band && std::abs(ev_change) <= cfg.calibration_ev_change;
  };
  for (const auto& s : seeds) {
    check(s.base_calibrated_l0, static_cast<double>(cfg.base_k), s.base_calibrated_ev - s.base_topk_ev);
    for (const auto& d : s.domains) {
      check(d.residual_l0, static_cast<double>(cfg.residual_k), d.calibrated_ev - d.topk_ev);
    }
  }
  return {"calibration fidelity", ok,
          "max L0 deviation from k " + fixed(100.0 * worst_l0, 1) + "% (need <= " + fixed(100.0 * cfg.l0_band, 0) +
              "%), max EV change " + fixed(worst_ev) + " (need <= " + fixed(cfg.calibration_ev_change, 2) + ")"};
}

Criterion recovery_criterion(const std::vector<SeedOutcome>& seeds, const ReproConfig& cfg) {
  bool ok = true;
  double worst = 1.0;
  std::string where;
  for (const auto& s : seeds) {
    for (const auto& d : s.domains) {
      if (d.recovery <= worst) {
        worst = d.recovery;
        where = "seed " + std::to_string(s.seed) + " " + d.domain;
      }
      ok = ok && d.recovery >= cfg.recovery_fraction;
    }
  }
  return {"planted-feature recovery", ok,
          "min fraction matched at cos >= " + fixed(cfg.recovery_cosine, 2) + ": " + fixed(worst, 3) + " at " + where +
              "; need >= " + fixed(cfg.recovery_fraction, 2)};
}

}  // namespace

nlohmann::json to_json(const SeedOutcome& s) {
  nlohmann::json j;
  j["seed"] = s.seed;
  j["base_calibration"] = {{"topk_ev", s.base_topk_ev}, {"jumprelu_ev", s.base_calibrated_ev},
                           {"jumprelu_l0", s.base_calibrated_l0}};
  j["base_general_ev"] = s.base_general_ev;
  j["all_residuals_general_ev"] = s.all_residuals_general_ev;
  j["domains"] = nlohmann::json::array();
  for (const auto& d : s.domains) {
    j["domains"].push_back({{"domain", d.domain},
                            {"base", score_json(d.base)},
                            {"boost", score_json(d.boost)},
                            {"all_residuals", score_json(d.all_residuals)},
                            {"recovery", d.recovery},
                            {"recovery_mean_cosine", d.recovery_mean_cosine},
                            {"equivalent", d.equivalent},
                            {"residual_calibration",
                             {{"residual_l0", d.residual_l0}, {"jumprelu_ev", d.calibrated_ev}, {"topk_ev", d.topk_ev}}}});
  }
  j["baselines"] = nlohmann::json::object();
  for (const auto& [name, score] : s.baselines) j["baselines"][name] = score_json(score);
  j["similarity_median"] = {{"boost", s.boost_similarity_median},
                            {kExtendedMostActive, s.extended_most_active_similarity_median},
                            {kExtendedRandom, s.extended_random_similarity_median},
                            {kStitching, s.stitching_similarity_median}};
  if (!s.sweep.empty()) {
    j["sweep"] = nlohmann::json::array();
    for (const auto& r : s.sweep) {
      j["sweep"].push_back({{"k", r.k}, {"general_ev", r.general_ev}, {"general_l0", r.general_l0},
                            {"domain_ev", r.domain_ev}, {"domain_l0", r.domain_l0}});
    }
  }
  return j;
}

std::string format_criteria(const std::vector<Criterion>& criteria) {
  std::ostringstream os;
  for (const auto& c : criteria) os << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
  return os.str();
}

std::vector<std::string> list_files(const std::string& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir).generic_string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

ReproResult run_paper_pattern(const ReproConfig& config, std::uint64_t seed, const std::string& out_dir) {
  config.validate();
  const RunWriter root{fs::path(out_dir)};
  root.json("config.json", config);
  ReproResult result;
  for (std::size_t i = 0; i < config.seeds; ++i) {
    const std::uint64_t s = seed + i;
    const RunWriter dir{root.dir() / ("seed-" + std::to_string(s))};
    result.seeds.push_back(run_seed(config, s, dir));
    result.seeds.back().sweep = run_sweep(config, s, dir);
    dir.json("outcome.json", to_json(result.seeds.back()));
  }

  const CheckOutcome grad = check_gradients(config.gradient_instances, derive_seed(seed, 0x67726164));
  const CheckOutcome trip =
      check_round_trips(config.roundtrip_instances, derive_seed(seed, 0x74726970), (root.dir() / ".roundtrip").string());
  fs::remove_all(root.dir() / ".roundtrip");

  const auto& seeds = result.seeds;
  result.criteria = {
      equivalence_criterion(seeds, config),
      {"gradient oracle", grad.passed, grad.detail},
      boost_criterion(seeds, config),
      general_criterion(seeds, config),
      baseline_criterion(seeds, config),
      similarity_criterion(seeds),
      sweep_criterion(seeds, config),
      calibration_criterion(seeds, config),
      recovery_criterion(seeds, config),
      {"format round-trips", trip.passed, trip.detail},
  };

  nlohmann::json crit = nlohmann::json::array();
  for (const auto& c : result.criteria) crit.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  nlohmann::json summary = {{"first_seed", seed}, {"criteria", crit}, {"seeds", nlohmann::json::array()}};
  for (const auto& s : seeds) summary["seeds"].push_back(to_json(s));
  root.json("summary.json", summary);
  root.text("criteria.txt", format_criteria(result.criteria));
  return result;
}

}  // namespace saeboost
