// saeboost: command-line front end for the SAE Boost engine.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "saeboost/baselines.hpp"
#include "saeboost/boost.hpp"
#include "saeboost/eval.hpp"
#include "saeboost/manifest.hpp"
#include "saeboost/metrics.hpp"
#include "saeboost/repro.hpp"
#include "saeboost/shard_io.hpp"
#include "saeboost/synth.hpp"
#include "saeboost/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace saeboost;

namespace {

// JSON config files: top-level keys are global options, nested objects
// belong to subcommands ({"train": {"base": {"k": 8}}}).
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return resolve(app, default_also).dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

  static json resolve(const CLI::App* app, bool default_also) {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || opt->get_single_name() == "help" || opt->get_single_name() == "config") {
        continue;
      }
      std::vector<std::string> values = opt->results();
      if (values.empty()) {
        if (!default_also || opt->get_default_str().empty()) continue;
        values = {opt->get_default_str()};
      }
      if (opt->get_expected_max() > 1) {
        j[opt->get_single_name()] = values;
      } else {
        j[opt->get_single_name()] = values.back();
      }
    }
    for (const CLI::App* sub : app->get_subcommands()) j[sub->get_name()] = resolve(sub, default_also);
    return j;
  }

 private:
  static void flatten(const json& j, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        flatten(value, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v, key));
      } else {
        item.inputs = {scalar(value, key)};
      }
      out.push_back(std::move(item));
    }
  }

  static std::string scalar(const json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::ConversionError("config value for '" + key + "' must be a scalar or a list of scalars");
  }
};

struct Globals {
  bool deterministic = false;
  std::uint64_t seed = 0;
  int threads = 0;
};

struct TrainFlags {
  std::vector<std::string> data;
  std::string out;
  std::size_t features = 0;
  std::size_t k = 0;
  double lr = 1e-3;
  std::size_t batch = 256;
  std::uint64_t samples = 0;
  double l1 = 0.0;
  std::uint64_t resample_interval = 0;
  std::uint64_t resample_window = 0;
  std::uint64_t resample_until = 0;
  double resample_scale = 0.2;
  std::uint64_t warmup = 0;
  std::uint64_t eval_interval = 0;
  std::vector<std::string> eval_general;
  std::vector<std::string> eval_domain;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--data", f.data, "Training shard files")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "Output checkpoint path")->required();
  cmd->add_option("--k", f.k, "Batch-topk k (0 = command default)");
  cmd->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--batch", f.batch, "Batch size")->capture_default_str();
  cmd->add_option("--samples", f.samples, "Samples to consume, cycling the shards (0 = one pass)");
  cmd->add_option("--l1", f.l1, "L1 coefficient")->capture_default_str();
  cmd->add_option("--resample-interval", f.resample_interval, "Dead-feature check interval in samples (0 = off)");
  cmd->add_option("--resample-window", f.resample_window, "Inactivity window in samples");
  cmd->add_option("--resample-until", f.resample_until, "No resampling after this many samples (0 = no cutoff)");
  cmd->add_option("--resample-scale", f.resample_scale, "Encoder scale of resampled features")->capture_default_str();
  cmd->add_option("--warmup-samples", f.warmup, "Linear learning-rate warmup length");
  cmd->add_option("--eval-interval", f.eval_interval, "Samples between dynamics records (0 = off)");
  cmd->add_option("--eval-general", f.eval_general, "General-domain shards scored in the dynamics log")
      ->check(CLI::ExistingFile);
  cmd->add_option("--eval-domain", f.eval_domain, "Domain shards scored in the dynamics log")->check(CLI::ExistingFile);
}

// Everything one command run needs to record its manifest.
class Run {
 public:
  Run(const Globals& g, std::string command) {
    if (g.deterministic) set_deterministic_mode(true);
    if (g.threads > 0) set_worker_count(g.threads);
    manifest_.command = std::move(command);
    manifest_.seed = g.seed;
    manifest_.deterministic = g.deterministic;
    manifest_.started = report_timestamp();
  }

  void inputs(const std::vector<std::string>& paths) {
    for (const auto& p : paths) manifest_.add_input(p);
  }
  void input(const std::string& path) { manifest_.add_input(path); }
  void output(const std::string& path) { manifest_.outputs.push_back(path); }
  void config(json c) { manifest_.config = std::move(c); }

  /// Manifest next to a single output file.
  void finish_file(const std::string& out_path) {
    manifest_.finished = report_timestamp();
    manifest_.write_file(out_path + ".manifest.json");
  }
  /// Manifest inside an output directory.
  void finish_dir(const std::string& dir) {
    manifest_.finished = report_timestamp();
    manifest_.write(dir);
  }

 private:
  RunManifest manifest_;
};

std::string command_line(int argc, char** argv) {
  std::string out;
  for (int i = 0; i < argc; ++i) {
    if (i) out += ' ';
    out += argv[i];
  }
  return out;
}

std::uint64_t row_count(const std::vector<std::string>& paths) {
  std::uint64_t n = 0;
  for (const auto& p : paths) n += inspect_shard(p).n;
  return n;
}

Matrix load_rows(const std::vector<std::string>& paths) {
  ShardStream s(paths);
  return collect(s);
}

TrainConfig train_config(const TrainFlags& f, const Globals& g) {
  TrainConfig c;
  c.learning_rate = f.lr;
  c.batch_size = f.batch;
  c.total_samples = f.samples != 0 ? f.samples : row_count(f.data);
  c.l1_coefficient = f.l1;
  c.k = f.k;
  c.resample_interval = f.resample_interval;
  c.resample_window = f.resample_window != 0 ? f.resample_window : f.resample_interval;
  c.resample_until = f.resample_until;
  c.resample_encoder_scale = f.resample_scale;
  c.warmup_samples = f.warmup;
  c.eval_interval = f.eval_interval;
  c.seed = g.seed;
  c.deterministic = g.deterministic;
  return c;
}

struct EvalData {
  Matrix general;
  Matrix domain;
  EvalSets sets() const {
    return {general.empty() ? nullptr : &general, domain.empty() ? nullptr : &domain};
  }
};

EvalData eval_data(const TrainFlags& f, Run& run) {
  EvalData e;
  if (!f.eval_general.empty()) {
    e.general = load_rows(f.eval_general);
    run.inputs(f.eval_general);
  }
  if (!f.eval_domain.empty()) {
    e.domain = load_rows(f.eval_domain);
    run.inputs(f.eval_domain);
  }
  return e;
}

void save_trained(const TrainResult& r, const TrainFlags& f, const std::string& model, Run& run,
                  const json& extra = json::object()) {
  json prov = {{"model", model}, {"samples_seen", r.samples_seen}, {"resampled_features", r.resampled_features}};
  prov.update(extra);
  save_checkpoint(f.out, r.params, prov);
  run.output(f.out);
  if (!r.log.records.empty()) {
    const std::string path = f.out + ".dynamics.csv";
    r.log.write_csv(path);
    run.output(path);
  }
  for (const auto& w : r.log.warnings) std::cerr << "warning: " << w << '\n';
  run.finish_file(f.out);
  std::cout << "wrote " << f.out << " (" << r.params.dict_size() << " features, " << r.samples_seen
            << " samples)\n";
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("not a list of non-negative integers: '" + s + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

DomainMix parse_mix(const std::string& s) {
  DomainMix mix;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto colon = part.find(':');
    if (colon == std::string::npos) {
      mix.parts.emplace_back(part, 1.0);
    } else {
      try {
        mix.parts.emplace_back(part.substr(0, colon), std::stod(part.substr(colon + 1)));
      } catch (const std::exception&) {
        throw ConfigError("bad mix fraction in '" + part + "'");
      }
    }
  }
  return mix;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

PlantedWorld load_world(const std::string& path) {
  const json j = read_json_file(path);
  try {
    return build_world(j.at("spec").get<WorldSpec>(), j.at("seed").get<std::uint64_t>());
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

BoostStack load_stack(const std::string& base, const std::vector<std::string>& residuals, Run& run) {
  run.input(base);
  BoostStack stack(load_checkpoint(base).params);
  for (const auto& r : residuals) {
    run.input(r);
    stack.add_residual(fs::path(r).stem().string(), load_checkpoint(r).params);
  }
  return stack;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAE Boost: base sparse autoencoders plus residual SAEs for domain adaptation", "saeboost"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  Globals g;
  app.add_flag("--deterministic", g.deterministic, "Pin report timestamps; outputs are bitwise reproducible");
  app.add_option("--seed", g.seed, "Run seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker cap (overrides SAEBOOST_THREADS)");
  const std::string cmdline = command_line(argc, argv);

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Planted-dictionary data")->require_subcommand(1);
  std::string world_spec_path, world_out, dictionary_out;
  auto* synth_world = synth->add_subcommand("world", "Build a planted world");
  synth_world->add_option("--spec", world_spec_path, "World spec JSON (defaults when omitted)")->check(CLI::ExistingFile);
  synth_world->add_option("--out", world_out, "Output world JSON")->required();
  synth_world->add_option("--dictionary-out", dictionary_out, "Also write every planted column as a shard row");

  std::string gen_world, gen_mix = "general", gen_out;
  std::size_t gen_n = 0;
  auto* synth_gen = synth->add_subcommand("gen", "Sample an activation shard");
  synth_gen->add_option("--world", gen_world, "World JSON from `synth world`")->required()->check(CLI::ExistingFile);
  synth_gen->add_option("--mix", gen_mix, "Domain id or id:fraction list, e.g. dom-a:0.5,general:0.5")
      ->capture_default_str();
  synth_gen->add_option("--n", gen_n, "Rows")->required()->check(CLI::PositiveNumber);
  synth_gen->add_option("--out", gen_out, "Output shard")->required();

  // train ------------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "Train a model")->require_subcommand(1);
  TrainFlags tf_base, tf_boost, tf_ext, tf_stitch, tf_ft;
  auto* train_base = train_cmd->add_subcommand("base", "Base SAE on general data");
  add_train_flags(train_base, tf_base);
  tf_base.features = 512;
  train_base->add_option("--features", tf_base.features, "Dictionary size")->capture_default_str();

  std::string boost_base;
  std::vector<std::string> boost_prior;
  auto* train_boost_cmd = train_cmd->add_subcommand("boost", "Residual SAE on a frozen stack's error");
  add_train_flags(train_boost_cmd, tf_boost);
  train_boost_cmd->add_option("--base", boost_base, "Base checkpoint")->required()->check(CLI::ExistingFile);
  train_boost_cmd->add_option("--residual", boost_prior, "Residuals already in the frozen stack")
      ->check(CLI::ExistingFile);
  train_boost_cmd->add_option("--features", tf_boost.features, "Residual dictionary size (0 = base F / 8)");

  std::string ext_base, ext_init = "most-active", ext_ranking = "magnitude";
  std::size_t ext_probe = 100000;
  auto* train_ext = train_cmd->add_subcommand("extended", "Extended SAE baseline");
  add_train_flags(train_ext, tf_ext);
  train_ext->add_option("--base", ext_base, "Base checkpoint (batch-topk)")->required()->check(CLI::ExistingFile);
  train_ext->add_option("--features", tf_ext.features, "Features to add")->required();
  train_ext->add_option("--init", ext_init, "most-active or random")
      ->check(CLI::IsMember({"most-active", "random"}))
      ->capture_default_str();
  train_ext->add_option("--ranking", ext_ranking, "Donor ranking: magnitude or frequency")
      ->check(CLI::IsMember({"magnitude", "frequency"}))
      ->capture_default_str();
  train_ext->add_option("--probe-samples", ext_probe, "Rows used to rank donors")->capture_default_str();

  std::string stitch_base, stitch_finetuned;
  auto* train_stitch = train_cmd->add_subcommand("stitch", "SAE stitching baseline");
  add_train_flags(train_stitch, tf_stitch);
  train_stitch->add_option("--base", stitch_base, "Original checkpoint")->required()->check(CLI::ExistingFile);
  train_stitch->add_option("--features", tf_stitch.features, "Features to stitch in")->required();
  train_stitch->add_option("--finetuned", stitch_finetuned, "Reuse this fine-tuned checkpoint instead of training")
      ->check(CLI::ExistingFile);

  std::string ft_base;
  auto* train_ft = train_cmd->add_subcommand("finetune", "Full fine-tuning baseline");
  add_train_flags(train_ft, tf_ft);
  train_ft->add_option("--base", ft_base, "Base checkpoint")->required()->check(CLI::ExistingFile);

  // calibrate --------------------------------------------------------------
  std::string cal_model, cal_out, cal_inherit;
  std::vector<std::string> cal_data;
  double cal_alpha = 0.01;
  std::size_t cal_prefix = 0, cal_batch = 4096;
  auto* calibrate = app.add_subcommand("calibrate", "Convert batch-topk to jumpReLU thresholds");
  calibrate->add_option("--model", cal_model, "Batch-topk checkpoint")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--data", cal_data, "Calibration shards")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--alpha", cal_alpha, "Quantile of kept pre-activations")->capture_default_str();
  calibrate->add_option("--batch", cal_batch, "Batch-topk batch size during calibration")->capture_default_str();
  calibrate->add_option("--inherit", cal_inherit, "JumpReLU checkpoint whose leading thresholds are kept")
      ->check(CLI::ExistingFile);
  calibrate->add_option("--frozen-prefix", cal_prefix, "Features taken from --inherit (0 = its dictionary size)");
  calibrate->add_option("--out", cal_out, "Output checkpoint")->required();

  // eval -------------------------------------------------------------------
  std::string ev_stack, ev_out, ev_model = "stack", ev_dataset;
  std::vector<std::string> ev_residuals, ev_data;
  std::size_t ev_batch = 4096;
  auto* eval_cmd = app.add_subcommand("eval", "EV and L0 of a stack on a dataset");
  eval_cmd->add_option("--stack", ev_stack, "Base checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--residual", ev_residuals, "Residual checkpoints in stack order")->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev_data, "Evaluation shards")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--model-id", ev_model, "Model id in the report")->capture_default_str();
  eval_cmd->add_option("--dataset-id", ev_dataset, "Dataset id (default: the first shard's domain tag)");
  eval_cmd->add_option("--batch", ev_batch, "Evaluation batch size")->capture_default_str();
  eval_cmd->add_option("--out", ev_out, "Report directory")->required();

  // analyze ----------------------------------------------------------------
  auto* analyze = app.add_subcommand("analyze", "Feature analyses")->require_subcommand(1);
  std::string sim_new, sim_base, sim_out;
  long sim_first = -1;
  auto* sim = analyze->add_subcommand("sim", "Max-cosine similarity of new features to a base");
  sim->add_option("--new", sim_new, "Adapted checkpoint")->required()->check(CLI::ExistingFile);
  sim->add_option("--base", sim_base, "Base checkpoint")->required()->check(CLI::ExistingFile);
  sim->add_option("--first", sim_first,
                  "First feature of --new to compare (default: base size when --new is larger, else 0)");
  sim->add_option("--out", sim_out, "Report directory")->required();

  // sweep ------------------------------------------------------------------
  auto* sweep = app.add_subcommand("sweep", "Parameter sweeps")->require_subcommand(1);
  std::string sw_base, sw_values = "4,8,16,32", sw_out;
  std::vector<std::string> sw_general, sw_domain, sw_cal;
  double sw_alpha = 0.01;
  TrainFlags tf_sweep;
  auto* sweep_k = sweep->add_subcommand("k", "Residual top-k sweep");
  add_train_flags(sweep_k, tf_sweep);
  sweep_k->remove_option(sweep_k->get_option("--out"));
  sweep_k->remove_option(sweep_k->get_option("--k"));
  sweep_k->add_option("--out", sw_out, "Output directory")->required();
  sweep_k->add_option("--base", sw_base, "Base checkpoint")->required()->check(CLI::ExistingFile);
  sweep_k->add_option("--values", sw_values, "Comma-separated k values")->capture_default_str();
  sweep_k->add_option("--features", tf_sweep.features, "Residual dictionary size (0 = base F / 8)");
  sweep_k->add_option("--general", sw_general, "General evaluation shards")->required()->check(CLI::ExistingFile);
  sweep_k->add_option("--domain", sw_domain, "Domain evaluation shards")->required()->check(CLI::ExistingFile);
  sweep_k->add_option("--calibration", sw_cal, "Calibrate each residual on these shards")->check(CLI::ExistingFile);
  sweep_k->add_option("--alpha", sw_alpha, "Calibration quantile")->capture_default_str();

  // repro ------------------------------------------------------------------
  auto* repro = app.add_subcommand("repro", "End-to-end reproductions")->require_subcommand(1);
  std::string rp_spec, rp_out;
  std::uint64_t rp_samples = 0;
  std::size_t rp_seeds = 0;
  auto* paper = repro->add_subcommand("paper-pattern", "Synthetic pipeline with acceptance checks");
  paper->add_option("--spec", rp_spec, "Pipeline config JSON (defaults when omitted)")->check(CLI::ExistingFile);
  paper->add_option("--samples", rp_samples, "Training samples per model (overrides --spec)");
  paper->add_option("--seeds", rp_seeds, "Number of seeds (overrides --spec)");
  paper->add_option("--out", rp_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    const json resolved = JsonConfig::resolve(&app, true);

    if (synth_world->parsed()) {
      Run run(g, cmdline);
      run.config(resolved);
      WorldSpec spec;
      if (!world_spec_path.empty()) {
        run.input(world_spec_path);
        try {
          spec = read_json_file(world_spec_path).get<WorldSpec>();
        } catch (const json::exception& e) {
          throw ConfigError(world_spec_path + ": " + e.what());
        }
      }
      const PlantedWorld world = build_world(spec, g.seed);
      atomic_write(world_out, json{{"spec", world.spec}, {"seed", g.seed}}.dump(2) + "\n");
      run.output(world_out);
      if (!dictionary_out.empty()) {
        std::size_t cols = world.general.cols();
        for (const auto& m : world.domains) cols += m.cols();
        Matrix rows(cols, world.spec.d);
        std::size_t r = 0;
        std::string notes = "general:" + std::to_string(world.general.cols());
        auto put = [&](const Matrix& m) {
          for (std::size_t c = 0; c < m.cols(); ++c, ++r) {
            for (std::size_t i = 0; i < m.rows(); ++i) rows(r, i) = m(i, c);
          }
        };
        put(world.general);
        for (std::size_t i = 0; i < world.domains.size(); ++i) {
          put(world.domains[i]);
          notes += "," + world.spec.domains[i].id + ":" + std::to_string(world.domains[i].cols());
        }
        write_shard(dictionary_out, rows, {"planted-dictionary", "synthetic", "", notes});
        run.output(dictionary_out);
      }
      run.finish_file(world_out);
      std::cout << "wrote " << world_out << '\n';
    } else if (synth_gen->parsed()) {
      Run run(g, cmdline);
      run.config(resolved);
      run.input(gen_world);
      const PlantedWorld world = load_world(gen_world);
      const ActivationShard shard = sample_shard(world, parse_mix(gen_mix), gen_n, g.seed);
      write_shard(gen_out, shard.data, shard.meta);
      run.output(gen_out);
      run.finish_file(gen_out);
      std::cout << "wrote " << gen_out << " (" << gen_n << " rows, d=" << world.spec.d << ")\n";
    } else if (train_base->parsed()) {
      Run run(g, cmdline);
      run.config(resolved);
      run.inputs(tf_base.data);
      const EvalData ed = eval_data(tf_base, run);
      ShardStream data(tf_base.data, tf_base.batch);
      const Matrix warm = collect(data, 4096);
      data.rewind();
      CyclingSource stream(data);
      TrainConfig c = train_config(tf_base, g);
      if (c.k == 0) c.k = 8;
      const SaeParams init =
          init_params(data.dim(), tf_base.features, SaeRole::kBase, derive_seed(g.seed, 2), c.k, &warm);
      save_trained(train(init, stream, c, TrainTarget::direct(), ed.sets()), tf_base, "base", run);
    } else if (train_boost_cmd->parsed()) {
      Run run(g, cmdline);
      run.config(resolved);
      run.inputs(tf_boost.data);
      auto frozen = std::make_shared<const BoostStack>(load_stack(boost_base, boost_prior, run));
      const EvalData ed = eval_data(tf_boost, run);
      ShardStream data(tf_boost.data, tf_boost.batch);
      CyclingSource stream(data);
      const TrainResult r = train_boost(frozen, stream, train_config(tf_boost, g),
                                        {tf_boost.features, derive_seed(g.seed, 5)}, ed.sets());
      save_trained(r, tf_boost, "residual", run);
    } else if (train_ext->parsed()) {
      Run run(g, cmdline);
      run.config(resolved);
      run.input(ext_base);
      run.inputs(tf_ext.data);
      const SaeParams base = load_checkpoint(ext_base).params;
      const EvalData ed = eval_data(tf_ext, run);
      ShardStream data(tf_ext.data, tf_ext.batch);
      CyclingSource stream(data);
      ExtendOptions eo;
      eo.probe_samples = ext_probe;
      eo.ranking = ext_ranking == "frequency" ? ActivityRanking::kFrequency : ActivityRanking::kMeanMagnitude;
      eo.seed = derive_seed(g.seed, 7);
      const ExtendInit init = ext_init == "random" ? ExtendInit::kRandom : ExtendInit::kMostActive;
      const TrainResult r = train_extended(base, stream, init, tf_ext.features, train_config(tf_ext, g), eo, ed.sets());
      save_trained(r, tf_ext, "extended-" + ext_init, run, {{"base_features", base.dict_size()}});
    } else if (train_stitch->parsed()) {
      Run run(g, cmdline);
      run.config(resolved);
      run.input(stitch_base);
      run.inputs(tf_stitch.data);
      const SaeParams base = load_checkpoint(stitch_base).params;
      StitchResult st;
      if (!stitch_finetuned.empty()) {
        run.input(stitch_finetuned);
        st = stitch_from_finetuned(base, load_checkpoint(stitch_finetuned).params, tf_stitch.features);
      } else {
        const EvalData ed = eval_data(tf_stitch, run);
        ShardStream data(tf_stitch.data, tf_stitch.batch);
        CyclingSource stream(data);
        st = train_stitching(base, stream, tf_stitch.features, train_config(tf_stitch, g), ed.sets());
      }
      TrainResult r = st.finetune;
      r.params = st.params;
      json sel = json::array();
      for (std::size_t f : st.selection.features) sel.push_back(f);
      save_trained(r, tf_stitch, "stitching", run, {{"base_features", base.dict_size()}, {"selected", sel}});
    } else if (train_ft->parsed()) {
      Run run(g, cmdline);
      run.config(resolved);
      run.input(ft_base);
      run.inputs(tf_ft.data);
      const SaeParams base = load_checkpoint(ft_base).params;
      const EvalData ed = eval_data(tf_ft, run);
      ShardStream data(tf_ft.data, tf_ft.batch);
      CyclingSource stream(data);
      save_trained(train_full_finetune(base, stream, train_config(tf_ft, g), ed.sets()), tf_ft, "full-finetune", run);
    } else if (calibrate->parsed()) {
      Run run(g, cmdline);
      run.config(resolved);
      run.input(cal_model);
      run.inputs(cal_data);
      const Checkpoint model = load_checkpoint(cal_model);
      CalibrationOptions opts;
      opts.alpha = cal_alpha;
      opts.batch_size = cal_batch;
      if (!cal_inherit.empty()) {
        run.input(cal_inherit);
        const SaeParams donor = load_checkpoint(cal_inherit).params;
        const auto* jr = std::get_if<JumpRelu>(&donor.activation);
        if (jr == nullptr) throw ConfigError("--inherit must be a jumpReLU checkpoint");
        opts.frozen_prefix = cal_prefix != 0 ? cal_prefix : donor.dict_size();
        opts.inherited = jr->thresholds;
      } else if (cal_prefix != 0) {
        throw ConfigError("--frozen-prefix needs --inherit");
      }
      ShardStream data(cal_data, cal_batch);
      const SaeParams out = calibrate_thresholds(model.params, data, opts);
      json prov = model.provenance;
      prov["calibration"] = {{"alpha", cal_alpha}, {"rows", data.total_rows()}, {"frozen_prefix", opts.frozen_prefix}};
      save_checkpoint(cal_out, out, prov);
      run.output(cal_out);
      run.finish_file(cal_out);
      std::cout << "wrote " << cal_out << '\n';
    } else if (eval_cmd->parsed()) {
      Run run(g, cmdline);
      run.config(resolved);
      const BoostStack stack = load_stack(ev_stack, ev_residuals, run);
      run.inputs(ev_data);
      const std::string dataset = !ev_dataset.empty() ? ev_dataset : read_shard_metadata(ev_data.front()).domain_id;
      ShardStream data(ev_data, ev_batch);
      const EvalResult r = evaluate(stack, data, ev_batch);
      const EvalReport report = make_eval_report(stack, r, ev_model, dataset.empty() ? "data" : dataset);
      for (const auto& p : write_eval_report(ev_out, report)) run.output(p);
      run.finish_dir(ev_out);
      std::cout << "EV " << r.ev << "  L0 " << r.mean_l0 << "  samples " << r.samples << '\n';
    } else if (sim->parsed()) {
      Run run(g, cmdline);
      run.config(resolved);
      run.input(sim_new);
      run.input(sim_base);
      const SaeParams added = load_checkpoint(sim_new).params;
      const SaeParams base = load_checkpoint(sim_base).params;
      std::size_t first = 0;
      if (sim_first >= 0) {
        first = static_cast<std::size_t>(sim_first);
      } else if (added.dict_size() > base.dict_size()) {
        first = base.dict_size();
      }
      const SimilarityReport rep = max_cosine_similarity(added, base, first);
      fs::create_directories(sim_out);
      const std::string jpath = (fs::path(sim_out) / "similarity.json").string();
      const std::string cpath = (fs::path(sim_out) / "similarity.csv").string();
      atomic_write(jpath, rep.to_json().dump(2) + "\n");
      std::ostringstream csv;
      rep.write_csv(csv);
      atomic_write(cpath, csv.str());
      run.output(jpath);
      run.output(cpath);
      run.finish_dir(sim_out);
      std::cout << "median max-cosine " << rep.median << "  mean " << rep.mean << '\n';
    } else if (sweep_k->parsed()) {
      Run run(g, cmdline);
      run.config(resolved);
      run.input(sw_base);
      run.inputs(tf_sweep.data);
      run.inputs(sw_general);
      run.inputs(sw_domain);
      run.inputs(sw_cal);
      const SaeParams base = load_checkpoint(sw_base).params;
      const Matrix general = load_rows(sw_general);
      const Matrix domain = load_rows(sw_domain);
      ShardStream data(tf_sweep.data, tf_sweep.batch);
      CyclingSource stream(data);
      std::unique_ptr<ShardStream> cal;
      SweepInputs in;
      in.domain_train = &stream;
      if (!sw_cal.empty()) {
        cal = std::make_unique<ShardStream>(sw_cal, 4096);
        in.calibration = cal.get();
      }
      in.general_eval = &general;
      in.domain_eval = &domain;
      in.residual_features = tf_sweep.features;
      in.alpha = sw_alpha;
      in.init_seed = derive_seed(g.seed, 5);
      TrainConfig c = train_config(tf_sweep, g);
      const auto rows = sweep_topk(base, parse_list(sw_values), c, in);
      fs::create_directories(sw_out);
      const std::string path = (fs::path(sw_out) / "sweep_k.csv").string();
      std::ostringstream csv;
      write_sweep_csv(csv, rows);
      atomic_write(path, csv.str());
      run.output(path);
      run.finish_dir(sw_out);
      std::cout << csv.str();
    } else if (paper->parsed()) {
      Run run(g, cmdline);
      ReproConfig rc;
      if (!rp_spec.empty()) {
        run.input(rp_spec);
        try {
          rc = read_json_file(rp_spec).get<ReproConfig>();
        } catch (const json::exception& e) {
          throw ConfigError(rp_spec + ": " + e.what());
        }
      }
      if (rp_samples != 0) rc.train_samples = rp_samples;
      if (rp_seeds != 0) rc.seeds = rp_seeds;
      json conf = resolved;
      conf["pipeline"] = rc;
      run.config(conf);
      const ReproResult result = run_paper_pattern(rc, g.seed, rp_out);
      for (const auto& f : list_files(rp_out)) {
        if (f != "manifest.json") run.output(f);
      }
      run.finish_dir(rp_out);
      std::cout << format_criteria(result.criteria);
      if (!result.all_passed()) {
        std::cerr << "acceptance: one or more criteria failed\n";
        return kExitAcceptance;
      }
    }
  } catch (const TrainingAborted& e) {
    std::cerr << "error: " << e.what() << " (after " << e.samples_seen() << " samples)\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
