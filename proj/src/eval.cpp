#include "saeboost/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <ostream>
#include <sstream>

#include "saeboost/boost.hpp"
#include "saeboost/shard_io.hpp"

namespace saeboost {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string report_timestamp() {
  std::time_t t = 0;
  if (deterministic_mode()) {
    if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(env, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string sanitize_id(const std::string& id) {
  std::string out = id;
  for (char& c : out) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' ||
                    c == '_' || c == '-';
    if (!ok) c = '_';
  }
  return out.empty() ? "unnamed" : out;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& [name, l0] : component_l0) comps.push_back({{"component", name}, {"mean_l0", l0}});
  return {{"dataset_id", dataset_id}, {"model_id", model_id}, {"ev", ev},
          {"mean_l0", mean_l0},       {"samples", samples},   {"component_l0", comps},
          {"timestamp", timestamp}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.dataset_id = j.at("dataset_id").get<std::string>();
  r.model_id = j.at("model_id").get<std::string>();
  r.ev = j.at("ev").get<double>();
  r.mean_l0 = j.at("mean_l0").get<double>();
  r.samples = j.at("samples").get<std::size_t>();
  for (const auto& c : j.at("component_l0")) {
    r.component_l0.emplace_back(c.at("component").get<std::string>(), c.at("mean_l0").get<double>());
  }
  r.timestamp = j.value("timestamp", "");
  return r;
}

void EvalReport::write_csv(std::ostream& os) const {
  os << "model_id,dataset_id,ev,mean_l0,samples";
  for (const auto& c : component_l0) os << ",l0_" << c.first;
  os << ",timestamp\n";
  os << model_id << ',' << dataset_id << ',' << fmt(ev) << ',' << fmt(mean_l0) << ',' << samples;
  for (const auto& c : component_l0) os << ',' << fmt(c.second);
  os << ',' << timestamp << '\n';
}

EvalReport make_eval_report(const BoostStack& stack, const EvalResult& result, std::string model_id,
                            std::string dataset_id) {
  EvalReport r;
  r.model_id = std::move(model_id);
  r.dataset_id = std::move(dataset_id);
  r.ev = result.ev;
  r.mean_l0 = result.mean_l0;
  r.samples = result.samples;
  for (std::size_t c = 0; c < result.component_l0.size(); ++c) {
    const std::string name = c == 0 ? "base" : stack.residuals().at(c - 1).domain_id;
    r.component_l0.emplace_back(name, result.component_l0[c]);
  }
  r.timestamp = report_timestamp();
  return r;
}

std::vector<std::string> write_eval_report(const std::string& dir, const EvalReport& report) {
  std::filesystem::create_directories(dir);
  const std::string stem =
      (std::filesystem::path(dir) / ("eval_" + sanitize_id(report.model_id) + "_" + sanitize_id(report.dataset_id)))
          .string();
  atomic_write(stem + ".json", report.to_json().dump(2) + "\n");
  std::ostringstream csv;
  report.write_csv(csv);
  atomic_write(stem + ".csv", csv.str());
  return {stem + ".json", stem + ".csv"};
}

// ---------------------------------------------------------------------------

nlohmann::json SimilarityReport::to_json() const {
  nlohmann::json cdf_json = nlohmann::json::array();
  for (const auto& [v, p] : cdf) cdf_json.push_back({v, p});
  return {{"max_cosine", max_cosine}, {"best_match", best_match}, {"negative", negative},
          {"bins", kSimilarityBins},  {"histogram", histogram},   {"cdf", cdf_json},
          {"median", median},         {"mean", mean}};
}

void SimilarityReport::write_csv(std::ostream& os) const {
  os << "feature,max_cosine,best_match\n";
  for (std::size_t i = 0; i < max_cosine.size(); ++i) {
    os << i << ',' << fmt(max_cosine[i]) << ',' << best_match[i] << '\n';
  }
}

namespace {

std::vector<std::vector<double>> unit_columns(const Matrix& m, const char* what) {
  const std::size_t d = m.rows();
  std::vector<std::vector<double>> cols(m.cols(), std::vector<double>(d));
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double n2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      cols[c][i] = m(i, c);
      n2 += cols[c][i] * cols[c][i];
    }
    if (!(n2 > 0.0)) throw NumericError(std::string(what) + " feature " + std::to_string(c) + " has zero norm");
    const double inv = 1.0 / std::sqrt(n2);
    for (double& v : cols[c]) v *= inv;
  }
  return cols;
}

Matrix columns_from(const Matrix& m, std::size_t first) {
  if (first > m.cols()) throw ShapeError("column range out of bounds");
  Matrix out(m.rows(), m.cols() - first);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t c = first; c < m.cols(); ++c) out(i, c - first) = m(i, c);
  }
  return out;
}

}  // namespace

SimilarityReport max_cosine_similarity(const Matrix& added, const Matrix& base) {
  if (added.rows() != base.rows()) throw ShapeError("similarity: decoder widths differ");
  if (base.cols() == 0) throw ShapeError("similarity: empty base dictionary");
  const auto a = unit_columns(added, "new");
  const auto b = unit_columns(base, "base");
  SimilarityReport r;
  r.histogram.assign(kSimilarityBins, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    double best = -2.0;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < b.size(); ++j) {
      double c = 0.0;
      for (std::size_t t = 0; t < a[i].size(); ++t) c += a[i][t] * b[j][t];
      if (c > best) {
        best = c;
        arg = j;
      }
    }
    best = std::clamp(best, -1.0, 1.0);
    r.max_cosine.push_back(best);
    r.best_match.push_back(arg);
    if (best < 0.0) r.negative.push_back(i);
    const double v = std::max(best, 0.0);
    const auto bin = std::min(kSimilarityBins - 1, static_cast<std::size_t>(v * kSimilarityBins));
    ++r.histogram[bin];
  }
  if (!r.max_cosine.empty()) {
    std::vector<double> sorted = r.max_cosine;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (i + 1 < n && sorted[i + 1] == sorted[i]) continue;
      r.cdf.emplace_back(sorted[i], static_cast<double>(i + 1) / static_cast<double>(n));
    }
    r.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    double sum = 0.0;
    for (double v : sorted) sum += v;
    r.mean = sum / static_cast<double>(n);
  }
  return r;
}

SimilarityReport max_cosine_similarity(const SaeParams& model, const SaeParams& base, std::size_t first) {
  return max_cosine_similarity(columns_from(model.w_dec, first), base.w_dec);
}

// ---------------------------------------------------------------------------

std::vector<SweepRow> sweep_topk(const SaeParams& base, const std::vector<std::size_t>& ks,
                                 const TrainConfig& config, const SweepInputs& inputs) {
  if (inputs.domain_train == nullptr || inputs.general_eval == nullptr || inputs.domain_eval == nullptr) {
    throw ConfigError("sweep needs a domain stream and both eval sets");
  }
  const std::size_t features =
      inputs.residual_features != 0 ? inputs.residual_features : default_residual_size(base.dict_size());
  for (std::size_t k : ks) {
    if (k < 1 || k > features) {
      throw ConfigError("sweep k=" + std::to_string(k) + " outside [1, " + std::to_string(features) + "]");
    }
  }
  auto frozen = std::make_shared<const BoostStack>(base);
  std::vector<SweepRow> rows;
  for (std::size_t k : ks) {
    TrainConfig c = config;
    c.k = k;
    inputs.domain_train->rewind();
    TrainResult tr = train_boost(frozen, *inputs.domain_train, c, {features, inputs.init_seed});
    SaeParams residual = std::move(tr.params);
    if (inputs.calibration != nullptr) {
      inputs.calibration->rewind();
      residual = calibrate_thresholds(residual, *inputs.calibration, {inputs.alpha, inputs.eval_batch, 0, {}});
    }
    BoostStack stack(base);
    stack.add_residual("sweep", residual);
    const EvalResult g = evaluate(stack, *inputs.general_eval, inputs.eval_batch);
    const EvalResult dm = evaluate(stack, *inputs.domain_eval, inputs.eval_batch);
    rows.push_back({k, g.ev, g.mean_l0, dm.ev, dm.mean_l0});
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "k,general_ev,general_l0,domain_ev,domain_l0\n";
  for (const auto& r : rows) {
    os << r.k << ',' << fmt(r.general_ev) << ',' << fmt(r.general_l0) << ',' << fmt(r.domain_ev) << ','
       << fmt(r.domain_l0) << '\n';
  }
}

void export_feature_embeddings(std::ostream& os,
                               const std::vector<std::pair<std::string, const SaeParams*>>& models) {
  std::size_t d = 0;
  for (const auto& m : models) {
    if (d == 0) d = m.second->input_dim();
    if (m.second->input_dim() != d) throw ShapeError("embedding export needs a common d");
  }
  os << "model_id,feature_id";
  for (std::size_t i = 0; i < d; ++i) os << ",v" << i;
  os << '\n';
  for (const auto& [id, sae] : models) {
    for (std::size_t f = 0; f < sae->dict_size(); ++f) {
      const auto u = unit_decoder_column(*sae, f);
      os << id << ',' << f;
      for (float v : u) os << ',' << fmt(v);
      os << '\n';
    }
  }
}

}  // namespace saeboost
