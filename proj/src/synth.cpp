#include "saeboost/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace saeboost {

namespace {

constexpr std::uint64_t kWorldStream = 0x574f524c44ULL;  // "WORLD"

void random_unit(Rng& rng, std::span<double> out) {
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (double& v : out) {
      v = rng.normal();
      norm2 += v * v;
    }
  } while (norm2 == 0.0);
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& v : out) v *= inv;
}

// Floyd's algorithm: `count` distinct values from [0, n), returned ascending.
std::vector<std::uint32_t> choose_distinct(Rng& rng, std::size_t n, std::size_t count) {
  std::set<std::uint32_t> chosen;
  for (std::size_t j = n - count; j < n; ++j) {
    const auto t = static_cast<std::uint32_t>(rng.below(j + 1));
    if (!chosen.insert(t).second) chosen.insert(static_cast<std::uint32_t>(j));
  }
  return {chosen.begin(), chosen.end()};
}

}  // namespace

void WorldSpec::validate() const {
  if (d < 1 || general_features < 1) throw ConfigError("world needs d >= 1 and F_g >= 1");
  if (general_active > general_features) throw ConfigError("s_g exceeds F_g");
  std::set<std::string> ids;
  for (const auto& dom : domains) {
    if (dom.features < 1) throw ConfigError("domain '" + dom.id + "' has no features");
    if (domain_active > dom.features) throw ConfigError("s_d exceeds F_d of domain '" + dom.id + "'");
    if (dom.id.empty() || dom.id == "general") throw ConfigError("invalid domain id '" + dom.id + "'");
    if (!ids.insert(dom.id).second) throw ConfigError("duplicate domain id '" + dom.id + "'");
  }
  if (amplitude_std < 0.0 || noise_std < 0.0 || offset_norm < 0.0) {
    throw ConfigError("amplitude/noise/offset scales must be >= 0");
  }
  if (max_cross_cosine <= 0.0 || max_cross_cosine > 1.0) throw ConfigError("max_cross_cosine must lie in (0, 1]");
}

void to_json(nlohmann::json& j, const WorldSpec& s) {
  nlohmann::json doms = nlohmann::json::array();
  for (const auto& d : s.domains) doms.push_back({{"id", d.id}, {"features", d.features}});
  j = {{"d", s.d},
       {"general_features", s.general_features},
       {"domains", doms},
       {"general_active", s.general_active},
       {"domain_active", s.domain_active},
       {"amplitude_mean", s.amplitude_mean},
       {"amplitude_std", s.amplitude_std},
       {"noise_std", s.noise_std},
       {"offset_norm", s.offset_norm},
       {"max_cross_cosine", s.max_cross_cosine},
       {"max_attempts", s.max_attempts}};
}

void from_json(const nlohmann::json& j, WorldSpec& s) {
  WorldSpec def;
  s.d = j.value("d", def.d);
  s.general_features = j.value("general_features", def.general_features);
  if (j.contains("domains")) {
    s.domains.clear();
    for (const auto& d : j.at("domains")) {
      s.domains.push_back({d.at("id").get<std::string>(), d.value("features", std::size_t{32})});
    }
  }
  s.general_active = j.value("general_active", def.general_active);
  s.domain_active = j.value("domain_active", def.domain_active);
  s.amplitude_mean = j.value("amplitude_mean", def.amplitude_mean);
  s.amplitude_std = j.value("amplitude_std", def.amplitude_std);
  s.noise_std = j.value("noise_std", def.noise_std);
  s.offset_norm = j.value("offset_norm", def.offset_norm);
  s.max_cross_cosine = j.value("max_cross_cosine", def.max_cross_cosine);
  s.max_attempts = j.value("max_attempts", def.max_attempts);
}

int PlantedWorld::domain_index(const std::string& id) const {
  if (id == "general") return -1;
  for (std::size_t i = 0; i < spec.domains.size(); ++i) {
    if (spec.domains[i].id == id) return static_cast<int>(i);
  }
  throw ConfigError("unknown domain id '" + id + "'");
}

PlantedWorld build_world(const WorldSpec& spec, std::uint64_t seed) {
  spec.validate();
  PlantedWorld world;
  world.spec = spec;
  world.seed = seed;
  Rng rng(derive_seed(seed, kWorldStream));
  const std::size_t d = spec.d;

  std::vector<double> col(d);
  std::vector<std::vector<double>> general(spec.general_features);
  world.general = Matrix(d, spec.general_features);
  for (std::size_t f = 0; f < spec.general_features; ++f) {
    random_unit(rng, col);
    general[f] = col;
    for (std::size_t i = 0; i < d; ++i) world.general(i, f) = static_cast<float>(col[i]);
  }

  world.offset.assign(d, 0.0f);
  if (spec.offset_norm > 0.0) {
    random_unit(rng, col);
    for (std::size_t i = 0; i < d; ++i) world.offset[i] = static_cast<float>(col[i] * spec.offset_norm);
  }

  for (const auto& dom : spec.domains) {
    Matrix m(d, dom.features);
    for (std::size_t f = 0; f < dom.features; ++f) {
      std::size_t attempt = 0;
      while (true) {
        if (++attempt > spec.max_attempts) {
          throw ConfigError("could not place domain '" + dom.id + "' feature " + std::to_string(f) +
                            " within |cos| <= " + std::to_string(spec.max_cross_cosine) +
                            " of the general dictionary; use smaller dictionaries or a larger d");
        }
        random_unit(rng, col);
        bool ok = true;
        for (const auto& g : general) {
          const double c = std::inner_product(col.begin(), col.end(), g.begin(), 0.0);
          if (std::abs(c) > spec.max_cross_cosine) {
            ok = false;
            break;
          }
        }
        if (ok) break;
      }
      for (std::size_t i = 0; i < d; ++i) m(i, f) = static_cast<float>(col[i]);
    }
    world.domains.push_back(std::move(m));
  }

  return world;
}

void DomainMix::validate(const PlantedWorld& world) const {
  if (parts.empty()) throw ConfigError("domain mix is empty");
  double total = 0.0;
  for (const auto& [id, frac] : parts) {
    world.domain_index(id);
    if (frac < 0.0 || frac > 1.0) throw ConfigError("mix fraction for '" + id + "' outside [0, 1]");
    total += frac;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("mix fractions must sum to 1");
}

std::string DomainMix::tag() const { return parts.size() == 1 ? parts.front().first : "mixed"; }

void generate_sample(const PlantedWorld& world, const DomainMix& mix, std::uint64_t seed,
                     std::uint64_t index, std::span<float> out, SampleRecord* record) {
  const WorldSpec& spec = world.spec;
  const std::size_t d = spec.d;
  if (out.size() != d) throw ShapeError("sample buffer width != d");
  Rng rng(derive_seed(seed, index));

  int domain = -1;
  {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t pick = mix.parts.size() - 1;
    for (std::size_t i = 0; i < mix.parts.size(); ++i) {
      acc += mix.parts[i].second;
      if (u < acc) {
        pick = i;
        break;
      }
    }
    domain = world.domain_index(mix.parts[pick].first);
  }

  auto amplitude = [&] { return std::abs(rng.normal(spec.amplitude_mean, spec.amplitude_std)); };

  std::vector<double> x(d);
  for (std::size_t i = 0; i < d; ++i) x[i] = world.offset[i];

  const auto general_ids = choose_distinct(rng, spec.general_features, spec.general_active);
  std::vector<float> general_amps;
  general_amps.reserve(general_ids.size());
  for (std::uint32_t f : general_ids) {
    const auto a = static_cast<float>(amplitude());
    general_amps.push_back(a);
    for (std::size_t i = 0; i < d; ++i) x[i] += static_cast<double>(a) * world.general(i, f);
  }

  std::vector<std::uint32_t> domain_ids;
  std::vector<float> domain_amps;
  if (domain >= 0) {
    const Matrix& dict = world.domains[static_cast<std::size_t>(domain)];
    domain_ids = choose_distinct(rng, dict.cols(), spec.domain_active);
    for (std::uint32_t f : domain_ids) {
      const auto a = static_cast<float>(amplitude());
      domain_amps.push_back(a);
      for (std::size_t i = 0; i < d; ++i) x[i] += static_cast<double>(a) * dict(i, f);
    }
  }

  if (spec.noise_std > 0.0) {
    for (std::size_t i = 0; i < d; ++i) x[i] += spec.noise_std * rng.normal();
  }
  for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(x[i]);

  if (record != nullptr) {
    record->domain = domain;
    record->general_ids = general_ids;
    record->general_amplitudes = std::move(general_amps);
    record->domain_ids = std::move(domain_ids);
    record->domain_amplitudes = std::move(domain_amps);
  }
}

ActivationShard sample_shard(const PlantedWorld& world, const DomainMix& mix, std::size_t n,
                             std::uint64_t seed, std::vector<SampleRecord>* log) {
  if (n < 1) throw ConfigError("sample_shard needs n >= 1");
  mix.validate(world);
  ActivationShard shard;
  shard.data = Matrix(n, world.spec.d);
  if (log != nullptr) log->assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    generate_sample(world, mix, seed, i, shard.data.row(i), log != nullptr ? &(*log)[i] : nullptr);
  }
  shard.meta.domain_id = mix.tag();
  shard.meta.source_model = "synthetic";
  shard.meta.notes = "world_seed=" + std::to_string(world.seed) + " sample_seed=" + std::to_string(seed);
  return shard;
}

SyntheticSource::SyntheticSource(const PlantedWorld& world, DomainMix mix, std::uint64_t seed,
                                 std::uint64_t limit)
    : world_(&world), mix_(std::move(mix)), seed_(seed), limit_(limit) {
  mix_.validate(world);
}

Matrix SyntheticSource::next(std::size_t max_rows) {
  std::size_t rows = max_rows;
  if (limit_ > 0) rows = static_cast<std::size_t>(std::min<std::uint64_t>(rows, limit_ - cursor_));
  if (rows == 0) return {};
  Matrix out(rows, world_->spec.d);
  for (std::size_t r = 0; r < rows; ++r) generate_sample(*world_, mix_, seed_, cursor_ + r, out.row(r));
  cursor_ += rows;
  return out;
}

FeatureMatch match_features(const Matrix& learned, const Matrix& planted, double threshold) {
  if (learned.rows() != planted.rows()) throw ShapeError("match_features: dimension mismatch");
  const std::size_t d = planted.rows();
  auto unit_columns = [d](const Matrix& m) {
    std::vector<std::vector<double>> cols(m.cols(), std::vector<double>(d));
    for (std::size_t c = 0; c < m.cols(); ++c) {
      double n2 = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        cols[c][i] = m(i, c);
        n2 += cols[c][i] * cols[c][i];
      }
      const double inv = n2 > 0.0 ? 1.0 / std::sqrt(n2) : 0.0;
      for (double& v : cols[c]) v *= inv;
    }
    return cols;
  };
  const auto lu = unit_columns(learned);
  const auto pu = unit_columns(planted);

  FeatureMatch out;
  out.threshold = threshold;
  const std::size_t np = pu.size();
  const std::size_t nl = lu.size();
  std::vector<double> cos(np * nl);
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t l = 0; l < nl; ++l) {
      cos[p * nl + l] = std::inner_product(pu[p].begin(), pu[p].end(), lu[l].begin(), 0.0);
    }
  }
  out.best_cosine.assign(np, -1.0);
  out.best_learned.assign(np, 0);
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t l = 0; l < nl; ++l) {
      if (cos[p * nl + l] > out.best_cosine[p]) {
        out.best_cosine[p] = cos[p * nl + l];
        out.best_learned[p] = l;
      }
    }
  }

  std::vector<std::size_t> order(np * nl);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cos[a] > cos[b]; });
  out.greedy_learned.assign(np, -1);
  out.greedy_cosine.assign(np, 0.0);
  std::vector<bool> taken(nl, false);
  std::size_t assigned = 0;
  for (std::size_t idx : order) {
    if (assigned == std::min(np, nl)) break;
    const std::size_t p = idx / nl;
    const std::size_t l = idx % nl;
    if (out.greedy_learned[p] >= 0 || taken[l]) continue;
    out.greedy_learned[p] = static_cast<long>(l);
    out.greedy_cosine[p] = cos[idx];
    taken[l] = true;
    ++assigned;
  }

  std::size_t above = 0;
  double sum = 0.0;
  for (double c : out.best_cosine) {
    above += c >= threshold;
    sum += c;
  }
  out.fraction_above = np > 0 ? static_cast<double>(above) / static_cast<double>(np) : 0.0;
  out.mean_best = np > 0 ? sum / static_cast<double>(np) : 0.0;
  return out;
}

}  // namespace saeboost
