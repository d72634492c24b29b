#pragma once

// Planted-dictionary activation generator.
//
// A sample activates s_g general features (plus s_d features of one domain
// dictionary for domain samples) with amplitudes |N(mean, std)|:
//   x = D_gen z_gen + D_dom z_dom + mu* + N(0, sigma^2 I)

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "saeboost/shard_io.hpp"
#include "saeboost/source.hpp"

namespace saeboost {

struct DomainSpec {
  std::string id;
  std::size_t features = 32;
};

struct WorldSpec {
  std::size_t d = 64;
  std::size_t general_features = 256;
  std::vector<DomainSpec> domains = {{"dom-a", 32}, {"dom-b", 32}, {"dom-c", 32}};
  std::size_t general_active = 8;
  std::size_t domain_active = 4;
  double amplitude_mean = 1.0;
  double amplitude_std = 0.3;
  double noise_std = 0.05;
  /// Norm of the global offset mu* (direction drawn at random).
  double offset_norm = 0.5;
  /// Upper bound on |cos| between any general and any domain column.
  double max_cross_cosine = 0.5;
  std::size_t max_attempts = 10000;

  void validate() const;
};

void to_json(nlohmann::json& j, const WorldSpec& spec);
void from_json(const nlohmann::json& j, WorldSpec& spec);

struct PlantedWorld {
  WorldSpec spec;
  std::uint64_t seed = 0;
  Matrix general;               // d x F_g, unit columns
  std::vector<Matrix> domains;  // d x F_di, unit columns
  std::vector<float> offset;    // mu*, length d

  /// Index of a domain id; -1 for "general".
  int domain_index(const std::string& id) const;
};

PlantedWorld build_world(const WorldSpec& spec, std::uint64_t seed);

/// Fractions per domain id ("general" is the general-only pseudo-domain).
struct DomainMix {
  std::vector<std::pair<std::string, double>> parts;

  static DomainMix single(const std::string& id) { return {{{id, 1.0}}}; }
  void validate(const PlantedWorld& world) const;
  /// Tag used in shard metadata: the id for a single-domain mix, else "mixed".
  std::string tag() const;
};

/// What the generator drew for one sample.
struct SampleRecord {
  int domain = -1;  // -1 = general-only sample
  std::vector<std::uint32_t> general_ids;
  std::vector<float> general_amplitudes;
  std::vector<std::uint32_t> domain_ids;
  std::vector<float> domain_amplitudes;
};

/// Row i of a shard depends only on (world, mix, seed, i).
void generate_sample(const PlantedWorld& world, const DomainMix& mix, std::uint64_t seed,
                     std::uint64_t index, std::span<float> out, SampleRecord* record = nullptr);

ActivationShard sample_shard(const PlantedWorld& world, const DomainMix& mix, std::size_t n,
                             std::uint64_t seed, std::vector<SampleRecord>* log = nullptr);

/// Unbounded (or `limit`-row) stream of generated samples.
class SyntheticSource final : public BatchSource {
 public:
  SyntheticSource(const PlantedWorld& world, DomainMix mix, std::uint64_t seed, std::uint64_t limit = 0);

  std::size_t dim() const override { return world_->spec.d; }
  Matrix next(std::size_t max_rows) override;
  void rewind() override { cursor_ = 0; }

 private:
  const PlantedWorld* world_;
  DomainMix mix_;
  std::uint64_t seed_;
  std::uint64_t limit_;
  std::uint64_t cursor_ = 0;
};

struct FeatureMatch {
  double threshold = 0.8;
  /// Per planted column, the best signed cosine over learned columns.
  std::vector<double> best_cosine;
  std::vector<std::size_t> best_learned;
  /// Greedy one-to-one assignment (highest cosine pair first); -1 = unmatched.
  std::vector<long> greedy_learned;
  std::vector<double> greedy_cosine;
  double fraction_above = 0.0;
  double mean_best = 0.0;
};

/// Columns of both matrices are directions in R^d (d x n layouts).
FeatureMatch match_features(const Matrix& learned, const Matrix& planted, double threshold = 0.8);

}  // namespace saeboost
