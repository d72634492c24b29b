#pragma once

// On-disk formats (all little-endian). See FORMATS.md.
//
// Activation shard:
//   "SAEA" | u32 version=1 | u32 d | u64 n | 8 zero bytes | n*d f32 row-major
//   sidecar metadata in <path>.meta.json
//
// Checkpoint:
//   "SAEC" | u32 version=1 | u64 header_len | header_len bytes UTF-8 JSON |
//   f32 tensor blobs in the order the header's "tensors" array lists them

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "saeboost/sae.hpp"
#include "saeboost/source.hpp"

namespace saeboost {

inline constexpr char kShardMagic[4] = {'S', 'A', 'E', 'A'};
inline constexpr char kCheckpointMagic[4] = {'S', 'A', 'E', 'C'};
inline constexpr std::uint32_t kShardVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kShardHeaderBytes = 28;

struct ShardMetadata {
  std::string domain_id;
  std::string source_model;
  std::string layer;
  std::string notes;

  friend bool operator==(const ShardMetadata&, const ShardMetadata&) = default;
};

struct ActivationShard {
  Matrix data;  // n x d
  ShardMetadata meta;
};

void write_shard(const std::string& path, const Matrix& data, const ShardMetadata& meta = {});
ActivationShard read_shard(const std::string& path);
/// Metadata from the sidecar; defaults when the sidecar is missing.
ShardMetadata read_shard_metadata(const std::string& path);

struct ShardHeader {
  std::uint32_t version = 0;
  std::uint32_t d = 0;
  std::uint64_t n = 0;
};

/// Validates magic, version, and payload length of one file.
ShardHeader inspect_shard(const std::string& path);

/// Streams rows of several shard files in file-then-row order. Every header
/// and payload length is validated at construction; memory use is one batch.
class ShardStream final : public BatchSource {
 public:
  explicit ShardStream(std::vector<std::string> paths, std::size_t batch_size = 4096);

  std::size_t dim() const override { return dim_; }
  Matrix next(std::size_t max_rows) override;
  void rewind() override;

  /// Next batch of the configured size; empty once every file is drained.
  Matrix next_batch() { return next(batch_size_); }

  std::uint64_t total_rows() const noexcept { return total_rows_; }

 private:
  bool open_current();

  std::vector<std::string> paths_;
  std::size_t batch_size_;
  std::vector<ShardHeader> headers_;
  std::size_t dim_ = 0;
  std::uint64_t total_rows_ = 0;
  std::size_t file_index_ = 0;
  std::uint64_t row_in_file_ = 0;
  std::ifstream in_;
};

/// Batches of `batch_size` rows over the files; the last one may be partial.
ShardStream read_shard_stream(std::vector<std::string> paths, std::size_t batch_size);

/// Free-form provenance recorded in the checkpoint header.
struct Checkpoint {
  SaeParams params;
  nlohmann::json provenance = nlohmann::json::object();
};

void save_checkpoint(const std::string& path, const SaeParams& params,
                     const nlohmann::json& provenance = nlohmann::json::object());
Checkpoint load_checkpoint(const std::string& path);

/// Bytes of a checkpoint as written by save_checkpoint.
std::string serialize_checkpoint(const SaeParams& params, const nlohmann::json& provenance);
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

/// Writes `bytes` to a temporary sibling and renames it over `path`.
void atomic_write(const std::string& path, const std::string& bytes);

}  // namespace saeboost
