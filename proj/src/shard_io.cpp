#include "saeboost/shard_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <sstream>

namespace saeboost {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void put_f32s(std::string& out, std::span<const float> values) {
  const std::size_t offset = out.size();
  out.resize(offset + values.size() * 4);
  if constexpr (std::endian::native == std::endian::little) {
    if (!values.empty()) std::memcpy(out.data() + offset, values.data(), values.size() * 4);
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(values[i]);
      for (int b = 0; b < 4; ++b) out[offset + 4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
    }
  }
}

void get_f32s(const char* src, std::span<float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!values.empty()) std::memcpy(values.data(), src, values.size() * 4);
  } else {
    const auto* p = reinterpret_cast<const unsigned char*>(src);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (!in && !in.eof()) throw IoError("read failed for " + path);
  return ss.str();
}

std::string shard_header_bytes(std::uint32_t d, std::uint64_t n) {
  std::string out(kShardMagic, 4);
  put_u32(out, kShardVersion);
  put_u32(out, d);
  put_u64(out, n);
  put_u64(out, 0);
  return out;
}

ShardHeader parse_shard_header(const unsigned char* p, const std::string& path) {
  if (std::memcmp(p, kShardMagic, 4) != 0) throw FormatError(path + ": bad shard magic");
  ShardHeader h;
  h.version = get_u32(p + 4);
  if (h.version > kShardVersion) {
    throw VersionError(path + ": shard version " + std::to_string(h.version) + " is newer than " +
                       std::to_string(kShardVersion));
  }
  if (h.version == 0) throw FormatError(path + ": shard version 0");
  h.d = get_u32(p + 8);
  h.n = get_u64(p + 12);
  if (h.d == 0 || h.n == 0) throw FormatError(path + ": shard declares d=0 or n=0");
  return h;
}

std::string sidecar_path(const std::string& path) { return path + ".meta.json"; }

}  // namespace

void atomic_write(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

void write_shard(const std::string& path, const Matrix& data, const ShardMetadata& meta) {
  if (data.rows() == 0 || data.cols() == 0) throw DataError("refusing to write an empty shard to " + path);
  if (data.cols() > std::numeric_limits<std::uint32_t>::max()) throw DataError("shard width exceeds u32");
  std::string bytes = shard_header_bytes(static_cast<std::uint32_t>(data.cols()), data.rows());
  bytes.reserve(kShardHeaderBytes + data.size() * 4);
  put_f32s(bytes, data.values());
  atomic_write(path, bytes);

  nlohmann::json j = {{"domain_id", meta.domain_id},
                      {"source_model", meta.source_model},
                      {"layer", meta.layer},
                      {"notes", meta.notes},
                      {"d", data.cols()},
                      {"n", data.rows()}};
  atomic_write(sidecar_path(path), j.dump(2) + "\n");
}

ShardMetadata read_shard_metadata(const std::string& path) {
  ShardMetadata meta;
  const std::string side = sidecar_path(path);
  if (!std::filesystem::exists(side)) return meta;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(side));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side + ": " + e.what());
  }
  meta.domain_id = j.value("domain_id", "");
  meta.source_model = j.value("source_model", "");
  meta.layer = j.value("layer", "");
  meta.notes = j.value("notes", "");
  return meta;
}

ShardHeader inspect_shard(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  unsigned char buf[kShardHeaderBytes];
  in.read(reinterpret_cast<char*>(buf), kShardHeaderBytes);
  if (in.gcount() != static_cast<std::streamsize>(kShardHeaderBytes)) {
    throw FormatError(path + ": truncated header at byte offset " + std::to_string(in.gcount()));
  }
  ShardHeader h = parse_shard_header(buf, path);
  const auto size = std::filesystem::file_size(path);
  const std::uint64_t expected = kShardHeaderBytes + h.n * h.d * 4;
  if (size < expected) {
    throw FormatError(path + ": truncated payload at byte offset " + std::to_string(size) + ", expected " +
                      std::to_string(expected) + " bytes");
  }
  if (size > expected) {
    throw FormatError(path + ": " + std::to_string(size - expected) + " trailing bytes after payload");
  }
  return h;
}

ActivationShard read_shard(const std::string& path) {
  const ShardHeader h = inspect_shard(path);
  const std::string bytes = read_file(path);
  ActivationShard shard;
  shard.data = Matrix(h.n, h.d);
  get_f32s(bytes.data() + kShardHeaderBytes, shard.data.values());
  shard.meta = read_shard_metadata(path);
  return shard;
}

ShardStream::ShardStream(std::vector<std::string> paths, std::size_t batch_size)
    : paths_(std::move(paths)), batch_size_(batch_size) {
  if (paths_.empty()) throw DataError("shard stream needs at least one file");
  if (batch_size_ == 0) throw ConfigError("batch size must be >= 1");
  for (const auto& p : paths_) {
    headers_.push_back(inspect_shard(p));
    if (headers_.back().d != headers_.front().d) {
      throw DataError(p + ": width d=" + std::to_string(headers_.back().d) + " differs from " +
                      paths_.front() + " (d=" + std::to_string(headers_.front().d) + ")");
    }
    total_rows_ += headers_.back().n;
  }
  dim_ = headers_.front().d;
  open_current();
}

bool ShardStream::open_current() {
  in_.close();
  in_.clear();
  if (file_index_ >= paths_.size()) return false;
  in_.open(paths_[file_index_], std::ios::binary);
  if (!in_) throw IoError("cannot open " + paths_[file_index_]);
  in_.seekg(static_cast<std::streamoff>(kShardHeaderBytes));
  row_in_file_ = 0;
  return true;
}

void ShardStream::rewind() {
  file_index_ = 0;
  open_current();
}

Matrix ShardStream::next(std::size_t max_rows) {
  std::vector<float> values;
  std::size_t rows = 0;
  std::string buf;
  while (rows < max_rows && file_index_ < paths_.size()) {
    const ShardHeader& h = headers_[file_index_];
    if (row_in_file_ >= h.n) {
      ++file_index_;
      open_current();
      continue;
    }
    const auto take = static_cast<std::size_t>(std::min<std::uint64_t>(max_rows - rows, h.n - row_in_file_));
    buf.resize(take * dim_ * 4);
    in_.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in_.gcount() != static_cast<std::streamsize>(buf.size())) {
      const std::uint64_t offset = kShardHeaderBytes + row_in_file_ * dim_ * 4 +
                                   static_cast<std::uint64_t>(in_.gcount());
      throw FormatError(paths_[file_index_] + ": truncated payload at byte offset " + std::to_string(offset));
    }
    const std::size_t at = values.size();
    values.resize(at + take * dim_);
    get_f32s(buf.data(), std::span<float>(values.data() + at, take * dim_));
    rows += take;
    row_in_file_ += take;
  }
  if (rows == 0) return {};
  return Matrix(rows, dim_, std::move(values));
}

ShardStream read_shard_stream(std::vector<std::string> paths, std::size_t batch_size) {
  return ShardStream(std::move(paths), batch_size);
}

// ---------------------------------------------------------------------------

namespace {

struct TensorEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<const float> values;
};

std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

}  // namespace

std::string serialize_checkpoint(const SaeParams& params, const nlohmann::json& provenance) {
  params.validate();
  const std::size_t f = params.dict_size();
  const std::size_t d = params.input_dim();
  std::vector<TensorEntry> tensors = {
      {"W_enc", {f, d}, params.w_enc.values()},
      {"b_enc", {f}, params.b_enc},
      {"W_dec", {d, f}, params.w_dec.values()},
  };
  if (params.b_dec) tensors.push_back({"b_dec", {d}, *params.b_dec});

  nlohmann::json activation;
  if (const auto* topk = std::get_if<BatchTopK>(&params.activation)) {
    activation = {{"type", "batch_topk"}, {"k", topk->k}};
  } else {
    activation = {{"type", "jumprelu"}};
    tensors.push_back({"thresholds", {f}, std::get<JumpRelu>(params.activation).thresholds});
  }

  nlohmann::json header;
  header["format"] = "saeboost-checkpoint";
  header["role"] = to_string(params.role);
  header["d"] = d;
  header["F"] = f;
  header["activation"] = activation;
  header["provenance"] = provenance;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& t : tensors) list.push_back({{"name", t.name}, {"shape", t.shape}});
  header["tensors"] = list;

  const std::string text = header.dump();
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out += text;
  for (const auto& t : tensors) put_f32s(out, t.values);
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16) throw FormatError(origin + ": truncated checkpoint header");
  if (std::memcmp(p, kCheckpointMagic, 4) != 0) throw FormatError(origin + ": bad checkpoint magic");
  const std::uint32_t version = get_u32(p + 4);
  if (version > kCheckpointVersion) {
    throw VersionError(origin + ": checkpoint version " + std::to_string(version) +
                       " is newer than this reader (" + std::to_string(kCheckpointVersion) + ")");
  }
  if (version == 0) throw FormatError(origin + ": checkpoint version 0");
  const std::uint64_t header_len = get_u64(p + 8);
  if (header_len > bytes.size() - 16) throw FormatError(origin + ": header length exceeds file size");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin + ": malformed header JSON: " + e.what());
  }

  Checkpoint ck;
  try {
    const std::size_t f = header.at("F").get<std::size_t>();
    const std::size_t d = header.at("d").get<std::size_t>();
    SaeParams& sae = ck.params;
    sae.role = role_from_string(header.at("role").get<std::string>());
    ck.provenance = header.value("provenance", nlohmann::json::object());

    std::size_t offset = 16 + header_len;
    bool have_w_enc = false, have_b_enc = false, have_w_dec = false;
    std::vector<float> thresholds;
    bool have_thresholds = false;
    for (const auto& t : header.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      std::vector<std::size_t> expected;
      if (name == "W_enc") expected = {f, d};
      else if (name == "W_dec") expected = {d, f};
      else if (name == "b_enc" || name == "thresholds") expected = {f};
      else if (name == "b_dec") expected = {d};
      else throw FormatError(origin + ": unknown tensor '" + name + "'");
      if (shape != expected) throw FormatError(origin + ": tensor '" + name + "' shape disagrees with F/d");
      const std::size_t count = element_count(shape);
      if (offset + count * 4 > bytes.size()) {
        throw FormatError(origin + ": tensor '" + name + "' truncated at byte offset " + std::to_string(bytes.size()));
      }
      std::vector<float> values(count);
      get_f32s(bytes.data() + offset, values);
      offset += count * 4;
      if (name == "W_enc") {
        sae.w_enc = Matrix(f, d, std::move(values));
        have_w_enc = true;
      } else if (name == "W_dec") {
        sae.w_dec = Matrix(d, f, std::move(values));
        have_w_dec = true;
      } else if (name == "b_enc") {
        sae.b_enc = std::move(values);
        have_b_enc = true;
      } else if (name == "b_dec") {
        sae.b_dec = std::move(values);
      } else {
        thresholds = std::move(values);
        have_thresholds = true;
      }
    }
    if (offset != bytes.size()) {
      throw FormatError(origin + ": " + std::to_string(bytes.size() - offset) + " bytes beyond declared tensors");
    }
    if (!have_w_enc || !have_b_enc || !have_w_dec) throw FormatError(origin + ": missing weight tensors");
    if (sae.role == SaeRole::kResidual && sae.b_dec) {
      throw FormatError(origin + ": residual checkpoint carries a decoder bias");
    }

    const auto& act = header.at("activation");
    const std::string type = act.at("type").get<std::string>();
    if (type == "batch_topk") {
      sae.activation = BatchTopK{act.at("k").get<std::size_t>()};
    } else if (type == "jumprelu") {
      if (!have_thresholds) throw FormatError(origin + ": jumpReLU checkpoint without thresholds");
      sae.activation = JumpRelu{std::move(thresholds)};
    } else {
      throw FormatError(origin + ": unknown activation '" + type + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin + ": bad header field: " + e.what());
  }
  try {
    ck.params.validate();
  } catch (const Error& e) {
    throw FormatError(origin + ": " + e.what());
  }
  return ck;
}

void save_checkpoint(const std::string& path, const SaeParams& params, const nlohmann::json& provenance) {
  atomic_write(path, serialize_checkpoint(params, provenance));
}

Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path), path); }

}  // namespace saeboost
