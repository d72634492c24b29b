#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace saeboost {

/// Git blob id of a file: SHA-1 over "blob <size>\0" followed by the bytes.
std::string git_blob_hash(const std::string& path);
std::string git_blob_hash_bytes(const std::string& bytes);

struct ManifestInput {
  std::string path;
  std::string hash;
};

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::vector<ManifestInput> inputs;
  std::vector<std::string> outputs;
  std::string started;
  std::string finished;

  void add_input(const std::string& path);
  nlohmann::json to_json() const;
  /// Writes <dir>/manifest.json and returns its path.
  std::string write(const std::string& dir) const;
  /// Writes the manifest to an explicit file path.
  void write_file(const std::string& path) const;
};

}  // namespace saeboost
