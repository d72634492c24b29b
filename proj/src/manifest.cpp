#include "saeboost/manifest.hpp"

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "saeboost/error.hpp"
#include "saeboost/shard_io.hpp"

namespace saeboost {

std::string git_blob_hash_bytes(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  const bool ok = ctx != nullptr && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw IoError("SHA-1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    const unsigned char c = digest[i];
    out.push_back(hex[c >> 4]);
    out.push_back(hex[c & 15]);
  }
  return out;
}

std::string git_blob_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return git_blob_hash_bytes(bytes);
}

void RunManifest::add_input(const std::string& path) { inputs.push_back({path, git_blob_hash(path)}); }

nlohmann::json RunManifest::to_json() const {
  nlohmann::json in = nlohmann::json::array();
  for (const auto& i : inputs) in.push_back({{"path", i.path}, {"hash", i.hash}});
  return {{"command", command}, {"config", config},   {"seed", seed},         {"deterministic", deterministic},
          {"inputs", in},       {"outputs", outputs}, {"started", started}, {"finished", finished}};
}

std::string RunManifest::write(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
  write_file(path);
  return path;
}

void RunManifest::write_file(const std::string& path) const { atomic_write(path, to_json().dump(2) + "\n"); }

}  // namespace saeboost
