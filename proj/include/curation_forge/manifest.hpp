#pragma once

// Per-stage run manifests: what went in (content digests), the parameters
// and seed, what came out, warnings and wall time.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "curation_forge/error.hpp"
#include "json.hpp"

namespace curation_forge {

inline constexpr std::string_view kToolVersion = "0.1.0";

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    require(ctx_ != nullptr && EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) == 1, ErrorCode::io,
            "SHA-256 unavailable");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
  void update(std::string_view s) { update(s.data(), s.size()); }

  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md.data(), &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += kHex[md[i] >> 4];
      out += kHex[md[i] & 15];
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes);
  return h.hex();
}

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot read " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

// Directories hash the sorted list of "relative path NUL file digest" lines.
inline std::string sha256_path(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path)) return sha256_file(path);
  std::vector<std::string> lines;
  for (const auto& e : fs::recursive_directory_iterator(path))
    if (e.is_regular_file())
      lines.push_back(fs::relative(e.path(), path).generic_string() + '\0' + sha256_file(e.path()));
  std::sort(lines.begin(), lines.end());
  Sha256 h;
  for (const auto& l : lines) {
    h.update(l);
    h.update("\n");
  }
  return h.hex();
}

struct FileDigest {
  std::string role;  // parameter key the path came from
  std::string path;
  std::string sha256;

  bool operator==(const FileDigest&) const = default;
};

inline FileDigest digest(std::string role, const std::filesystem::path& path) {
  return {std::move(role), path.generic_string(), sha256_path(path)};
}

struct RunManifest {
  std::string stage;
  std::string kind;
  std::vector<FileDigest> inputs;
  nlohmann::json parameters = nlohmann::json::object();
  std::optional<std::uint64_t> seed;
  std::vector<FileDigest> outputs;
  std::vector<std::string> warnings;
  nlohmann::json summary = nlohmann::json::object();
  double wall_time_s = 0.0;
};

inline nlohmann::json to_json(const FileDigest& d) { return {{"role", d.role}, {"path", d.path}, {"sha256", d.sha256}}; }

inline nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json in = nlohmann::json::array(), out = nlohmann::json::array();
  for (const auto& d : m.inputs) in.push_back(to_json(d));
  for (const auto& d : m.outputs) out.push_back(to_json(d));
  nlohmann::json j = {{"tool", "curation-forge"},
                      {"version", kToolVersion},
                      {"stage", m.stage},
                      {"kind", m.kind},
                      {"inputs", in},
                      {"parameters", m.parameters},
                      {"outputs", out},
                      {"warnings", m.warnings},
                      {"summary", m.summary},
                      {"wall_time_s", m.wall_time_s}};
  // 64-bit seeds exceed the JSON double range, so they are written as strings.
  j["seed"] = m.seed ? nlohmann::json(std::to_string(*m.seed)) : nlohmann::json(nullptr);
  return j;
}

inline void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write manifest " + path.string());
  out << to_json(m).dump(2) << '\n';
}

}  // namespace curation_forge
