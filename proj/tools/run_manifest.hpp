#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace sodar::cli {

// Bad arguments or a refused output directory (exit code 2).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// SHA-1 of "blob <size>\0<content>", as printed by git hash-object.
std::string git_blob_hash(std::string_view content);
// Blob hash for a file, git tree hash for a directory (regular files only,
// mode 100644, run manifests skipped).
std::string git_hash_path(const std::filesystem::path& path);

inline constexpr const char* kManifestName = "run_manifest.json";

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config;  // key=value snapshot
  uint64_t seed = 0;
  std::vector<std::pair<std::string, std::filesystem::path>> inputs;
  std::vector<std::string> outputs;  // relative to the output directory
  double wall_seconds = 0.0;

  // Per-input hashes plus a combined "inputs_hash" over "name hash" lines.
  nlohmann::json to_json() const;
  void write(const std::filesystem::path& dir) const;
};

// Creates dir, or empties it when force is set; a non-empty dir without force
// is a UsageError.
void prepare_output(const std::filesystem::path& dir, bool force);

}  // namespace sodar::cli
