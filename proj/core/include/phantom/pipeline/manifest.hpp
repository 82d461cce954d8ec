#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace phantom::pipeline {

/// Version tag written into every manifest.
std::string code_version();

struct ManifestEntry {
  /// Path relative to the run directory, '/'-separated.
  std::string path;
  std::uintmax_t bytes = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct RunManifest {
  std::string config_hash;
  std::string code_version;
  /// ISO-8601 UTC.
  std::string created;
  std::string updated;
  std::vector<ManifestEntry> files;
};

inline constexpr const char* kManifestFile = "manifest.json";

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

/// Every regular file under `dir` except the manifest itself, sorted by path.
std::vector<ManifestEntry> scan_artifacts(const std::filesystem::path& dir);

/// Rescans `dir` and writes its manifest, keeping the creation time of an
/// existing one.
RunManifest refresh_manifest(const std::filesystem::path& dir, const std::string& config_hash);

RunManifest read_manifest(const std::filesystem::path& dir);

/// Problems found: missing manifest, missing files, byte-length mismatches.
/// Empty means valid.
std::vector<std::string> validate_manifest(const std::filesystem::path& dir);

std::string utc_timestamp();

}  // namespace phantom::pipeline
