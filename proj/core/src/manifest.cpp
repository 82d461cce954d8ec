#include "phantom/pipeline/manifest.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <stdexcept>

#ifndef PHANTOM_VERSION
#define PHANTOM_VERSION "unknown"
#endif

namespace phantom::pipeline {

namespace fs = std::filesystem;

std::string code_version() { return PHANTOM_VERSION; }

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json files = nlohmann::json::array();
  for (const auto& f : m.files) files.push_back({{"path", f.path}, {"bytes", f.bytes}});
  return {{"config_hash", m.config_hash},
          {"code_version", m.code_version},
          {"created", m.created},
          {"updated", m.updated},
          {"files", files}};
}

RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.config_hash = j.at("config_hash").get<std::string>();
  m.code_version = j.at("code_version").get<std::string>();
  m.created = j.at("created").get<std::string>();
  m.updated = j.at("updated").get<std::string>();
  for (const auto& f : j.at("files"))
    m.files.push_back({f.at("path").get<std::string>(), f.at("bytes").get<std::uintmax_t>()});
  return m;
}

std::vector<ManifestEntry> scan_artifacts(const fs::path& dir) {
  std::vector<ManifestEntry> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel == kManifestFile || rel.ends_with(".tmp")) continue;
    out.push_back({rel, e.file_size()});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return out;
}

RunManifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / kManifestFile);
  if (!in) throw std::runtime_error("no manifest in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
    return manifest_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed manifest in " + dir.string() + ": " + e.what());
  }
}

RunManifest refresh_manifest(const fs::path& dir, const std::string& config_hash) {
  RunManifest m;
  m.config_hash = config_hash;
  m.code_version = code_version();
  m.updated = utc_timestamp();
  m.created = m.updated;
  if (fs::exists(dir / kManifestFile)) {
    try {
      m.created = read_manifest(dir).created;
    } catch (const std::runtime_error&) {
    }
  }
  m.files = scan_artifacts(dir);
  const auto tmp = dir / (std::string(kManifestFile) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
    out << to_json(m).dump(2) << '\n';
  }
  fs::rename(tmp, dir / kManifestFile);
  return m;
}

std::vector<std::string> validate_manifest(const fs::path& dir) {
  std::vector<std::string> problems;
  RunManifest m;
  try {
    m = read_manifest(dir);
  } catch (const std::runtime_error& e) {
    problems.emplace_back(e.what());
    return problems;
  }
  for (const auto& f : m.files) {
    const auto p = dir / f.path;
    std::error_code ec;
    if (!fs::is_regular_file(p, ec)) {
      problems.push_back("missing artifact " + f.path);
      continue;
    }
    const auto size = fs::file_size(p, ec);
    if (ec || size != f.bytes)
      problems.push_back("artifact " + f.path + " has " + std::to_string(size) + " bytes, manifest records " +
                         std::to_string(f.bytes));
  }
  return problems;
}

}  // namespace phantom::pipeline
