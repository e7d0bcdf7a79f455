#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace scone {

inline constexpr const char* kVersion = "scone-0.1.0";

/// Record of one CLI invocation, stored as manifest.json in its output dir.
struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  std::string config;  ///< `key = value` snapshot, empty when not applicable
  std::uint64_t seed = 0;
  std::string version = kVersion;
  std::string started_at;
  std::string finished_at;
  std::vector<std::string> outputs;

  bool operator==(const RunManifest&) const = default;
};

std::string manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const std::string& text);

void write_manifest(const RunManifest& manifest, const std::filesystem::path& dir);
RunManifest read_manifest(const std::filesystem::path& dir);

/// UTC time as ISO-8601.
std::string utc_timestamp();

}  // namespace scone
