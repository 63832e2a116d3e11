#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace piba::cli {

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string file_sha256(const std::filesystem::path& path);

struct Artifact {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::uint64_t bytes = 0;
};

struct RunManifest {
  std::string experiment;
  std::string command;
  std::string timestamp;
  std::map<std::string, std::string> config;
  std::map<std::string, std::uint64_t> seeds;
  std::vector<Artifact> artifacts;
};

// Hashes `files` (relative to dir) and writes dir/<command>.manifest.json atomically.
RunManifest write_manifest(const std::filesystem::path& dir, const std::string& command,
                           const std::map<std::string, std::string>& config,
                           const std::map<std::string, std::uint64_t>& seeds, std::vector<std::string> files);
std::string manifest_name(const std::string& command);
RunManifest read_manifest(const std::filesystem::path& path);

// Re-hashes every listed artifact; returns the paths that are missing or differ.
std::vector<std::string> verify_manifest(const std::filesystem::path& dir, const RunManifest& manifest);

}  // namespace piba::cli
