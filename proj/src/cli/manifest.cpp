#include "piba/cli/manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <memory>

#include "json.hpp"
#include "piba/error.hpp"
#include "piba/io/binary.hpp"

namespace piba::cli {

using nlohmann::json;

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::io, "sha256 failed");
  }
  std::string out;
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(io::read_file(path)); }

RunManifest write_manifest(const std::filesystem::path& dir, const std::string& command,
                           const std::map<std::string, std::string>& config,
                           const std::map<std::string, std::uint64_t>& seeds, std::vector<std::string> files) {
  RunManifest m;
  m.command = command;
  m.config = config;
  m.seeds = seeds;
  std::string config_text;
  for (const auto& [k, v] : config) config_text += k + " = " + v + "\n";
  const std::string digest =
      sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(config_text.data()), config_text.size()));
  m.experiment = command + "-" + digest.substr(0, 12);
  m.timestamp = fmt::format("{:%FT%TZ}", std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now()));
  std::sort(files.begin(), files.end());
  files.erase(std::unique(files.begin(), files.end()), files.end());
  json artifacts = json::array();
  for (const auto& f : files) {
    const auto bytes = io::read_file(dir / f);
    m.artifacts.push_back({f, sha256_hex(bytes), bytes.size()});
    artifacts.push_back({{"path", f}, {"sha256", m.artifacts.back().sha256}, {"bytes", bytes.size()}});
  }
  const json doc = {{"manifest_version", 1}, {"experiment", m.experiment}, {"command", command},
                    {"timestamp", m.timestamp}, {"config", config},        {"seeds", seeds},
                    {"artifacts", artifacts}};
  io::write_text_atomic(dir / manifest_name(command), doc.dump(2) + "\n");
  return m;
}

std::string manifest_name(const std::string& command) { return command + ".manifest.json"; }

RunManifest read_manifest(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end());
    RunManifest m;
    m.experiment = doc.at("experiment").get<std::string>();
    m.command = doc.at("command").get<std::string>();
    m.timestamp = doc.at("timestamp").get<std::string>();
    m.config = doc.at("config").get<std::map<std::string, std::string>>();
    m.seeds = doc.at("seeds").get<std::map<std::string, std::uint64_t>>();
    for (const auto& a : doc.at("artifacts")) {
      m.artifacts.push_back({a.at("path").get<std::string>(), a.at("sha256").get<std::string>(),
                             a.at("bytes").get<std::uint64_t>()});
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, path.string() + ": malformed manifest: " + e.what());
  }
}

std::vector<std::string> verify_manifest(const std::filesystem::path& dir, const RunManifest& manifest) {
  std::vector<std::string> bad;
  for (const auto& a : manifest.artifacts) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(dir / a.path, ec) || file_sha256(dir / a.path) != a.sha256) {
      bad.push_back(a.path);
    }
  }
  return bad;
}

}  // namespace piba::cli
