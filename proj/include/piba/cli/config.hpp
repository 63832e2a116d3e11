#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace piba::cli {

struct KeySpec {
  std::string name;
  std::string fallback;
  std::string help;
};

// Parses `key = value` lines. Blank lines and lines starting with '#' are
// skipped. Throws ErrorKind::config naming the line on malformed input or a
// repeated key.
std::map<std::string, std::string> parse_config_text(std::string_view text);

// Resolved settings of one command: defaults, then file entries, then flag
// overrides. Keys outside the schema are rejected at every layer.
class Config {
 public:
  Config() = default;
  Config(const std::vector<KeySpec>& schema, const std::map<std::string, std::string>& file,
         const std::map<std::string, std::string>& flags);

  bool has(std::string_view key) const { return values_.count(std::string(key)) != 0; }
  const std::string& str(std::string_view key) const;
  std::uint64_t u64(std::string_view key) const;
  std::size_t size(std::string_view key) const { return static_cast<std::size_t>(u64(key)); }
  double real(std::string_view key) const;
  std::vector<double> reals(std::string_view key) const;
  std::vector<std::size_t> sizes(std::string_view key) const;
  void set(const std::string& key, std::string value);

  const std::map<std::string, std::string>& values() const noexcept { return values_; }
  // Sorted `key = value` lines, the format parse_config_text reads.
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace piba::cli
