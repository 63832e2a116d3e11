#include "piba/cli/config.hpp"

#include <charconv>
#include <cmath>

#include "piba/error.hpp"

namespace piba::cli {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw Error(ErrorKind::config, "key '" + std::string(key) + "': '" + std::string(value) + "' is not " +
                                     std::string(want));
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(trim(s.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view line = trim(text.substr(0, nl));
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no);
    if (eq == std::string_view::npos) throw Error(ErrorKind::config, where + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw Error(ErrorKind::config, where + ": empty key");
    if (!out.emplace(key, std::string(trim(line.substr(eq + 1)))).second) {
      throw Error(ErrorKind::config, where + ": key '" + key + "' given twice");
    }
  }
  return out;
}

Config::Config(const std::vector<KeySpec>& schema, const std::map<std::string, std::string>& file,
               const std::map<std::string, std::string>& flags) {
  for (const auto& k : schema) values_[k.name] = k.fallback;
  for (const auto* layer : {&file, &flags}) {
    for (const auto& [k, v] : *layer) {
      if (!has(k)) throw Error(ErrorKind::config, "unknown key '" + k + "'");
      values_[k] = v;
    }
  }
}

const std::string& Config::str(std::string_view key) const {
  const auto it = values_.find(std::string(key));
  if (it == values_.end()) throw Error(ErrorKind::config, "missing key '" + std::string(key) + "'");
  return it->second;
}

std::uint64_t Config::u64(std::string_view key) const { return parse_u64(key, str(key)); }

double Config::real(std::string_view key) const { return parse_real(key, str(key)); }

std::vector<double> Config::reals(std::string_view key) const {
  std::vector<double> out;
  for (auto part : split_list(str(key))) out.push_back(parse_real(key, part));
  return out;
}

std::vector<std::size_t> Config::sizes(std::string_view key) const {
  std::vector<std::size_t> out;
  for (auto part : split_list(str(key))) out.push_back(static_cast<std::size_t>(parse_u64(key, part)));
  return out;
}

void Config::set(const std::string& key, std::string value) { values_[key] = std::move(value); }

std::string Config::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace piba::cli
