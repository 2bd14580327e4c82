#include "emapg/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <ostream>
#include <sstream>

namespace emapg::cli {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

bool valid_key(const std::string& key) {
  return !key.empty() && std::all_of(key.begin(), key.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  });
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError("key '" + key + "': expected a number, got '" + text + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (text.empty() || res.ec != std::errc() || res.ptr != end) {
    throw UsageError("key '" + key + "': expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

}  // namespace

Config::Config(std::vector<KeySpec> schema) : schema_(std::move(schema)) {}

const KeySpec& Config::spec_of(const std::string& key) const {
  for (const auto& s : schema_) {
    if (s.key == key) return s;
  }
  throw UsageError("unknown config key '" + key + "'");
}

void Config::load(std::istream& in, const std::string& origin) {
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!valid_key(key)) throw UsageError(where + "invalid key '" + key + "'");
    if (value.empty()) throw UsageError(where + "missing value for '" + key + "'");
    try {
      spec_of(key);
    } catch (const UsageError& e) {
      throw UsageError(where + e.what());
    }
    if (auto it = seen.find(key); it != seen.end()) {
      throw UsageError(where + "duplicate key '" + key + "' (first set on line " +
                       std::to_string(it->second) + ")");
    }
    seen[key] = lineno;
    values_[key] = value;
  }
}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path + "'");
  load(in, path);
}

void Config::set(const std::string& key, const std::string& value) {
  spec_of(key);
  if (trim(value).empty()) throw UsageError("missing value for '" + key + "'");
  values_[key] = trim(value);
}

std::string Config::raw(const std::string& key) const {
  const KeySpec& spec = spec_of(key);
  const auto it = values_.find(key);
  return it != values_.end() ? it->second : spec.default_value;
}

std::string Config::get_string(const std::string& key) const { return raw(key); }

double Config::get_double(const std::string& key) const { return parse_double(key, raw(key)); }

std::uint64_t Config::get_u64(const std::string& key) const { return parse_u64(key, raw(key)); }

std::size_t Config::get_size(const std::string& key) const {
  return static_cast<std::size_t>(get_u64(key));
}

bool Config::get_bool(const std::string& key) const {
  const std::string v = raw(key);
  if (v == "true") return true;
  if (v == "false") return false;
  throw UsageError("key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::size_t> Config::get_size_list(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& part : split_list(raw(key))) out.push_back(static_cast<std::size_t>(parse_u64(key, part)));
  if (out.empty()) throw UsageError("key '" + key + "': empty list");
  return out;
}

std::vector<double> Config::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& part : split_list(raw(key))) out.push_back(parse_double(key, part));
  if (out.empty()) throw UsageError("key '" + key + "': empty list");
  return out;
}

void Config::echo(std::ostream& os) const {
  for (const auto& s : schema_) os << s.key << " = " << raw(s.key) << "\n";
}

}  // namespace emapg::cli
