#pragma once

// Flat `key = value` experiment configuration.
//
// Grammar, one entry per line:
//   line    := blank | comment | entry
//   comment := '#' anything          (also allowed after an entry)
//   entry   := key '=' value
//   key     := [a-z0-9_]+
//   value   := any non-empty text, surrounding whitespace trimmed
// Lists are comma separated. Booleans are true/false. Duplicate keys are
// rejected. Every key must be declared by the subcommand's schema.

#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace emapg::cli {

// Bad configuration or command line; maps to exit status 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KeySpec {
  std::string key;
  std::string default_value;
  std::string help;
};

class Config {
 public:
  explicit Config(std::vector<KeySpec> schema);

  // Reads entries from a config file; errors are reported as origin:line.
  void load(std::istream& in, const std::string& origin);
  void load_file(const std::string& path);
  // Command-line override; replaces any earlier value.
  void set(const std::string& key, const std::string& value);

  const std::vector<KeySpec>& schema() const { return schema_; }
  std::string raw(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::size_t> get_size_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  // Effective value of every declared key, in schema order.
  void echo(std::ostream& os) const;

 private:
  const KeySpec& spec_of(const std::string& key) const;

  std::vector<KeySpec> schema_;
  std::map<std::string, std::string> values_;
};

}  // namespace emapg::cli
