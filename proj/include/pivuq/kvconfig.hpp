#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pivuq {

/// Flat `key = value` configuration (UTF-8, one pair per line, `#` comments).
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::filesystem::path& path);

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::optional<std::string> get(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

  const std::map<std::string, std::string>& entries() const noexcept { return values_; }

  /// Serializes in key order, one `key = value` per line.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

/// Parses a comma-separated list of reals ("0,2.5,5"). Empty string gives an empty list.
std::vector<double> parse_double_list(const std::string& csv);

}  // namespace pivuq
