#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pipnet {

// Flat `key=value` text. Blank lines and lines starting with '#' are ignored.
// Keys are unique; serialization is sorted by key.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

  // Merges `other` on top of this config.
  void merge(const KeyValueConfig& other);

  std::string to_string() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> entries_;
};

// Strict value parsers; throw InvalidArgument naming `key` on failure.
double parse_double(const std::string& key, const std::string& value);
std::size_t parse_size(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value);
std::vector<double> parse_double_list(const std::string& key, const std::string& value);

std::string format_double(double value);

}  // namespace pipnet
