#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "betoken/errors.hpp"

namespace betoken::cli {

// Flat key=value run configuration. '#' starts a comment; keys are sorted on
// save so identical configs serialize identically. A run's config is written
// next to its outputs.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  void set_int(const std::string& key, long long v) { entries_[key] = std::to_string(v); }
  void set_double(const std::string& key, double v);

  // "key=value" strings from the command line override file values.
  void apply_overrides(const std::vector<std::string>& overrides);

  std::string get_str(const std::string& key, const std::string& fallback) const;
  std::string require_str(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace betoken::cli
