#include "betoken/config.hpp"

#include <fstream>
#include <sstream>

namespace betoken::cli {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open: " + path.string());
  KvConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgumentError("config: line " + std::to_string(lineno) + " of " +
                                 path.string() + " is not key=value");
    }
    cfg.entries_[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return cfg;
}

void KvConfig::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("config: cannot open for writing: " + path.string());
  for (const auto& [k, v] : entries_) os << k << '=' << v << '\n';
  if (!os) throw IoError("config: write failed: " + path.string());
}

void KvConfig::set_double(const std::string& key, double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  entries_[key] = os.str();
}

void KvConfig::apply_overrides(const std::vector<std::string>& overrides) {
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw InvalidArgumentError("config: override '" + kv + "' is not key=value");
    }
    entries_[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
  }
}

std::string KvConfig::get_str(const std::string& key, const std::string& fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

std::string KvConfig::require_str(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw InvalidArgumentError("config: missing required key '" + key + "'");
  return it->second;
}

int KvConfig::get_int(const std::string& key, int fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw InvalidArgumentError("config: key '" + key + "' is not an integer: " + it->second);
  }
}

uint64_t KvConfig::get_u64(const std::string& key, uint64_t fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw InvalidArgumentError("config: key '" + key + "' is not an unsigned integer: " + it->second);
  }
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw InvalidArgumentError("config: key '" + key + "' is not a number: " + it->second);
  }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw InvalidArgumentError("config: key '" + key + "' is not a boolean: " + v);
}

}  // namespace betoken::cli
