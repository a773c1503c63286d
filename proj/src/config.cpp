#include "reid/config.hpp"

#include <fstream>
#include <sstream>

namespace reid {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

KeyValueConfig KeyValueConfig::parse_string(const std::string& text, const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: missing '=' at " + origin + ":" + std::to_string(lineno));
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config: empty key at " + origin + ":" + std::to_string(lineno));
    }
    if (cfg.entries_.count(key)) {
      throw ConfigError("config: duplicate key '" + key + "' in " + origin);
    }
    cfg.entries_[key] = value;
  }
  return cfg;
}

bool KeyValueConfig::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  used_.insert(key);
  return it->second;
}

double KeyValueConfig::get_real(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  used_.insert(key);
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for '" + key + "': " + it->second);
  }
}

long KeyValueConfig::get_long(const std::string& key, long fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  used_.insert(key);
  try {
    size_t pos = 0;
    long v = std::stol(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for '" + key + "': " + it->second);
  }
}

unsigned long long KeyValueConfig::get_u64(const std::string& key,
                                           unsigned long long fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  used_.insert(key);
  try {
    size_t pos = 0;
    unsigned long long v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad unsigned integer for '" + key + "': " + it->second);
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  used_.insert(key);
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: bad bool for '" + key + "': " + v);
}

std::vector<long> KeyValueConfig::get_longs(const std::string& key,
                                            const std::vector<long>& fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  used_.insert(key);
  std::vector<long> out;
  std::istringstream ss(it->second);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (part.empty()) continue;
    try {
      out.push_back(std::stol(part));
    } catch (const std::exception&) {
      throw ConfigError("config: bad integer list for '" + key + "': " + it->second);
    }
  }
  if (out.empty()) throw ConfigError("config: empty list for '" + key + "'");
  return out;
}

void KeyValueConfig::check_fully_consumed() const {
  for (const auto& [key, value] : entries_) {
    if (!used_.count(key)) {
      throw ConfigError("config: unknown key '" + key + "' in " + origin_);
    }
  }
}

}  // namespace reid
