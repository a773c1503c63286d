#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "reid/errors.hpp"

namespace reid {

// Flat "key = value" configuration text. '#' starts a comment; blank lines
// are ignored. Unknown keys are reported after parsing so typos fail loudly.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::string& path);
  static KeyValueConfig parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_real(const std::string& key, double fallback) const;
  long get_long(const std::string& key, long fallback) const;
  unsigned long long get_u64(const std::string& key, unsigned long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<long> get_longs(const std::string& key, const std::vector<long>& fallback) const;

  // Throws ConfigError naming any key that was never read.
  void check_fully_consumed() const;

 private:
  std::string origin_;
  std::map<std::string, std::string> entries_;
  mutable std::set<std::string> used_;
};

}  // namespace reid
