#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace dlif {

// Flat `key = value` configuration with '#' comments; lists are
// comma-separated. Values keep their literal text so an echo round-trips.
class KeyValueConfig {
 public:
  static KeyValueConfig from_file(const std::string& path);
  static KeyValueConfig from_string(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  // "key=value" form used by --set.
  void apply_override(const std::string& assignment);

  std::string get_str(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;

  // Rejects unknown keys, listing the valid ones in the error message.
  void restrict_keys(const std::set<std::string>& exact,
                     const std::function<bool(const std::string&)>& pattern = nullptr) const;

  // Canonical `key = value` lines, sorted by key.
  std::string echo() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace dlif
