#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace swd {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered key=value store: one pair per line, `#` starts a comment.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& source = "config");
  static KeyValues load(const std::string& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  unsigned long long get_u64(const std::string& key, unsigned long long fallback) const;
  /// Entries of `other` override ours.
  void merge(const KeyValues& other);

  const std::map<std::string, std::string>& entries() const { return values_; }
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);
std::vector<double> parse_double_list(const std::string& s);
std::string format_double(double v);

}  // namespace swd
