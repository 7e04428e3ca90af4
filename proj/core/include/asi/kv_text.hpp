#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace asi {

/// `key = value` text documents: one pair per line, `#` starts a comment,
/// blank lines ignored, duplicate keys rejected.
class KeyValueDocument {
 public:
  static KeyValueDocument parse(std::istream& is, const std::string& origin = "<input>");
  static KeyValueDocument load(const std::string& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  void write(std::ostream& os) const;
  void save(const std::string& path) const;

 private:
  std::map<std::string, std::string> values_;
  std::string origin_;
};

/// Shortest round-trip decimal representation.
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& what);
std::uint64_t parse_u64(const std::string& text, const std::string& what);
bool parse_bool(const std::string& text, const std::string& what);
std::vector<std::string> split_list(const std::string& text, char sep);

}  // namespace asi
