#pragma once

#include <fstream>
#include <map>
#include <string>

#include "odflow/common.hpp"

namespace odflow {

/// Sectioned key-value config file:
///
///   [synth]
///   n_rows = 10
///   gravity_beta = 2.0
///
/// Lines starting with '#' or ';' are comments. Keys are looked up as
/// "section.key".
class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text, const std::string& origin = "<config>") {
    Config cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string t = trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        if (t.back() != ']')
          throw DataError(origin + ":" + std::to_string(line_no) + ": unterminated section");
        section = trim(t.substr(1, t.size() - 2));
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw DataError(origin + ":" + std::to_string(line_no) + ": expected key = value");
      const std::string key = trim(t.substr(0, eq));
      const std::string val = trim(t.substr(eq + 1));
      if (key.empty())
        throw DataError(origin + ":" + std::to_string(line_no) + ": empty key");
      cfg.values_[section.empty() ? key : section + "." + key] = val;
    }
    return cfg;
  }

  static Config load(const std::string& path) { return parse(read_text_file(path), path); }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : csv::parse_double(it->second, "config key " + key);
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : csv::parse_int(it->second, "config key " + key);
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    std::size_t e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace odflow
