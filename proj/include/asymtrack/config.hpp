#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

namespace asymtrack {

// Plain-text "key = value" configuration files. Blank lines and lines
// starting with '#' are ignored; unknown keys are rejected by typed access.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    KeyValueConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      std::string s = trim(line);
      if (s.empty() || s[0] == '#') continue;
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config: missing '=' at " + path + ":" + std::to_string(lineno));
      std::string key = trim(s.substr(0, eq));
      std::string val = trim(s.substr(eq + 1));
      if (key.empty()) throw std::runtime_error("config: empty key at line " + std::to_string(lineno));
      cfg.values_[key] = val;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void get(const std::string& key, int& out) {
    if (!mark(key)) return;
    out = std::stoi(values_.at(key));
  }
  void get(const std::string& key, long& out) {
    if (!mark(key)) return;
    out = std::stol(values_.at(key));
  }
  void get(const std::string& key, unsigned long long& out) {
    if (!mark(key)) return;
    out = std::stoull(values_.at(key));
  }
  void get(const std::string& key, double& out) {
    if (!mark(key)) return;
    out = std::stod(values_.at(key));
  }
  void get(const std::string& key, bool& out) {
    if (!mark(key)) return;
    const std::string& v = values_.at(key);
    if (v == "true" || v == "1")
      out = true;
    else if (v == "false" || v == "0")
      out = false;
    else
      throw std::runtime_error("config: bad boolean for " + key + ": " + v);
  }
  void get(const std::string& key, std::string& out) {
    if (!mark(key)) return;
    out = values_.at(key);
  }

  // Call after all get() calls: any key never requested is unknown.
  void reject_unknown() const {
    for (const auto& [k, v] : values_)
      if (!consumed_.count(k)) throw std::runtime_error("config: unknown key '" + k + "'");
  }

 private:
  bool mark(const std::string& key) {
    consumed_.insert(key);
    return values_.count(key) > 0;
  }

  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

}  // namespace asymtrack
