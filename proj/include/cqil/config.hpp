#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "cqil/common.hpp"
#include "cqil/rng.hpp"

namespace cqil {

// Flat key = value configuration text. '#' starts a comment, whitespace is
// trimmed, keys are unique. Serialisation is canonical (sorted keys), so the
// digest identifies a configuration regardless of formatting.
class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const size_t eq = trimmed.find('=');
      CQIL_CHECK_MSG(eq != std::string::npos, "config line " << lineno
                                                             << ": expected key = value");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      CQIL_CHECK_MSG(!key.empty(), "config line " << lineno << ": empty key");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream f(path);
    CQIL_CHECK_MSG(f.good(), "cannot open config " << path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set(const std::string& key, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    values_[key] = buf;
  }
  void set(const std::string& key, uint64_t v) { values_[key] = std::to_string(v); }
  void set(const std::string& key, bool v) { values_[key] = v ? "true" : "false"; }

  std::string get_string(const std::string& key, const std::string& dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  double get_double(const std::string& key, double dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      return std::stod(it->second);
    } catch (...) {
      throw Error("config key '" + key + "': not a number: " + it->second);
    }
  }

  uint64_t get_uint(const std::string& key, uint64_t dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      return std::stoull(it->second);
    } catch (...) {
      throw Error("config key '" + key + "': not an integer: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw Error("config key '" + key + "': not a boolean: " + it->second);
  }

  // Canonical text: sorted keys, one per line.
  std::string serialize() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
    return out.str();
  }

  std::string digest() const {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(detail::fnv1a64(serialize())));
    return buf;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    CQIL_CHECK_MSG(f.good(), "cannot write config " << path);
    f << serialize();
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace cqil
