#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

namespace fgst {

// Flat "key = value" configuration shared by every command. '#' starts a
// comment; blank lines are skipped. Every key must be consumed by a getter;
// leftovers are reported as unknown so typos fail loudly.
class KvMap {
 public:
  static KvMap parse(const std::string& text) {
    KvMap kv;
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config line " + std::to_string(line_no) +
                                    ": expected 'key = value'");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw std::invalid_argument("config line " + std::to_string(line_no) +
                                                   ": empty key");
      if (kv.values_.count(key))
        throw std::invalid_argument("config: duplicate key " + key);
      kv.values_[key] = value;
    }
    return kv;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    consumed_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) {
    consumed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("config: missing key " + key);
    return it->second;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
    return has(key) ? parse_u64(key, require_string(key)) : (consumed_.insert(key), fallback);
  }

  std::int64_t get_i64(const std::string& key, std::int64_t fallback) {
    if (!has(key)) {
      consumed_.insert(key);
      return fallback;
    }
    std::string s = require_string(key);
    try {
      std::size_t pos = 0;
      std::int64_t v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::invalid_argument("config: key " + key + " is not an integer: " + s);
    }
  }

  double get_double(const std::string& key, double fallback) {
    if (!has(key)) {
      consumed_.insert(key);
      return fallback;
    }
    std::string s = require_string(key);
    try {
      std::size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::invalid_argument("config: key " + key + " is not a number: " + s);
    }
  }

  bool get_bool(const std::string& key, bool fallback) {
    if (!has(key)) {
      consumed_.insert(key);
      return fallback;
    }
    std::string s = require_string(key);
    if (s == "1" || s == "true") return true;
    if (s == "0" || s == "false") return false;
    throw std::invalid_argument("config: key " + key + " is not a boolean: " + s);
  }

  void reject_unknown() const {
    for (const auto& [key, value] : values_)
      if (!consumed_.count(key)) throw std::invalid_argument("config: unknown key " + key);
  }

 private:
  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::uint64_t parse_u64(const std::string& key, const std::string& s) {
    try {
      std::size_t pos = 0;
      unsigned long long v = std::stoull(s, &pos);
      if (pos != s.size() || s[0] == '-') throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::invalid_argument("config: key " + key + " is not a non-negative integer: " + s);
    }
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

}  // namespace fgst
