#pragma once

// Flat key-value configuration with [sections]; each section is a subcommand name or "common".

#include <geovar/core.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace geovar::cli {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Kind { count, u64, integer, real, positive, reals, positives, models, words, text };

struct KeySpec {
  std::string name;
  Kind kind;
  std::string fallback;
  std::string help;
};

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

// Accepts plain numbers and 10^x.
inline double parse_real(const std::string& key, const std::string& s) {
  const std::string t = trim(s);
  try {
    size_t pos = 0;
    double v;
    if (t.rfind("10^", 0) == 0) {
      v = std::pow(10.0, std::stod(t.substr(3), &pos));
      pos += 3;
    } else {
      v = std::stod(t, &pos);
    }
    if (pos != t.size() || !std::isfinite(v)) throw std::invalid_argument(t);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': '" + t + "' is not a number");
  }
}

inline long long parse_integer(const std::string& key, const std::string& s) {
  const std::string t = trim(s);
  try {
    size_t pos = 0;
    const long long v = std::stoll(t, &pos);
    if (pos != t.size()) throw std::invalid_argument(t);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': '" + t + "' is not an integer");
  }
}

inline void validate(const KeySpec& k, const std::string& value) {
  if (trim(value).empty()) throw ConfigError("key '" + k.name + "' is empty");
  switch (k.kind) {
    case Kind::count:
      if (parse_integer(k.name, value) <= 0) throw ConfigError("key '" + k.name + "' must be positive");
      break;
    case Kind::u64:
      if (parse_integer(k.name, value) < 0) throw ConfigError("key '" + k.name + "' must be nonnegative");
      break;
    case Kind::integer: parse_integer(k.name, value); break;
    case Kind::real: parse_real(k.name, value); break;
    case Kind::positive:
      if (!(parse_real(k.name, value) > 0)) throw ConfigError("key '" + k.name + "' must be positive");
      break;
    case Kind::reals:
    case Kind::positives:
      for (const auto& x : split_list(value)) {
        if (x.empty()) throw ConfigError("key '" + k.name + "' has an empty list entry");
        if (!(parse_real(k.name, x) > 0) && k.kind == Kind::positives)
          throw ConfigError("key '" + k.name + "' entries must be positive");
      }
      break;
    case Kind::models:
      for (const auto& x : split_list(value)) {
        try {
          parse_model(x);
        } catch (const Error&) {
          throw ConfigError("key '" + k.name + "': unknown model '" + x + "'");
        }
      }
      break;
    case Kind::words:
      for (const auto& x : split_list(value))
        if (x.empty()) throw ConfigError("key '" + k.name + "' has an empty list entry");
      break;
    case Kind::text: break;
  }
}

// Resolved settings for one subcommand: defaults < file [common] < file [command] < flags.
class Settings {
 public:
  Settings(std::string command, std::vector<KeySpec> keys) : command_(std::move(command)), keys_(std::move(keys)) {
    for (const auto& k : keys_) values_[k.name] = k.fallback;
  }

  const std::string& command() const { return command_; }
  const std::vector<KeySpec>& keys() const { return keys_; }
  bool has_key(const std::string& k) const { return values_.count(k) > 0; }

  void set(const std::string& key, const std::string& value) {
    const KeySpec* k = find(key);
    if (!k) throw ConfigError("unknown key '" + key + "' for " + command_);
    validate(*k, value);
    values_[key] = trim(value);
  }

  const std::string& raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw std::logic_error("no key " + key);
    return it->second;
  }
  std::string text(const std::string& key) const { return raw(key); }
  int count(const std::string& key) const { return static_cast<int>(parse_integer(key, raw(key))); }
  std::uint64_t u64(const std::string& key) const { return static_cast<std::uint64_t>(parse_integer(key, raw(key))); }
  double real(const std::string& key) const { return parse_real(key, raw(key)); }
  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& x : split_list(raw(key))) out.push_back(parse_real(key, x));
    return out;
  }
  std::vector<std::string> words(const std::string& key) const { return split_list(raw(key)); }
  std::vector<ModelId> models(const std::string& key) const {
    std::vector<ModelId> out;
    for (const auto& x : split_list(raw(key))) out.push_back(parse_model(x));
    return out;
  }

 private:
  const KeySpec* find(const std::string& key) const {
    for (const auto& k : keys_)
      if (k.name == key) return &k;
    return nullptr;
  }

  std::string command_;
  std::vector<KeySpec> keys_;
  std::map<std::string, std::string> values_;
};

// section -> key -> value, with the line number kept for messages.
struct ConfigFile {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
};

inline ConfigFile read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  ConfigFile cf;
  std::string section = "common", line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(path + ":" + std::to_string(n) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      cf.sections[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(path + ":" + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(path + ":" + std::to_string(n) + ": empty key");
    cf.sections[section].emplace_back(key, trim(line.substr(eq + 1)));
  }
  return cf;
}

}  // namespace geovar::cli
