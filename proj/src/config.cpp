#include "mloc/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace mloc {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str());
}

Config Config::parse_string(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected `key = value`");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    cfg.entries_[key] = value;
  }
  return cfg;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (trim(it->second.substr(pos)).empty()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key `" + key + "`: not a number: " + it->second);
}

int Config::get_int(const std::string& key, int fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const int v = std::stoi(it->second, &pos);
    if (trim(it->second.substr(pos)).empty()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key `" + key + "`: not an integer: " + it->second);
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(it->second, &pos);
    if (trim(it->second.substr(pos)).empty()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key `" + key + "`: not a nonnegative integer: " + it->second);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key `" + key + "`: not a boolean: " + v);
}

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

std::vector<double> Config::get_doubles(const std::string& key) const {
  const auto it = entries_.find(key);
  std::vector<double> out;
  if (it == entries_.end()) return out;
  for (const auto& tok : split_list(it->second)) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("config key `" + key + "`: not a number list: " + it->second);
    }
  }
  return out;
}

std::vector<std::uint64_t> Config::get_u64s(const std::string& key) const {
  const auto it = entries_.find(key);
  std::vector<std::uint64_t> out;
  if (it == entries_.end()) return out;
  for (const auto& tok : split_list(it->second)) {
    try {
      out.push_back(std::stoull(tok));
    } catch (const std::exception&) {
      throw ConfigError("config key `" + key + "`: not an integer list: " + it->second);
    }
  }
  return out;
}

}  // namespace mloc
