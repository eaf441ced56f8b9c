#include "tv3s/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace tv3s {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  std::ostringstream text;
  text << is.rdbuf();
  return from_text(text.str(), path);
}

Config Config::from_text(const std::string& text, const std::string& origin) {
  Config c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected `key = value`, got: " + line);
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    c.kv_[key] = val;  // later lines win
  }
  return c;
}

void Config::set(const std::string& key, const std::string& value) { kv_[key] = value; }

const std::string* Config::fetch(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return nullptr;
  read_.insert(key);
  return &it->second;
}

std::string Config::get_str(const std::string& key, const std::string& def) const {
  const std::string* v = fetch(key);
  return v ? *v : def;
}

int Config::get_int(const std::string& key, int def) const {
  const std::string* v = fetch(key);
  if (!v) return def;
  try {
    size_t pos = 0;
    long n = std::stol(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing characters");
    if (n < INT32_MIN || n > INT32_MAX) throw std::out_of_range("overflow");
    return static_cast<int>(n);
  } catch (const std::exception&) {
    throw ConfigError(key + " = " + *v + " is not an integer");
  }
}

uint64_t Config::get_u64(const std::string& key, uint64_t def) const {
  const std::string* v = fetch(key);
  if (!v) return def;
  try {
    size_t pos = 0;
    unsigned long long n = std::stoull(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing characters");
    return static_cast<uint64_t>(n);
  } catch (const std::exception&) {
    throw ConfigError(key + " = " + *v + " is not an unsigned integer");
  }
}

double Config::get_double(const std::string& key, double def) const {
  const std::string* v = fetch(key);
  if (!v) return def;
  try {
    size_t pos = 0;
    double d = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + " = " + *v + " is not a number");
  }
}

bool Config::get_bool(const std::string& key, bool def) const {
  const std::string* v = fetch(key);
  if (!v) return def;
  std::string s = *v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + " = " + *v + " is not a boolean");
}

std::vector<int> Config::get_int_list(const std::string& key, std::vector<int> def) const {
  const std::string* v = fetch(key);
  if (!v) return def;
  std::vector<int> out;
  std::string item;
  std::istringstream is(*v);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    try {
      size_t pos = 0;
      out.push_back(std::stoi(item, &pos));
      if (pos != item.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ConfigError(key + " = " + *v + " is not a comma-separated integer list");
    }
  }
  if (out.empty()) throw ConfigError(key + " = " + *v + " is an empty list");
  return out;
}

std::vector<std::string> Config::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : kv_)
    if (read_.count(k) == 0) out.push_back(k);
  return out;
}

}  // namespace tv3s
