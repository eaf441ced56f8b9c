#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tv3s/errors.hpp"

// `key = value` configuration files with `#` comments. Keys are namespaced
// (model.*, train.*, data.*, eval.*); reads are tracked so a command can
// refuse keys nothing consumed — usually a typo.
namespace tv3s {

class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path);
  static Config from_text(const std::string& text, const std::string& origin = "<inline>");

  // Later sets win; used for flag overrides on top of the file.
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  // True when any key starts with prefix; does not mark anything as read.
  bool has_prefix(const std::string& prefix) const {
    auto it = kv_.lower_bound(prefix);
    return it != kv_.end() && it->first.rfind(prefix, 0) == 0;
  }

  std::string get_str(const std::string& key, const std::string& def) const;
  int get_int(const std::string& key, int def) const;
  uint64_t get_u64(const std::string& key, uint64_t def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;
  std::vector<int> get_int_list(const std::string& key, std::vector<int> def) const;

  // Keys present but never read by any getter.
  std::vector<std::string> unused_keys() const;

 private:
  const std::string* fetch(const std::string& key) const;

  std::map<std::string, std::string> kv_;
  mutable std::set<std::string> read_;
};

}  // namespace tv3s
