#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace resrl {

// Flat key-value config file:
//   key = value            one pair per line
//   # comment              full-line or trailing
// Values are free-form strings; typed getters parse on access and report
// the file, key, and expected type on failure. Vector values are
// comma-separated.
class Config {
 public:
  Config() = default;

  static Config load(const std::string& path);
  static Config from_string(const std::string& text, const std::string& name = "<inline>");

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  std::string get_str(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_vec(const std::string& key) const;
  std::vector<std::string> get_str_list(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }
  const std::string& source() const { return name_; }

 private:
  [[noreturn]] void fail(const std::string& key, const std::string& why) const;

  std::map<std::string, std::string> kv_;
  std::string name_ = "<empty>";
};

}  // namespace resrl
