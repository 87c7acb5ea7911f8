#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace airpath {

/// Flat key/value configuration.
///
/// Files are line oriented: `key = value`, `#` starts a comment, and a
/// `[section]` header prefixes the keys that follow with `section.`.  Keys
/// seen before any header live in the root namespace.
class Config {
 public:
  Config() = default;

  static Config load(const std::filesystem::path& path);
  static Config parse(const std::string& text);

  bool contains(const std::string& key) const;
  std::optional<std::string> raw(const std::string& key) const;

  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  std::vector<double> get_doubles(const std::string& key,
                                  const std::vector<double>& fallback) const;

  void set(const std::string& key, const std::string& value);

  /// Later entries win.
  void merge(const Config& other);

  const std::map<std::string, std::string>& entries() const {
    return entries_;
  }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace airpath
