#include "airpath/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "airpath/errors.hpp"

namespace airpath {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double to_double(const std::string& key, const std::string& text) {
  double value = 0.0;
  const auto* begin = text.data();
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw InputError("config key '" + key + "': not a number: '" + text + "'");
  }
  return value;
}

}  // namespace

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

Config Config::parse(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw InputError("config line " + std::to_string(lineno) +
                         ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InputError("config line " + std::to_string(lineno) +
                       ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw InputError("config line " + std::to_string(lineno) +
                       ": empty key");
    }
    if (!section.empty()) key = section + "." + key;
    cfg.entries_[key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

bool Config::contains(const std::string& key) const {
  return entries_.count(key) != 0;
}

std::optional<std::string> Config::raw(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto v = raw(key);
  return v ? to_double(key, *v) : fallback;
}

int Config::get_int(const std::string& key, int fallback) const {
  auto v = raw(key);
  if (!v) return fallback;
  int value = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), value);
  if (ec != std::errc() || ptr != v->data() + v->size()) {
    throw InputError("config key '" + key + "': not an integer: '" + *v + "'");
  }
  return value;
}

std::string Config::get_string(const std::string& key,
                               const std::string& fallback) const {
  return raw(key).value_or(fallback);
}

std::vector<double> Config::get_doubles(
    const std::string& key, const std::vector<double>& fallback) const {
  auto v = raw(key);
  if (!v) return fallback;
  std::vector<double> out;
  std::istringstream in(*v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_double(key, item));
  }
  return out;
}

void Config::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

void Config::merge(const Config& other) {
  for (const auto& [k, v] : other.entries_) entries_[k] = v;
}

}  // namespace airpath
