#pragma once

// Plain-text `key = value` documents. Blank lines and `#` comments are ignored.

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace delnet {

class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument("config error: " + what) {}
};

class KeyValueDoc {
 public:
  static KeyValueDoc parse(std::string_view text) {
    KeyValueDoc doc;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto key_value = trim(line);
      if (key_value.empty()) continue;
      const auto eq = key_value.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
      }
      std::string key(trim(key_value.substr(0, eq)));
      std::string value(trim(key_value.substr(eq + 1)));
      if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
      if (!doc.values_.emplace(key, value).second) {
        throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
      }
      doc.order_.push_back(key);
    }
    return doc;
  }

  static KeyValueDoc load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  void set(const std::string& key, std::string value) {
    if (values_.find(key) == values_.end()) order_.push_back(key);
    values_[key] = std::move(value);
  }

  bool contains(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing key '" + key + "'");
    return it->second;
  }

  const std::vector<std::string>& keys() const noexcept { return order_; }

  std::string to_text() const {
    std::string out;
    for (const auto& k : order_) out += k + " = " + values_.at(k) + "\n";
    return out;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << to_text();
  }

  static std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

inline std::size_t parse_size(std::string_view text, const std::string& what) {
  text = KeyValueDoc::trim(text);
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError(what + ": expected a non-negative integer, got '" + std::string(text) + "'");
  }
  return v;
}

inline double parse_double(std::string_view text, const std::string& what) {
  const std::string s(KeyValueDoc::trim(text));
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + ": expected a number, got '" + s + "'");
  }
}

/// Comma-separated list of non-negative integers.
inline std::vector<std::size_t> parse_size_list(std::string_view text, const std::string& what) {
  std::vector<std::size_t> out;
  while (true) {
    const auto comma = text.find(',');
    out.push_back(parse_size(text.substr(0, comma), what));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

inline std::string join(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

}  // namespace delnet
