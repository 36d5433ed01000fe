#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "dasecount/error.hpp"

namespace dasecount {

using nlohmann::json;

/// Reads fields from a JSON object and rejects keys nobody asked for.
class StrictObject {
 public:
  StrictObject(const json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw ConfigError(context_ + ": expected a JSON object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  /// Leaves `out` untouched when the key is absent.
  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(context_ + "." + key + ": " + e.what());
    }
  }

  template <typename T>
  T require(const char* key) {
    if (!j_.contains(key)) throw ConfigError(context_ + ": missing key '" + key + "'");
    T out{};
    get(key, out);
    return out;
  }

  const json& child(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(context_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("file not found: " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

inline void write_json_file(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace dasecount
