#pragma once

#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "sbl/errors.hpp"

namespace sbl {

/// Throws ConfigError naming the first key of `obj` not in `allowed`.
inline void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                                const std::string& context) {
  if (!obj.is_object()) throw ConfigError(context + ": expected an object");
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* key : allowed) ok = ok || item.key() == key;
    if (!ok) {
      std::string list;
      for (const char* key : allowed) list += (list.empty() ? "" : ", ") + std::string(key);
      throw ConfigError(context + ": unknown key '" + item.key() + "' (allowed: " + list + ")");
    }
  }
}

/// Reads obj[key] into `out` when present; type errors become ConfigError.
template <typename T>
void read_optional(const nlohmann::json& obj, const char* key, T& out, const std::string& context) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(context + "." + key + ": wrong type (" + obj.at(key).dump() + ")");
  }
}

}  // namespace sbl
