#pragma once

#include "spacealign/common.hpp"

#include <json.hpp>

#include <string_view>

namespace spacealign {

// Throws ConfigError for keys of j that the defaults document does not have.
inline void reject_unknown_keys(const nlohmann::json& j, const nlohmann::json& known, std::string_view section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " config must be a JSON object");
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) {
      throw ConfigError("unknown key '" + item.key() + "' in " + std::string(section) + " config");
    }
  }
}

// Reads j[key] into out when present, mapping type errors to ConfigError.
template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace spacealign
