#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"

#include "adua/common.hpp"

namespace adua {

using Json = nlohmann::json;

// Strict object parsing: every present key must be in the allowed set, so a
// typo in a config file fails loudly instead of silently using a default.
inline void reject_unknown_keys(const Json& j, std::string_view context,
                                std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) {
    throw ConfigError(std::string(context) + ": expected a JSON object");
  }
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw ConfigError(std::string(context) + ": unknown key \"" + item.key() + "\"");
    }
  }
}

template <typename T>
T json_get(const Json& j, std::string_view context, const char* key) {
  if (!j.contains(key)) {
    throw ConfigError(std::string(context) + ": missing required key \"" + key + "\"");
  }
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(std::string(context) + ": key \"" + key + "\" has the wrong type");
  }
}

template <typename T>
T json_get_or(const Json& j, std::string_view context, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(std::string(context) + ": key \"" + key + "\" has the wrong type");
  }
}

}  // namespace adua
