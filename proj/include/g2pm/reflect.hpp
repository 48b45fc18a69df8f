#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "g2pm/error.hpp"

// Config structs expose their fields through an ADL-visible
//   template <class Self, class F> void visit_fields(Self& cfg, F&& f);
// calling f("name", field) for each field. Enums provide to_string(E) and
// parse_enum(std::string_view, E&). These helpers turn that into JSON.
namespace g2pm::reflect {

using json = nlohmann::json;

template <typename T>
json field_to_json(const T& v) {
  if constexpr (std::is_enum_v<T>) {
    return to_string(v);
  } else {
    return json(v);
  }
}

template <typename T>
void field_from_json(const json& j, T& out, const std::string& key) {
  try {
    if constexpr (std::is_enum_v<T>) {
      if (!j.is_string()) throw ConfigError("");
      if (!parse_enum(j.get<std::string>(), out)) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw ConfigError("");
      out = j.get<bool>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j.is_number()) throw ConfigError("");
      out = j.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer() || (std::is_unsigned_v<T> && j.get<std::int64_t>() < 0)) throw ConfigError("");
      out = j.get<T>();
    } else {
      out = j.get<T>();
    }
  } catch (const ConfigError&) {
    throw ConfigError("invalid value " + j.dump() + " for '" + key + "'");
  } catch (const json::exception&) {
    throw ConfigError("invalid value " + j.dump() + " for '" + key + "'");
  }
}

// Parses a command-line/env string into JSON of the field's type.
template <typename T>
json text_to_json(std::string_view text) {
  const std::string s(text);
  if constexpr (std::is_enum_v<T> || std::is_same_v<T, std::string>) {
    return s;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    return s;
  } else {
    try {
      return json::parse(s);
    } catch (const json::exception&) {
      return s;
    }
  }
}

template <typename Cfg>
json to_json(const Cfg& cfg, const std::string& prefix = "") {
  json out = json::object();
  visit_fields(cfg, [&](const char* name, const auto& field) { out[prefix + name] = field_to_json(field); });
  return out;
}

// Sets every key of `j` that starts with `prefix`; keys not matching a field
// are returned so the caller can reject them.
template <typename Cfg>
std::set<std::string> from_json(Cfg& cfg, const json& j, const std::string& prefix = "") {
  std::set<std::string> used;
  visit_fields(cfg, [&](const char* name, auto& field) {
    const std::string key = prefix + name;
    if (auto it = j.find(key); it != j.end()) {
      field_from_json(*it, field, key);
      used.insert(key);
    }
  });
  return used;
}

}  // namespace g2pm::reflect
