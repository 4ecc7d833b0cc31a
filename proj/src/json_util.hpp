#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"
#include "udaforge/common.hpp"

namespace udaforge::jsonu {

using nlohmann::json;

inline json parse(const std::string& text, const char* ctx) {
  json j = json::parse(text, nullptr, false);
  check(!j.is_discarded(), "config", std::string(ctx) + ": not valid JSON");
  return j;
}

inline void check_keys(const json& j, const char* ctx,
                       std::initializer_list<std::string_view> allowed) {
  check(j.is_object(), "config", std::string(ctx) + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (auto& k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) fail("config", "unknown key \"" + it.key() + "\" in " + ctx);
  }
}

inline double get_num(const json& j, const char* ctx, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  check(j[key].is_number(), "config", std::string(ctx) + "." + key + " must be a number");
  return j[key].get<double>();
}

inline int get_int(const json& j, const char* ctx, const char* key, int fallback) {
  if (!j.contains(key)) return fallback;
  check(j[key].is_number_integer(), "config", std::string(ctx) + "." + key + " must be an integer");
  return j[key].get<int>();
}

inline std::uint64_t get_u64(const json& j, const char* ctx, const char* key, std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  check(j[key].is_number_integer() && !j[key].is_number_float(), "config",
        std::string(ctx) + "." + key + " must be an integer");
  check(!(j[key].is_number_integer() && j[key].get<long long>() < 0 && !j[key].is_number_unsigned()),
        "config", std::string(ctx) + "." + key + " must be non-negative");
  return j[key].get<std::uint64_t>();
}

inline bool get_bool(const json& j, const char* ctx, const char* key, bool fallback) {
  if (!j.contains(key)) return fallback;
  check(j[key].is_boolean(), "config", std::string(ctx) + "." + key + " must be a boolean");
  return j[key].get<bool>();
}

inline std::string get_str(const json& j, const char* ctx, const char* key,
                           const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  check(j[key].is_string(), "config", std::string(ctx) + "." + key + " must be a string");
  return j[key].get<std::string>();
}

}  // namespace udaforge::jsonu
