#ifndef CEMB_JSON_UTIL_HPP_
#define CEMB_JSON_UTIL_HPP_

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>

#include "cemb/errors.hpp"
#include "json.hpp"

namespace cemb::json_util {

// Rejects keys outside `allowed`. `what` names the object in the message.
inline void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                               const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (auto k : allowed) known = known || item.key() == k;
    if (!known) throw ConfigError("unknown key '" + item.key() + "' in " + what);
  }
}

// Reads j[key] into out when present; conversion failures become ConfigError.
template <typename V>
void read_optional(const nlohmann::json& j, const char* key, V& out, const std::string& what) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(what + "." + key + ": " + e.what());
  }
}

template <typename V>
void read_required(const nlohmann::json& j, const char* key, V& out, const std::string& what) {
  if (!j.contains(key)) throw ConfigError(what + " is missing '" + key + "'");
  read_optional(j, key, out, what);
}

// 64-bit FNV-1a, used as the integrity hash of checkpoint payloads and manifests.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[std::size_t(i)] = kDigits[v & 0xf];
  return s;
}

}  // namespace cemb::json_util

#endif  // CEMB_JSON_UTIL_HPP_
