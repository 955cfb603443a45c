#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>

#include <json.hpp>

#include "compressbench/error.hpp"

namespace compressbench::detail {

using nlohmann::json;

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIo, "cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline json parse_json(std::string_view text, std::string_view context) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, std::string(context) + ": " + e.what());
  }
}

// Locale-independent decimal parse of the whole string.
inline double parse_double(std::string_view text, std::string_view context) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) {
    text.remove_prefix(1);
  }
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' ||
                           text.back() == '\r')) {
    text.remove_suffix(1);
  }
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw Error(ErrorCode::kParse, std::string(context) + ": not a number: '" +
                                       std::string(text) + "'");
  }
  return value;
}

template <typename T>
T get_field(const json& object, const char* key, std::string_view context) {
  auto it = object.find(key);
  if (it == object.end()) {
    throw Error(ErrorCode::kParse,
                std::string(context) + ": missing field '" + key + "'");
  }
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string(context) + ": field '" + key +
                                       "': " + e.what());
  }
}

template <typename T>
T get_field_or(const json& object, const char* key, T fallback,
               std::string_view context) {
  if (!object.contains(key) || object.at(key).is_null()) return fallback;
  return get_field<T>(object, key, context);
}

}  // namespace compressbench::detail
