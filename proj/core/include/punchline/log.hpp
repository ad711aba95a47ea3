#pragma once

// Structured JSON-lines logging to stderr (or any stream).

#include <iosfwd>
#include <string_view>

#include <nlohmann/json.hpp>

namespace punchline::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

void set_level(Level level);
Level level();
// nullptr restores std::cerr.
void set_sink(std::ostream* sink);

void emit(Level level, std::string_view event, const nlohmann::json& fields = nlohmann::json::object());

inline void debug(std::string_view event, const nlohmann::json& fields = nlohmann::json::object()) {
  emit(Level::kDebug, event, fields);
}
inline void info(std::string_view event, const nlohmann::json& fields = nlohmann::json::object()) {
  emit(Level::kInfo, event, fields);
}
inline void warn(std::string_view event, const nlohmann::json& fields = nlohmann::json::object()) {
  emit(Level::kWarn, event, fields);
}
inline void error(std::string_view event, const nlohmann::json& fields = nlohmann::json::object()) {
  emit(Level::kError, event, fields);
}

}  // namespace punchline::log
