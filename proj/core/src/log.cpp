#include "punchline/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace punchline::log {
namespace {

std::atomic<Level> g_level{Level::kInfo};
std::ostream* g_sink = nullptr;
std::mutex g_mutex;

const char* name(Level level) {
  switch (level) {
    case Level::kDebug: return "debug";
    case Level::kInfo: return "info";
    case Level::kWarn: return "warn";
    case Level::kError: return "error";
    case Level::kOff: break;
  }
  return "off";
}

}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

void set_sink(std::ostream* sink) {
  std::lock_guard lock(g_mutex);
  g_sink = sink;
}

void emit(Level level, std::string_view event, const nlohmann::json& fields) {
  if (level < g_level.load() || level == Level::kOff) return;
  nlohmann::ordered_json line;
  line["level"] = name(level);
  line["event"] = event;
  if (fields.is_object()) {
    for (const auto& [key, value] : fields.items()) line[key] = value;
  }
  std::lock_guard lock(g_mutex);
  std::ostream& out = g_sink ? *g_sink : std::cerr;
  out << line.dump() << '\n';
}

}  // namespace punchline::log
