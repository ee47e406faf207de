#pragma once

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace structsum::logging {

enum class Level { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

// Verbosity comes from STRUCTSUM_LOG (error|warn|info|debug); default warn.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("STRUCTSUM_LOG");
    if (env == nullptr) return Level::kWarn;
    std::string_view v(env);
    if (v == "error") return Level::kError;
    if (v == "info") return Level::kInfo;
    if (v == "debug") return Level::kDebug;
    return Level::kWarn;
  }();
  return level;
}

inline void emit(Level level, std::string_view tag, std::string_view msg) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  std::cerr << "[structsum " << tag << "] " << msg << '\n';
}

inline void warn(std::string_view msg) { emit(Level::kWarn, "warn", msg); }
inline void info(std::string_view msg) { emit(Level::kInfo, "info", msg); }
inline void debug(std::string_view msg) { emit(Level::kDebug, "debug", msg); }

}  // namespace structsum::logging
