#pragma once

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string_view>

namespace advpol::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("ADVPOL_LOG");
    if (env == nullptr) return Level::info;
    const std::string_view v(env);
    if (v == "error") return Level::error;
    if (v == "warn") return Level::warn;
    if (v == "debug") return Level::debug;
    if (v == "off" || v == "quiet") return static_cast<Level>(-1);
    return Level::info;
  }();
  return level;
}

template <typename... Args>
void write(Level level, std::string_view tag, const Args&... args) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  std::ostringstream os;
  os << "[" << tag << "] ";
  (os << ... << args);
  os << '\n';
  std::cerr << os.str();
}

template <typename... Args> void error(const Args&... a) { write(Level::error, "error", a...); }
template <typename... Args> void warn(const Args&... a) { write(Level::warn, "warn", a...); }
template <typename... Args> void info(const Args&... a) { write(Level::info, "info", a...); }
template <typename... Args> void debug(const Args&... a) { write(Level::debug, "debug", a...); }

}  // namespace advpol::log
