#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <sstream>

namespace linkweave::log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

/// Level from LINKWEAVE_LOG (error, warn, info, debug); warn by default.
inline Level threshold() {
  static const Level level = [] {
    const char* v = std::getenv("LINKWEAVE_LOG");
    if (!v) return Level::Warn;
    if (!std::strcmp(v, "error")) return Level::Error;
    if (!std::strcmp(v, "info")) return Level::Info;
    if (!std::strcmp(v, "debug")) return Level::Debug;
    return Level::Warn;
  }();
  return level;
}

template <typename... Args>
void write(Level level, const Args&... args) {
  if (level > threshold()) return;
  static constexpr const char* kNames[] = {"error", "warn", "info", "debug"};
  std::ostringstream os;
  os << "linkweave " << kNames[static_cast<int>(level)] << ": ";
  (os << ... << args);
  os << '\n';
  std::fputs(os.str().c_str(), stderr);
}

template <typename... Args> void error(const Args&... a) { write(Level::Error, a...); }
template <typename... Args> void warn(const Args&... a) { write(Level::Warn, a...); }
template <typename... Args> void info(const Args&... a) { write(Level::Info, a...); }
template <typename... Args> void debug(const Args&... a) { write(Level::Debug, a...); }

}  // namespace linkweave::log
