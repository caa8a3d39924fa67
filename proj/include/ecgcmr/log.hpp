#pragma once

#include <sstream>
#include <string>

namespace ecgcmr::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

/// Threshold from ECGCMR_LOG (debug|info|warn|error|off); default warn.
Level threshold();
void set_threshold(Level level);
void write(Level level, const std::string& message);

template <typename... Args>
std::string concat(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

template <typename... Args>
void debug(const Args&... args) {
  if (threshold() <= Level::debug) write(Level::debug, concat(args...));
}
template <typename... Args>
void info(const Args&... args) {
  if (threshold() <= Level::info) write(Level::info, concat(args...));
}
template <typename... Args>
void warn(const Args&... args) {
  if (threshold() <= Level::warn) write(Level::warn, concat(args...));
}
template <typename... Args>
void error(const Args&... args) {
  if (threshold() <= Level::error) write(Level::error, concat(args...));
}

}  // namespace ecgcmr::log
