#include "ecgcmr/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>

namespace ecgcmr::log {
namespace {

Level parse_env() {
  const char* env = std::getenv("ECGCMR_LOG");
  if (env == nullptr) return Level::warn;
  const std::string s(env);
  if (s == "debug") return Level::debug;
  if (s == "info") return Level::info;
  if (s == "error") return Level::error;
  if (s == "off") return Level::off;
  return Level::warn;
}

std::atomic<int>& level_slot() {
  static std::atomic<int> slot{static_cast<int>(parse_env())};
  return slot;
}

const char* tag(Level l) {
  switch (l) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
    default: return "";
  }
}

}  // namespace

Level threshold() { return static_cast<Level>(level_slot().load(std::memory_order_relaxed)); }

void set_threshold(Level level) { level_slot().store(static_cast<int>(level)); }

void write(Level level, const std::string& message) {
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << "[ecgcmr:" << tag(level) << "] " << message << '\n';
}

}  // namespace ecgcmr::log
