#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <string>

namespace pgasr::log {

enum class Level { quiet = 0, info = 1, debug = 2 };

inline std::atomic<int>& level_ref() {
  static std::atomic<int> level{static_cast<int>(Level::quiet)};
  return level;
}
inline void set_level(Level l) { level_ref().store(static_cast<int>(l)); }
inline bool enabled(Level l) { return level_ref().load() >= static_cast<int>(l); }

inline void write(Level l, const std::string& message) {
  if (!enabled(l)) return;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << "[pgasr] " << message << '\n';
}
inline void info(const std::string& message) { write(Level::info, message); }
inline void debug(const std::string& message) { write(Level::debug, message); }

}  // namespace pgasr::log
