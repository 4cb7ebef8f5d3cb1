#pragma once

#include <atomic>
#include <iostream>
#include <string>

namespace tofg::log {

enum class Level { kQuiet = 0, kWarn = 1, kInfo = 2 };

inline std::atomic<Level>& level() {
  static std::atomic<Level> current{Level::kWarn};
  return current;
}

inline void warn(const std::string& msg) {
  if (level().load() >= Level::kWarn) std::cerr << "[tofg] warning: " << msg << '\n';
}

inline void info(const std::string& msg) {
  if (level().load() >= Level::kInfo) std::cerr << "[tofg] " << msg << '\n';
}

}  // namespace tofg::log
