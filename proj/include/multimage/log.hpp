#pragma once

#include <atomic>
#include <cstdio>
#include <string_view>

#include <fmt/core.h>

namespace multimage::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::kInfo};
  return level;
}

inline void set_level(Level level) { threshold().store(level); }

template <typename... Args>
void write(Level level, fmt::format_string<Args...> f, Args&&... args) {
  if (level < threshold().load()) return;
  static constexpr std::string_view kTags[] = {"debug", "info", "warn", "error"};
  fmt::print(stderr, "[{}] {}\n", kTags[static_cast<int>(level)],
             fmt::format(f, std::forward<Args>(args)...));
}

template <typename... Args>
void info(fmt::format_string<Args...> f, Args&&... args) {
  write(Level::kInfo, f, std::forward<Args>(args)...);
}

template <typename... Args>
void warn(fmt::format_string<Args...> f, Args&&... args) {
  write(Level::kWarn, f, std::forward<Args>(args)...);
}

template <typename... Args>
void debug(fmt::format_string<Args...> f, Args&&... args) {
  write(Level::kDebug, f, std::forward<Args>(args)...);
}

}  // namespace multimage::log
