#pragma once

#include <atomic>
#include <iostream>
#include <string_view>

namespace hrf::log {

enum class Level : int { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline std::atomic<int>& threshold() {
    static std::atomic<int> level{static_cast<int>(Level::warn)};
    return level;
}

inline void set_level(Level level) { threshold().store(static_cast<int>(level)); }

inline void write(Level level, std::string_view msg) {
    if (static_cast<int>(level) < threshold().load()) return;
    static constexpr const char* tags[] = {"debug", "info", "warn", "error"};
    std::cerr << "[hrf " << tags[static_cast<int>(level)] << "] " << msg << '\n';
}

inline void debug(std::string_view msg) { write(Level::debug, msg); }
inline void info(std::string_view msg) { write(Level::info, msg); }
inline void warn(std::string_view msg) { write(Level::warn, msg); }

}  // namespace hrf::log
