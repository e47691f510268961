#pragma once

#include <functional>
#include <string>

namespace cocodr::log {

enum class Level { kDebug, kInfo, kWarn, kError };

using Sink = std::function<void(Level, const std::string&)>;

/// Replaces the process-wide sink (default: stderr, info and above).
void set_sink(Sink sink);
void set_min_level(Level level);

void write(Level level, const std::string& message);
inline void info(const std::string& m) { write(Level::kInfo, m); }
inline void warn(const std::string& m) { write(Level::kWarn, m); }
inline void debug(const std::string& m) { write(Level::kDebug, m); }

}  // namespace cocodr::log
