#pragma once

#include <functional>
#include <string_view>

namespace cissl {

enum class LogLevel { info, warning };

// Process-wide sink for diagnostics; defaults to stderr. Pass an empty
// function to silence output.
void set_log_sink(std::function<void(LogLevel, std::string_view)> sink);
void log_message(LogLevel level, std::string_view message);
inline void log_warning(std::string_view message) { log_message(LogLevel::warning, message); }
inline void log_info(std::string_view message) { log_message(LogLevel::info, message); }

}  // namespace cissl
