#include "cissl/log.hpp"

#include <iostream>
#include <mutex>

namespace cissl {

namespace {

std::mutex g_mutex;
std::function<void(LogLevel, std::string_view)> g_sink = [](LogLevel level, std::string_view msg) {
  std::cerr << (level == LogLevel::warning ? "[warn] " : "[info] ") << msg << '\n';
};

}  // namespace

void set_log_sink(std::function<void(LogLevel, std::string_view)> sink) {
  std::lock_guard lock(g_mutex);
  g_sink = std::move(sink);
}

void log_message(LogLevel level, std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (g_sink) g_sink(level, message);
}

}  // namespace cissl
