#include "tracesim/log.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>

#include "tracesim/time.hpp"

namespace tracesim {
namespace {

std::atomic<LogLevel> g_level{LogLevel::Warn};
std::mutex g_mu;

const char* level_tag(LogLevel level) {
  switch (level) {
    case LogLevel::Debug: return "DEBUG";
    case LogLevel::Info: return "INFO";
    case LogLevel::Warn: return "WARN";
    case LogLevel::Error: return "ERROR";
    default: return "?";
  }
}

}  // namespace

void set_log_level(LogLevel level) { g_level.store(level, std::memory_order_relaxed); }

LogLevel log_level() { return g_level.load(std::memory_order_relaxed); }

void log_line(LogLevel level, const std::string& msg) {
  if (level < g_level.load(std::memory_order_relaxed)) return;
  const std::string now = WallClock().now().to_text();
  std::lock_guard lock(g_mu);
  std::fprintf(stderr, "%s %-5s %s\n", now.c_str(), level_tag(level), msg.c_str());
}

}  // namespace tracesim
