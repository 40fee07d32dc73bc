#include "fedsim/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace fedsim {

namespace {
std::atomic<bool> g_enabled{true};
std::mutex g_mutex;
}  // namespace

void log_note(const std::string& message) {
  if (!g_enabled.load()) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "[fedsim] " << message << "\n";
}

void set_log_enabled(bool enabled) { g_enabled.store(enabled); }

}  // namespace fedsim
