#include "nsgp/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace nsgp::log {
namespace {

std::atomic<Level> g_level{Level::Warn};
std::mutex g_mutex;

void emit(Level lvl, std::string_view tag, std::string_view msg) {
  if (lvl < g_level.load()) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << tag << ": " << msg << '\n';
}

}  // namespace

void set_level(Level lvl) { g_level.store(lvl); }
Level level() { return g_level.load(); }

bool set_level(std::string_view name) {
  if (name == "debug") set_level(Level::Debug);
  else if (name == "info") set_level(Level::Info);
  else if (name == "warn") set_level(Level::Warn);
  else if (name == "error") set_level(Level::Error);
  else if (name == "off") set_level(Level::Off);
  else return false;
  return true;
}

void debug(std::string_view msg) { emit(Level::Debug, "debug", msg); }
void info(std::string_view msg) { emit(Level::Info, "info", msg); }
void warn(std::string_view msg) { emit(Level::Warn, "warning", msg); }

}  // namespace nsgp::log
