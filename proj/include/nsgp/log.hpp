#pragma once

#include <string_view>

namespace nsgp::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

void set_level(Level level);
Level level();
// Accepts debug|info|warn|error|off; returns false on anything else.
bool set_level(std::string_view name);

void debug(std::string_view msg);
void info(std::string_view msg);
void warn(std::string_view msg);

}  // namespace nsgp::log
