#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace nsgp::cli {

inline constexpr const char* kVersion = "0.1.0";

// Runs one command line (argv[0] is the program name). Returns 0 on
// success, 1 on validation errors and 2 on numerical failures; errors are
// printed to stderr as `ERROR:<code>: <message>`.
int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);

std::uint64_t fnv1a(std::string_view data);

}  // namespace nsgp::cli
