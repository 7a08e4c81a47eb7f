#pragma once

// Minimal CSV helpers shared by the file readers and writers. Values are
// written in shortest round-trip form so a reload reproduces them exactly.

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace nsgp::csv {

std::vector<std::string_view> split(std::string_view line, char sep = ',');
std::string_view trim(std::string_view s);

// Throws ParseError naming `context` when the text is not a finite number.
double parse_double(std::string_view text, std::string_view context);
long parse_long(std::string_view text, std::string_view context);

std::string format(double value);

// Reads non-empty, non-comment lines. The first one is returned as the header.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> comments;  // text after the leading '#'
  std::size_t column(std::string_view name) const;  // throws ParseError
};

Table read(const std::filesystem::path& path);
Table read(std::istream& in, std::string_view source);

std::ofstream open_for_write(const std::filesystem::path& path);

}  // namespace nsgp::csv
