#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace anchorpheno {

// Shortest-faithful decimal: 17 significant digits round-trip any double.
std::string format_double(double v);

std::string format_seed(uint64_t seed);

std::vector<std::string> split(std::string_view line, char sep);

std::string join(const std::vector<std::string>& parts, char sep);

// Whole-file helpers. Writes go through a temp file + rename so a report
// path is never observed half-written.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

std::vector<std::string> read_lines(const std::string& path);

std::string hex64(uint64_t v);

}  // namespace anchorpheno
