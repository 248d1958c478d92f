#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cissl::csv {

// Shortest decimal string that parses back to the identical double.
std::string format_double(double v);
double parse_double(std::string_view s);
long long parse_int(std::string_view s);

std::vector<std::string> split(std::string_view line, char sep = ',');
std::string join(const std::vector<std::string>& fields, char sep = ',');

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Header row mandatory. Throws std::runtime_error on I/O failure or ragged rows.
Table read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const Table& table);

}  // namespace cissl::csv
