#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace rsic::util {

// Minimal RFC 4180 fields: commas split, double quotes group and escape.
std::vector<std::string> split_csv_line(std::string_view line);
std::string csv_field(std::string_view value);

// printf %.17g, round-trips any double.
std::string exact_double(double v);

}  // namespace rsic::util
