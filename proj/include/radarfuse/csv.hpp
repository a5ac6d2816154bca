#pragma once

#include <charconv>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "radarfuse/errors.hpp"

// Small helpers shared by the comma-separated text formats (targets, point
// clouds, correspondence pairs).

namespace radarfuse::detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) {
        const auto b = field.find_first_not_of(" \t\r");
        const auto e = field.find_last_not_of(" \t\r");
        fields.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
    }
    return fields;
}

inline double parse_double_field(const std::string& field, const std::string& path, int line_no) {
    double value = 0.0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": expected a finite number, got '" +
                         field + "'");
    }
    return value;
}

}  // namespace radarfuse::detail
