#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

// Text <-> value conversions for `key = value` settings. Every parser throws
// ConfigError mentioning the key on malformed input.

namespace dimlight::values {

std::size_t parse_size(const std::string& key, const std::string& text);
std::uint64_t parse_u64(const std::string& key, const std::string& text);
double parse_double(const std::string& key, const std::string& text);
bool parse_bool(const std::string& key, const std::string& text);
/// Comma-separated list, e.g. "1,2".
std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& text);
/// Exactly two comma-separated numbers, e.g. "2.0,3.5".
std::pair<double, double> parse_range(const std::string& key, const std::string& text);

std::string format_size_list(const std::vector<std::size_t>& v);
/// Shortest text that parses back to the same double.
std::string format_double(double v);
std::string format_bool(bool v);

std::string trim(const std::string& s);

}  // namespace dimlight::values
