#pragma once

// Small text helpers shared by the CSV and JSON readers/writers.

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ti::detail {

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

/// Splits on '\n', stripping a trailing '\r' and dropping a final empty line.
std::vector<std::string_view> split_lines(std::string_view text);
std::vector<std::string_view> split_fields(std::string_view line, char sep = ',');
std::string_view trim(std::string_view s);

/// "name:k1=v1,k2=v2" split into the name and its key/value options.
/// Throws InvalidArgument on a malformed option.
struct SpecString {
    std::string_view name;
    std::vector<std::pair<std::string_view, std::string_view>> options;
};
SpecString parse_spec_string(std::string_view text);

/// Strict numeric option parsers; throw InvalidArgument naming `key`.
double option_double(std::string_view key, std::string_view value);
std::size_t option_size(std::string_view key, std::string_view value);

}  // namespace ti::detail
