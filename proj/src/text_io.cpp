#include "text_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ti/error.hpp"
#include "ti/numeric.hpp"

namespace ti::detail {

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "' for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::Io, "write failed for '" + path.string() + "'");
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        start = end + 1;
    }
    return lines;
}

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t end = line.find(sep, start);
        if (end == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, end - start));
        start = end + 1;
    }
    return fields;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

SpecString parse_spec_string(std::string_view text) {
    SpecString out;
    text = trim(text);
    const std::size_t colon = text.find(':');
    out.name = trim(text.substr(0, colon));
    if (colon == std::string_view::npos) return out;
    for (std::string_view field : split_fields(text.substr(colon + 1))) {
        field = trim(field);
        if (field.empty()) continue;
        const std::size_t eq = field.find('=');
        if (eq == std::string_view::npos || eq == 0)
            throw Error(ErrorCode::InvalidArgument, "malformed option '" + std::string(field) + "' (expected key=value)");
        out.options.emplace_back(trim(field.substr(0, eq)), trim(field.substr(eq + 1)));
    }
    return out;
}

double option_double(std::string_view key, std::string_view value) {
    double out = 0.0;
    if (!parse_double(value, out) || !std::isfinite(out))
        throw Error(ErrorCode::InvalidArgument,
                    "option '" + std::string(key) + "' needs a finite number, got '" + std::string(value) + "'");
    return out;
}

std::size_t option_size(std::string_view key, std::string_view value) {
    std::size_t out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (value.empty() || ec != std::errc() || ptr != value.data() + value.size())
        throw Error(ErrorCode::InvalidArgument,
                    "option '" + std::string(key) + "' needs a non-negative integer, got '" + std::string(value) + "'");
    return out;
}

}  // namespace ti::detail
