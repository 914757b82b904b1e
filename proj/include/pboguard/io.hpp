#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pboguard::io {

// Comma-separated table with a mandatory header row. Fields are trimmed;
// double-quoted fields may contain commas. Blank lines are skipped.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  // 1-based source line of each row

    // Index of a header column, or nullopt.
    std::optional<std::size_t> column(std::string_view name) const;
    // Index of a header column; throws DataError naming the file when missing.
    std::size_t require_column(std::string_view name, std::string_view source) const;
};

CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(std::string_view text, std::string_view source = "<memory>");

// Strict number parsing; the whole field must be consumed.
std::optional<double> parse_double(std::string_view s);
std::optional<std::int64_t> parse_int(std::string_view s);

// Epoch seconds, or ISO-8601 "YYYY-MM-DD", "YYYY-MM-DDTHH:MM[:SS]" with an
// optional trailing "Z" or "+00:00" (space separator also accepted). UTC.
std::optional<std::int64_t> parse_timestamp(std::string_view s);
std::string format_iso8601(std::int64_t epoch_seconds);

// Shortest round-trip representation ("%.17g" trimmed to what is needed).
std::string format_double(double v);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

std::string sha256_hex(std::string_view data);

}  // namespace pboguard::io
