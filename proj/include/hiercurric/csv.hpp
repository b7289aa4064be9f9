#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace hiercurric::csv {

using Row = std::vector<std::string>;

/// RFC-4180 field encoding: quoted when the field holds a comma, quote, CR or LF.
std::string escape(std::string_view field);
std::string format_row(const Row& row);

/// Parses a whole document. Lines end in LF or CRLF; quoted fields may span lines.
std::vector<Row> parse(std::string_view text);

std::vector<Row> read_file(const std::filesystem::path& path);

/// Writes header + rows with CRLF-free LF line endings.
void write_file(const std::filesystem::path& path, const Row& header, const std::vector<Row>& rows);

/// Fixed-point formatting used by every numeric CSV column ("%.*f").
std::string fixed(double value, int decimals);

/// Shortest round-trip formatting for doubles.
std::string round_trip(double value);

}  // namespace hiercurric::csv
