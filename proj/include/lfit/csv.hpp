#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace lfit::csv {

/// Splits one CSV record; double-quoted fields may contain commas and "" escapes.
std::vector<std::string> split_record(std::string_view line);

/// Quotes a field when it contains a comma, quote or newline.
std::string escape(std::string_view field);

/// Shortest text that parses back to exactly `value`.
std::string format_double(double value);

/// Parses a finite double; returns false for empty/NA markers or garbage.
bool parse_double(std::string_view text, double& out);

bool is_missing_marker(std::string_view text);

std::string trim(std::string_view text);

/// Reads the whole file; throws IngestionError when it cannot be opened.
std::string read_file(const std::string& path);

void write_row(std::ostream& os, const std::vector<std::string>& fields);

}  // namespace lfit::csv
