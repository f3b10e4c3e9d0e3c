#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace birdast::csv {

// RFC 4180 style: fields containing comma, quote or newline are quoted.
std::string format_row(const std::vector<std::string>& fields);
std::vector<std::string> parse_row(const std::string& line);

// Reads a file whose first line is a header equal to `expected_header`.
// Throws CorruptHeader on mismatch, Io when unreadable.
std::vector<std::vector<std::string>> read_table(const std::filesystem::path& path,
                                                 const std::vector<std::string>& expected_header);

}  // namespace birdast::csv
