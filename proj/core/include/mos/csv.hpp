// SPDX-License-Identifier: Apache-2.0
//
// Minimal CSV output: comma separated, '.' decimal point, LF line endings,
// shortest round-trip formatting for doubles.
#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace mos {

/// Shortest representation that parses back to the same double.
std::string format_number(double value);
std::string format_number(std::int64_t value);
/// Empty string for nullopt.
std::string format_number(const std::optional<double>& value);

/// Joins values with `sep`, formatting each with format_number().
std::string join_numbers(const std::vector<double>& values, char sep);

class CsvWriter {
 public:
  /// Truncates `path` and writes the header row. Throws Error if the file
  /// cannot be opened.
  CsvWriter(const std::string& path, const std::vector<std::string>& header);

  void row(const std::vector<std::string>& cells);
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
  std::size_t columns_;
};

/// Header plus rows of a CSV file, split on commas (no quoting support).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
CsvTable read_csv(const std::string& path);

}  // namespace mos
