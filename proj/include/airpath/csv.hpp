#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace airpath {

/// Numeric table with a header row, the on-disk shape of every trajectory
/// and log this project writes.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  /// Index of a named column; throws InputError when absent.
  std::size_t column(const std::string& name) const;
  std::vector<double> column_values(const std::string& name) const;
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

/// Formats with enough digits to round-trip a double.
std::string format_double(double v);

}  // namespace airpath
