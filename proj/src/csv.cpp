#include "airpath/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "airpath/errors.hpp"

namespace airpath {

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw InputError("csv has no column '" + name + "'");
}

std::vector<double> CsvTable::column_values(const std::string& name) const {
  const auto c = column(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.at(c));
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    out << (i ? "," : "") << table.header[i];
  }
  out << '\n';
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size()) {
      throw InputError("csv row width does not match header");
    }
    for (std::size_t i = 0; i < row.size(); ++i) {
      out << (i ? "," : "") << format_double(row[i]);
    }
    out << '\n';
  }
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + " is empty");
  {
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) table.header.push_back(cell);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (start <= line.size()) {
      auto end = line.find(',', start);
      if (end == std::string::npos) end = line.size();
      double v = 0.0;
      auto [ptr, ec] =
          std::from_chars(line.data() + start, line.data() + end, v);
      if (ec != std::errc()) {
        throw InputError(path.string() + ": non-numeric cell");
      }
      row.push_back(v);
      start = end + 1;
    }
    if (row.size() != table.header.size()) {
      throw InputError(path.string() + ": ragged row");
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace airpath
