#ifndef OTSHAPE_CSV_HPP_
#define OTSHAPE_CSV_HPP_

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "otshape/errors.hpp"

namespace otshape {

// Minimal numeric CSV: comma-separated, optional single header line.
// Cells that fail to parse become NaN so callers can report row numbers.
class CsvTable {
 public:
  std::vector<std::string> header;           // empty when the file had none
  std::vector<std::vector<double>> data;     // row-major
  std::size_t first_data_line = 1;           // 1-based line of the first data row

  std::size_t rows() const { return data.size(); }
  std::size_t columns() const { return data.empty() ? 0 : data.front().size(); }
  double cell(std::size_t r, std::size_t c) const { return data[r][c]; }
  // 1-based line number in the file for data row r.
  std::size_t file_row(std::size_t r) const { return first_data_line + r; }

  std::optional<std::size_t> column_index(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline double parse_cell(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  char* end = nullptr;
  const double value = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::numeric_limits<double>::quiet_NaN();
  return value;
}

inline bool looks_numeric(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return false;
  char* end = nullptr;
  (void)std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

}  // namespace detail

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  CsvTable table;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> cells = detail::split_csv_line(line);
    if (first) {
      first = false;
      bool any_non_numeric = false;
      for (const std::string& c : cells) {
        if (!detail::looks_numeric(c)) any_non_numeric = true;
      }
      if (any_non_numeric) {
        for (const std::string& c : cells) table.header.push_back(detail::trim(c));
        table.first_data_line = lineno + 1;
        continue;
      }
      table.first_data_line = lineno;
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const std::string& c : cells) row.push_back(detail::parse_cell(c));
    if (!table.data.empty() && row.size() != table.data.front().size()) {
      throw InputError(path + ": inconsistent column count at line " + std::to_string(lineno));
    }
    table.data.push_back(std::move(row));
  }
  if (table.data.empty()) throw InputError(path + ": no data rows");
  return table;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  out.precision(17);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << "\n";
  }
}

}  // namespace otshape

#endif  // OTSHAPE_CSV_HPP_
