#include "gridveil/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>

#include "gridveil/error.hpp"

namespace gridveil::csv {

std::string format(double v) {
  char buf[40];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

Writer::Writer(std::vector<std::string> header) : columns_(header.size()) {
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (k) text_ += ',';
    text_ += header[k];
  }
  text_ += '\n';
}

Writer& Writer::cell(double v) { return cell(std::string_view(format(v))); }

Writer& Writer::cell(long long v) { return cell(std::string_view(std::to_string(v))); }

Writer& Writer::cell(std::string_view s) {
  if (filled_ == columns_) throw Error(ErrorKind::InvalidInput, "csv row has too many cells");
  if (filled_++) text_ += ',';
  for (char c : s) text_ += (c == ',' ? ';' : (c == '\n' || c == '\r') ? ' ' : c);
  return *this;
}

void Writer::end_row() {
  if (filled_ != columns_)
    throw Error(ErrorKind::InvalidInput, "csv row has " + std::to_string(filled_) + " of " +
                                             std::to_string(columns_) + " cells");
  text_ += '\n';
  filled_ = 0;
}

void Writer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text_;
  if (!out) throw Error(ErrorKind::Io, "short write to " + path.string());
}

std::size_t Table::column(std::string_view name) const {
  for (std::size_t k = 0; k < header.size(); ++k)
    if (header[k] == name) return k;
  return header.size();
}

double Table::number(std::size_t row, std::size_t col) const {
  const std::string& s = rows.at(row).at(col);
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    // from_chars rejects inf/nan spellings that printf produces.
    if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw Error(ErrorKind::Parse, "bad number '" + s + "' in column " + header[col] +
                                      " at byte offset " + std::to_string(cell_offsets[row][col]));
  }
  return v;
}

std::vector<double> Table::numbers(std::string_view name) const {
  const std::size_t col = column(name);
  if (col == header.size())
    throw Error(ErrorKind::Parse, "missing column " + std::string(name));
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out.push_back(number(r, col));
  return out;
}

Table parse(std::string_view text) {
  Table t;
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const std::size_t line_start = pos;
    pos = eol + 1;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::vector<std::size_t> offsets;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::size_t end = comma == std::string_view::npos ? line.size() : comma;
      cells.emplace_back(line.substr(start, end - start));
      offsets.push_back(line_start + start);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (first) {
      t.header = std::move(cells);
      first = false;
      continue;
    }
    if (cells.size() != t.header.size())
      throw Error(ErrorKind::Parse, "row has " + std::to_string(cells.size()) + " cells, header has " +
                                        std::to_string(t.header.size()) + " at byte offset " +
                                        std::to_string(line_start));
    t.rows.push_back(std::move(cells));
    t.row_offsets.push_back(line_start);
    t.cell_offsets.push_back(std::move(offsets));
  }
  if (first) throw Error(ErrorKind::Parse, "empty table at byte offset 0");
  return t;
}

Table load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(text);
}

}  // namespace gridveil::csv
