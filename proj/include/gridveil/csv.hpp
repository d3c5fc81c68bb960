#pragma once

// Comma-separated tables as written by the runner: a header row, no quoting,
// floats with 17 significant digits so values round-trip exactly.

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gridveil::csv {

std::string format(double v);

class Writer {
 public:
  explicit Writer(std::vector<std::string> header);
  Writer& cell(double v);
  Writer& cell(std::string_view s);  // commas and newlines are replaced
  Writer& cell(long long v);
  void end_row();
  const std::string& text() const noexcept { return text_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::size_t columns_;
  std::size_t filled_ = 0;
  std::string text_;
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of `name`, or header.size() when absent.
  std::size_t column(std::string_view name) const;
  bool has(std::string_view name) const { return column(name) < header.size(); }
  /// Throws Parse with the byte offset of the offending cell.
  double number(std::size_t row, std::size_t col) const;
  std::vector<double> numbers(std::string_view name) const;

  std::vector<std::size_t> row_offsets;  // byte offset of each row in the source
  std::vector<std::vector<std::size_t>> cell_offsets;
};

/// Throws Parse with a byte offset on ragged rows or an empty input.
Table parse(std::string_view text);
Table load(const std::filesystem::path& path);

}  // namespace gridveil::csv
