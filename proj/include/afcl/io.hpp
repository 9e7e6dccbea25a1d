#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include "afcl/errors.hpp"

namespace afcl {

/// Shortest decimal representation that round-trips to the same double.
/// Used for every numeric field we write (CSV and JSONL) so identical runs
/// produce byte-identical artifacts.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// Minimal CSV writer: caller supplies a header once, then rows of cells.
class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw error("cannot open CSV file for writing: " + path);
  }

  void header(const std::vector<std::string>& cols) { row_strings(cols); }

  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  /// Row of doubles, optionally with leading integer index cells.
  void row(const std::vector<long long>& ints, const std::vector<double>& vals) {
    std::vector<std::string> cells;
    cells.reserve(ints.size() + vals.size());
    for (long long i : ints) cells.push_back(std::to_string(i));
    for (double v : vals) cells.push_back(format_double(v));
    row_strings(cells);
  }

 private:
  std::ofstream out_;
};

}  // namespace afcl
