#ifndef TFILTER_CSV_HPP
#define TFILTER_CSV_HPP

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "tfilter/common.hpp"

namespace tfilter {

/// Shortest round-trip decimal form, deterministic across runs.
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header)
      : out_(path) {
    if (!out_) throw ConfigError("cannot open " + path + " for writing");
    write_row(header);
  }

  void write_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

private:
  std::ofstream out_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

/// Reads a numeric CSV with a header line.
CsvTable read_csv(const std::string& path);

}  // namespace tfilter

#endif
