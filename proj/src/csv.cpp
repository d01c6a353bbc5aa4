#include "tfilter/csv.hpp"

#include <sstream>

namespace tfilter {

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) t.header.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigError(path + ": non-numeric cell '" + cell + "'");
      }
    }
    if (row.size() != t.header.size())
      throw ConfigError(path + ": ragged row");
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace tfilter
