// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "microlab/csv.hpp"

#include <cstdio>
#include <sstream>

#include "microlab/error.hpp"

namespace microlab {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : path_(path), out_(path, std::ios::binary), columns_(header.size()) {
  if (!out_) throw DataError("cannot write " + path.string());
  write(header);
}

void CsvWriter::write(const std::vector<std::string>& cells) {
  require(cells.size() == columns_, "CsvWriter: row width differs from header in " + path_.string());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    require(cells[i].find_first_of(",\n\"") == std::string::npos,
            "CsvWriter: field '" + cells[i] + "' needs quoting, which is not supported");
    if (i) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
  out_.flush();
  if (!out_) throw DataError("write failed for " + path_.string());
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size())
        throw DataError(path.string() + ": row " + std::to_string(t.rows.size() + 1) + " has " +
                        std::to_string(cells.size()) + " fields, header has " + std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

}  // namespace microlab
