// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

namespace microlab {

/// Shortest-round-trip is not used: every double is written with 17 significant
/// digits so files are byte-stable across runs and exact on reload.
std::string format_double(double v);

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

  template <typename... Ts>
  void row(const Ts&... fields) {
    std::vector<std::string> cells{cell(fields)...};
    write(cells);
  }

  void write(const std::vector<std::string>& cells);

 private:
  template <typename T>
  static std::string cell(const T& v) {
    if constexpr (std::is_floating_point_v<T>)
      return format_double(static_cast<double>(v));
    else if constexpr (std::is_integral_v<T>)
      return std::to_string(v);
    else
      return std::string(v);
  }

  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t columns_;
};

/// Minimal reader for files written by CsvWriter: header plus rows, no quoting.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace microlab
