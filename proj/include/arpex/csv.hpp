#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

namespace arpex {

inline constexpr const char* kCsvVersionLine = "# arpex-v1";

// Opens a CSV for writing with the schema version comment and header line.
inline std::ofstream open_csv(const std::string& path,
                              const std::string& header) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << kCsvVersionLine << "\n" << header << "\n";
  return out;
}

// Fixed formatting so reruns reproduce output files byte for byte.
inline std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace arpex
