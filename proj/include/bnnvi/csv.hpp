#pragma once

#include <fstream>
#include <string>
#include <vector>

namespace bnnvi {

// Shortest-round-trip formatting; NaN serializes as the literal token "nan".
std::string format_double(double v);

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);

  void row(const std::vector<std::string>& cells);

  static std::string cell(double v) { return format_double(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(const std::string& v) { return v; }

 private:
  std::ofstream out_;
  std::size_t width_;
};

}  // namespace bnnvi
