#pragma once

#include <string>
#include <vector>

namespace fedclust::io {

// Minimal CSV support for the project's own artifacts: comma separation,
// no quoting (field values never contain commas), '\n' line ends.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by name; throws ParseError when absent.
  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

// Doubles are formatted with %.17g so a written table re-reads bit-exactly.
std::string format_double(double v);
double parse_double(const std::string& s, const std::string& context);
long long parse_int(const std::string& s, const std::string& context);
unsigned long long parse_uint(const std::string& s, const std::string& context);

}  // namespace fedclust::io
