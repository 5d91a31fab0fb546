#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace spilldid {

/// Header plus string cells; quoted fields (RFC 4180) are supported.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> find_column(const std::string& name) const;
  /// Throws IngestError when the column is absent.
  std::size_t column(const std::string& name) const;
};

CsvTable parse_csv(std::istream& in);
CsvTable read_csv(const std::string& path);

std::string csv_field(const std::string& value);
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

/// Shortest text that round-trips the double exactly.
std::string format_double(double v);

}  // namespace spilldid
