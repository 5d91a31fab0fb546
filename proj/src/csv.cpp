#include "spilldid/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "spilldid/errors.hpp"

namespace spilldid {

std::optional<std::size_t> CsvTable::find_column(const std::string& name) const {
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return j;
  return std::nullopt;
}

std::size_t CsvTable::column(const std::string& name) const {
  if (auto j = find_column(name)) return *j;
  throw IngestError("column '" + name + "' not found in header");
}

namespace {

// Reads one record; returns false at end of input.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  if (in.peek() == std::char_traits<char>::eof()) return false;
  std::string field;
  bool quoted = false, any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      break;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw IngestError("unterminated quoted field");
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

}  // namespace

CsvTable parse_csv(std::istream& in) {
  CsvTable t;
  if (!read_record(in, t.header)) throw IngestError("empty CSV input");
  if (!t.header.empty() && t.header[0].rfind("\xEF\xBB\xBF", 0) == 0) t.header[0].erase(0, 3);
  std::vector<std::string> rec;
  long line = 1;
  while (read_record(in, rec)) {
    ++line;
    if (rec.size() == 1 && rec[0].empty()) continue;  // blank line
    if (rec.size() != t.header.size())
      throw IngestError("row " + std::to_string(line - 1) + " has " + std::to_string(rec.size()) +
                            " fields, header has " + std::to_string(t.header.size()),
                        {line - 1});
    t.rows.push_back(rec);
  }
  return t;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open '" + path + "'");
  return parse_csv(in);
}

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n\r") == std::string::npos) return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t j = 0; j < fields.size(); ++j) {
    if (j) out << ',';
    out << csv_field(fields[j]);
  }
  out << '\n';
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace spilldid
