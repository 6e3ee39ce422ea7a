#pragma once

// RFC-4180 CSV: CRLF record separators, fields quoted when they contain a
// comma, quote or line break.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "featprobe/error.hpp"

namespace featprobe::csv {

/// Shortest representation that round-trips to the same double.
inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << quote(fields[i]);
    }
    out_ << "\r\n";
  }

 private:
  std::ostream& out_;
};

using Table = std::vector<std::vector<std::string>>;

inline Table parse(std::istream& in) {
  Table table;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, fieldStarted = false;
  char c;
  auto endField = [&] {
    row.push_back(std::move(field));
    field.clear();
    fieldStarted = false;
  };
  auto endRow = [&] {
    endField();
    table.push_back(std::move(row));
    row.clear();
  };
  while (in.get(c)) {
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
      continue;
    }
    if (c == '"' && field.empty()) {
      quoted = true;
      fieldStarted = true;
    } else if (c == ',') {
      endField();
      fieldStarted = true;
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get(c);
      endRow();
    } else if (c == '\n') {
      endRow();
    } else {
      field += c;
      fieldStarted = true;
    }
  }
  require(!quoted, Errc::corrupt_header, "unterminated quoted CSV field");
  if (fieldStarted || !field.empty() || !row.empty()) endRow();
  return table;
}

inline Table read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::io, "cannot read " + path.string());
  return parse(in);
}

}  // namespace featprobe::csv
