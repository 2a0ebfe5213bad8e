#pragma once

#include <fstream>
#include <istream>
#include <string>
#include <vector>

#include "histo/error.hpp"

namespace histo::csv {

/// Splits one line on commas. Fields are never quoted in this toolkit's
/// formats, so ids must not contain commas.
inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

struct Table {
  std::string source;
  std::vector<std::string> header;
  /// Data rows with their 1-based line numbers.
  std::vector<std::pair<int, std::vector<std::string>>> rows;

  std::string where(int line) const { return source + ":" + std::to_string(line) + ": "; }
};

/// Reads a header + rows CSV, checking the header matches `expected` and
/// every row has the same number of fields.
inline Table read(std::istream& in, const std::string& source,
                  const std::vector<std::string>& expected) {
  Table t;
  t.source = source;
  std::string line;
  int lineno = 0;
  if (!std::getline(in, line)) throw Error(ErrorKind::MalformedFile, source + ": missing header");
  ++lineno;
  t.header = split(line);
  if (t.header != expected) {
    std::string want;
    for (std::size_t i = 0; i < expected.size(); ++i) want += (i ? "," : "") + expected[i];
    throw Error(ErrorKind::MalformedFile, source + ": header must be '" + want + "'");
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split(line);
    if (fields.size() != expected.size()) {
      throw Error(ErrorKind::MalformedFile, t.where(lineno) + "expected " +
                                                std::to_string(expected.size()) + " fields, got " +
                                                std::to_string(fields.size()));
    }
    t.rows.emplace_back(lineno, std::move(fields));
  }
  return t;
}

inline Table read_file(const std::string& path, const std::vector<std::string>& expected) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  return read(in, path, expected);
}

}  // namespace histo::csv
