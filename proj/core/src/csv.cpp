#include "pcvault/csv.hpp"

#include <charconv>
#include <cstdio>

#include "pcvault/error.hpp"

namespace pcvault::csv {

namespace {

void append_row(std::string& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].find_first_of(",\n\r") != std::string::npos) {
      throw Error(Errc::InvalidArgument, "csv field contains a separator: " + fields[i]);
    }
    if (i) out += ',';
    out += fields[i];
  }
  out += '\n';
}

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw Error(Errc::InvalidArgument, "csv has no column " + std::string(name));
}

std::string write(const Table& t) {
  std::string out;
  append_row(out, t.header);
  for (const auto& r : t.rows) {
    if (r.size() != t.header.size()) throw Error(Errc::InvalidArgument, "csv row width differs from header");
    append_row(out, r);
  }
  return out;
}

Table parse(std::string_view text, const std::vector<std::string>* expected_header) {
  Table t;
  bool first = true;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = split(line);
    if (first) {
      if (expected_header && fields != *expected_header) {
        throw Error(Errc::InvalidArgument, "unexpected csv header: " + std::string(line));
      }
      t.header = std::move(fields);
      first = false;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw Error(Errc::InvalidArgument, "csv line " + std::to_string(line_no) + " has the wrong width");
    }
    t.rows.push_back(std::move(fields));
  }
  if (first) throw Error(Errc::InvalidArgument, "empty csv");
  return t;
}

std::string format_double(double v) {
  char buf[40];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

double parse_double(std::string_view s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    throw Error(Errc::InvalidArgument, "not a number: " + std::string(s));
  }
  return v;
}

long long parse_int(std::string_view s) {
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    throw Error(Errc::InvalidArgument, "not an integer: " + std::string(s));
  }
  return v;
}

}  // namespace pcvault::csv
