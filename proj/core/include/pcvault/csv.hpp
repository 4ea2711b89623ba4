#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace pcvault::csv {

// Minimal comma-separated tables. Fields never contain commas or newlines;
// the writer rejects them rather than quoting.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by name; throws InvalidArgument.
  std::size_t column(std::string_view name) const;
  bool operator==(const Table&) const = default;
};

std::string write(const Table& t);

// Every row must have as many fields as the header. When `expected_header`
// is given the first line must match it exactly.
Table parse(std::string_view text, const std::vector<std::string>* expected_header = nullptr);

std::string format_double(double v);  // 17 significant digits, round-trips
double parse_double(std::string_view s);
long long parse_int(std::string_view s);

}  // namespace pcvault::csv
