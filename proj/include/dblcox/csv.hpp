#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dblcox::csv {

/// One parsed record plus the 1-based line it started on.
struct Record {
  std::vector<std::string> fields;
  long line = 0;
};

/// Minimal RFC 4180 reader: comma separated, optional double quotes,
/// CRLF or LF line endings. Blank lines are skipped.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  std::optional<Record> next();

 private:
  std::istream& in_;
  long line_ = 0;
};

/// Column lookup by header name; returns -1 when absent.
int find_column(const std::vector<std::string>& header, std::string_view name);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double x);

/// Strict parse of a double; nullopt on empty or trailing garbage.
std::optional<double> parse_double(std::string_view text);

/// Quote a field when it contains a comma, quote, or newline.
std::string escape(std::string_view field);

/// Join already-formatted fields into one CSV line (no newline).
std::string join(const std::vector<std::string>& fields);

}  // namespace dblcox::csv
