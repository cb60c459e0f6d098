#pragma once

// Minimal RFC-4180 style reader/writer shared by the log and report code.

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace cnapwp::csv {

class Reader {
public:
  explicit Reader(std::istream& in) : in_(in) {}

  /// Next record, or nullopt at end of input. Throws ParseError on an
  /// unterminated quoted field.
  std::optional<std::vector<std::string>> next();

  /// Line number where the last returned record started (1-based).
  std::size_t line() const noexcept { return record_line_; }

private:
  std::istream& in_;
  std::size_t line_ = 0;
  std::size_t record_line_ = 0;
};

std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace cnapwp::csv
