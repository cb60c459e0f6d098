#include "csv.hpp"

#include "cnapwp/errors.hpp"

namespace cnapwp::csv {

std::optional<std::vector<std::string>> Reader::next() {
  std::string raw;
  while (true) {
    if (!std::getline(in_, raw)) return std::nullopt;
    ++line_;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (!raw.empty()) break;
  }
  record_line_ = line_;

  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  std::size_t i = 0;
  while (true) {
    if (i == raw.size()) {
      if (!quoted) break;
      // Quoted field spans a newline.
      std::string more;
      if (!std::getline(in_, more)) throw ParseError("unterminated quoted field", record_line_);
      ++line_;
      if (!more.empty() && more.back() == '\r') more.pop_back();
      field.push_back('\n');
      raw = std::move(more);
      i = 0;
      continue;
    }
    const char c = raw[i++];
    if (quoted) {
      if (c == '"') {
        if (i < raw.size() && raw[i] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << escape(fields[i]);
  }
  out << '\n';
}

}  // namespace cnapwp::csv
