#include "prl/csv.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <ostream>

namespace prl {

namespace {
std::string locate(const std::string &what, std::size_t line,
                   std::size_t column) {
  std::string msg = what;
  if (line != 0) {
    msg += " (line " + std::to_string(line);
    if (column != 0)
      msg += ", column " + std::to_string(column);
    msg += ")";
  }
  return msg;
}
} // namespace

FormatError::FormatError(const std::string &what, std::size_t line,
                         std::size_t column)
    : std::runtime_error(locate(what, line, column)), line_(line),
      column_(column) {}

namespace csv {

Row split_line(std::string_view line, std::size_t line_no) {
  Row cells;
  std::string cell;
  bool in_quotes = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cell.push_back(c);
      }
    } else if (c == '"' && cell.empty() && !was_quoted) {
      in_quotes = true;
      was_quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
      was_quoted = false;
    } else if (c == '\r' && i + 1 == line.size()) {
      // tolerate CRLF
    } else {
      cell.push_back(c);
    }
  }
  if (in_quotes)
    throw FormatError("unterminated quoted cell", line_no, cells.size() + 1);
  cells.push_back(std::move(cell));
  return cells;
}

Document read_file(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw FormatError("cannot open " + path.string());
  Document doc;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r")
      continue;
    doc.rows.push_back(split_line(line, line_no));
    doc.line_numbers.push_back(line_no);
  }
  return doc;
}

std::string quote(std::string_view cell) {
  if (cell.find_first_of(",\"\n") == std::string_view::npos)
    return std::string(cell);
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"')
      out += "\"\"";
    else
      out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void write_row(std::ostream &out, const Row &row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i)
      out << ',';
    out << quote(row[i]);
  }
  out << '\n';
}

} // namespace csv

void Fnv1a::update(std::string_view bytes) {
  for (unsigned char c : bytes) {
    state_ ^= c;
    state_ *= 1099511628211ull;
  }
}

void Fnv1a::update_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw FormatError("cannot open " + path.string());
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
}

std::string Fnv1a::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(state_));
  return buf;
}

std::string hash_file(const std::filesystem::path &path) {
  Fnv1a h;
  h.update_file(path);
  return h.hex();
}

std::string hash_string(std::string_view s) {
  Fnv1a h;
  h.update(s);
  return h.hex();
}

std::string format_exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace prl
