#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace prl {

/// Raised for malformed input files. Carries the 1-based line (and column,
/// when known) of the offending cell.
class FormatError : public std::runtime_error {
public:
  FormatError(const std::string &what, std::size_t line = 0,
              std::size_t column = 0);
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

private:
  std::size_t line_;
  std::size_t column_;
};

namespace csv {

using Row = std::vector<std::string>;

/// Splits one logical CSV line. Handles double-quoted cells with embedded
/// commas and doubled quotes; newlines inside quotes are not supported.
Row split_line(std::string_view line, std::size_t line_no = 0);

/// Reads every non-empty line of a file. Row i of the result came from
/// line `line_numbers[i]`.
struct Document {
  std::vector<Row> rows;
  std::vector<std::size_t> line_numbers;
};
Document read_file(const std::filesystem::path &path);

std::string quote(std::string_view cell);
void write_row(std::ostream &out, const Row &row);

} // namespace csv

/// 64-bit FNV-1a. Used for manifest hashing; stable across platforms.
class Fnv1a {
public:
  void update(std::string_view bytes);
  void update_file(const std::filesystem::path &path);
  std::uint64_t digest() const noexcept { return state_; }
  std::string hex() const;

private:
  std::uint64_t state_ = 14695981039346656037ull;
};

std::string hash_file(const std::filesystem::path &path);
std::string hash_string(std::string_view s);

/// Formats a double so that parsing it back yields the identical value.
std::string format_exact(double v);

} // namespace prl
