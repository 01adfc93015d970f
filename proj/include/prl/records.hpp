#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace prl {

enum class FieldRole {
  first_name,
  middle_name,
  surname,
  female,
  occupation,
  street_number,
  street_name,
  street_type,
  party,
  other
};

std::string_view to_string(FieldRole role);
FieldRole parse_field_role(std::string_view name);

struct FieldDef {
  std::string name;
  FieldRole role = FieldRole::other;
};

struct FieldSchema {
  std::string id_column = "id";
  std::vector<FieldDef> fields;
  std::string missing_token; // cells equal to this token load as absent

  std::optional<std::size_t> index_of(std::string_view name) const;
  std::optional<std::size_t> index_of(FieldRole role) const;

  /// Throws std::invalid_argument on duplicate names or a linkage role used
  /// by more than one field.
  void validate() const;

  /// Schema produced by normalization: one field per linkage role, named
  /// after the role.
  static FieldSchema canonical();
};

using FieldValue = std::optional<std::string>;

struct Record {
  std::string id;
  std::vector<FieldValue> values; // aligned with FieldSchema::fields

  bool operator==(const Record &) const = default;
};

enum class FileLabel { A, B };

struct RecordTable {
  FileLabel label = FileLabel::A;
  FieldSchema schema;
  std::vector<Record> records;

  std::size_t size() const noexcept { return records.size(); }
  const FieldValue &value(std::size_t row, std::size_t field) const {
    return records[row].values[field];
  }
  /// Value of the field carrying `role`, or an absent value when the schema
  /// has no such field.
  const FieldValue &value(std::size_t row, FieldRole role) const;
  std::vector<std::string> ids() const;
};

/// Loads a comma-separated file whose header names the id column and a
/// superset of the schema fields. Throws FormatError on a missing id column,
/// a schema field absent from the header, ragged rows, or duplicate ids.
RecordTable load_records(const std::filesystem::path &path,
                         const FieldSchema &schema,
                         FileLabel label = FileLabel::A);

/// Writes a table in the format load_records reads (missing values as the
/// schema's missing token).
void write_records(const std::filesystem::path &path, const RecordTable &table);

struct NormalizeOptions {
  std::string prefix_column = "prefix";
  std::string given_column = "given_name";
  std::string address_column = "address";
  std::vector<std::string> female_prefixes = {"mrs", "ms", "miss"};
  std::vector<std::string> housewife_variants = {
      "housewife", "house wife", "housewf", "hswife", "housekeeper at home",
      "hw"};
  /// Abbreviation -> canonical street type. Canonical names map to themselves.
  std::map<std::string, std::string> street_types = default_street_types();

  static std::map<std::string, std::string> default_street_types();
};

/// Lower-cases, trims and collapses interior whitespace.
std::string fold(std::string_view s);

struct ParsedAddress {
  FieldValue number;
  FieldValue name;
  FieldValue type;
};
ParsedAddress parse_address(std::string_view address,
                            const NormalizeOptions &options = {});

/// Maps a raw record (schema `raw_schema`) onto the canonical schema. Given
/// name and address composites are split when present; already-split fields
/// are case-folded and passed through, so the operation is idempotent.
Record normalize_record(const Record &raw, const FieldSchema &raw_schema,
                        const NormalizeOptions &options = {});
RecordTable normalize_table(const RecordTable &raw,
                            const NormalizeOptions &options = {});

/// Keeps records missing at most one of first name, surname, occupation and
/// street name.
RecordTable filter_records(const RecordTable &table);

} // namespace prl
