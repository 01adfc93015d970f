#include "prl/records.hpp"

#include "prl/csv.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace prl {

namespace {

constexpr std::array<std::pair<FieldRole, std::string_view>, 10> kRoleNames{{
    {FieldRole::first_name, "first_name"},
    {FieldRole::middle_name, "middle_name"},
    {FieldRole::surname, "surname"},
    {FieldRole::female, "female"},
    {FieldRole::occupation, "occupation"},
    {FieldRole::street_number, "street_number"},
    {FieldRole::street_name, "street_name"},
    {FieldRole::street_type, "street_type"},
    {FieldRole::party, "party"},
    {FieldRole::other, "other"},
}};

const FieldValue kAbsent;

std::vector<std::string> tokens(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string tok;
  while (in >> tok)
    out.push_back(tok);
  return out;
}

std::string join(const std::vector<std::string> &parts, std::size_t from,
                 std::size_t to) {
  std::string out;
  for (std::size_t i = from; i < to; ++i) {
    if (!out.empty())
      out.push_back(' ');
    out += parts[i];
  }
  return out;
}

FieldValue present(std::string s) {
  if (s.empty())
    return std::nullopt;
  return s;
}

FieldValue folded(const FieldValue &v) {
  if (!v)
    return std::nullopt;
  return present(fold(*v));
}

bool contains(const std::vector<std::string> &list, std::string_view s) {
  return std::find(list.begin(), list.end(), s) != list.end();
}

} // namespace

std::string_view to_string(FieldRole role) {
  for (const auto &[r, name] : kRoleNames)
    if (r == role)
      return name;
  return "other";
}

FieldRole parse_field_role(std::string_view name) {
  for (const auto &[r, n] : kRoleNames)
    if (n == name)
      return r;
  throw std::invalid_argument("unknown field role '" + std::string(name) +
                              "'");
}

std::optional<std::size_t> FieldSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < fields.size(); ++i)
    if (fields[i].name == name)
      return i;
  return std::nullopt;
}

std::optional<std::size_t> FieldSchema::index_of(FieldRole role) const {
  if (role == FieldRole::other)
    return std::nullopt;
  for (std::size_t i = 0; i < fields.size(); ++i)
    if (fields[i].role == role)
      return i;
  return std::nullopt;
}

void FieldSchema::validate() const {
  std::unordered_set<std::string> names;
  std::unordered_set<int> roles;
  for (const auto &f : fields) {
    if (f.name.empty())
      throw std::invalid_argument("schema field with empty name");
    if (f.name == id_column)
      throw std::invalid_argument("field '" + f.name +
                                  "' collides with the id column");
    if (!names.insert(f.name).second)
      throw std::invalid_argument("duplicate schema field '" + f.name + "'");
    if (f.role != FieldRole::other &&
        !roles.insert(static_cast<int>(f.role)).second)
      throw std::invalid_argument("role '" + std::string(to_string(f.role)) +
                                  "' assigned to more than one field");
  }
}

FieldSchema FieldSchema::canonical() {
  FieldSchema s;
  for (const auto &[role, name] : kRoleNames)
    if (role != FieldRole::other)
      s.fields.push_back({std::string(name), role});
  return s;
}

const FieldValue &RecordTable::value(std::size_t row, FieldRole role) const {
  auto idx = schema.index_of(role);
  if (!idx)
    return kAbsent;
  return records[row].values[*idx];
}

std::vector<std::string> RecordTable::ids() const {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto &r : records)
    out.push_back(r.id);
  return out;
}

RecordTable load_records(const std::filesystem::path &path,
                         const FieldSchema &schema, FileLabel label) {
  schema.validate();
  auto doc = csv::read_file(path);
  if (doc.rows.empty())
    throw FormatError("missing header row in " + path.string(), 1);

  const auto &header = doc.rows.front();
  const std::size_t header_line = doc.line_numbers.front();
  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!column.emplace(header[c], c).second)
      throw FormatError("duplicate header column '" + header[c] + "'",
                        header_line, c + 1);
  }
  auto id_it = column.find(schema.id_column);
  if (id_it == column.end())
    throw FormatError("missing id column '" + schema.id_column + "' in " +
                          path.string(),
                      header_line);
  std::vector<std::size_t> source(schema.fields.size());
  for (std::size_t f = 0; f < schema.fields.size(); ++f) {
    auto it = column.find(schema.fields[f].name);
    if (it == column.end())
      throw FormatError("header lacks schema field '" + schema.fields[f].name +
                            "'",
                        header_line);
    source[f] = it->second;
  }

  RecordTable table;
  table.label = label;
  table.schema = schema;
  std::unordered_map<std::string, std::size_t> seen; // id -> line
  for (std::size_t r = 1; r < doc.rows.size(); ++r) {
    const auto &row = doc.rows[r];
    const std::size_t line = doc.line_numbers[r];
    if (row.size() != header.size())
      throw FormatError("expected " + std::to_string(header.size()) +
                            " cells, found " + std::to_string(row.size()),
                        line);
    Record rec;
    rec.id = row[id_it->second];
    if (rec.id.empty())
      throw FormatError("empty id", line, id_it->second + 1);
    auto [it, inserted] = seen.emplace(rec.id, line);
    if (!inserted)
      throw FormatError("duplicate id '" + rec.id + "' on lines " +
                            std::to_string(it->second) + " and " +
                            std::to_string(line),
                        line, id_it->second + 1);
    rec.values.reserve(source.size());
    for (std::size_t c : source) {
      const std::string &cell = row[c];
      if (cell.empty() || cell == schema.missing_token)
        rec.values.emplace_back();
      else
        rec.values.emplace_back(cell);
    }
    table.records.push_back(std::move(rec));
  }
  return table;
}

void write_records(const std::filesystem::path &path,
                   const RecordTable &table) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  csv::Row header{table.schema.id_column};
  for (const auto &f : table.schema.fields)
    header.push_back(f.name);
  csv::write_row(out, header);
  for (const auto &rec : table.records) {
    csv::Row row{rec.id};
    for (const auto &v : rec.values)
      row.push_back(v ? *v : table.schema.missing_token);
    csv::write_row(out, row);
  }
}

std::map<std::string, std::string> NormalizeOptions::default_street_types() {
  const std::vector<std::pair<std::string, std::vector<std::string>>> table{
      {"avenue", {"ave", "av", "avn"}},   {"street", {"st", "str"}},
      {"road", {"rd"}},                   {"boulevard", {"blvd", "bl"}},
      {"drive", {"dr", "drv"}},           {"court", {"ct", "crt"}},
      {"place", {"pl"}},                  {"lane", {"ln"}},
      {"way", {"wy"}},                    {"terrace", {"ter", "terr"}},
      {"circle", {"cir", "circ"}},        {"highway", {"hwy", "hiway"}},
  };
  std::map<std::string, std::string> out;
  for (const auto &[canon, abbrevs] : table) {
    out.emplace(canon, canon);
    for (const auto &a : abbrevs)
      out.emplace(a, canon);
  }
  return out;
}

std::string fold(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

ParsedAddress parse_address(std::string_view address,
                            const NormalizeOptions &options) {
  std::string text;
  for (char c : fold(address))
    text.push_back(c == '.' || c == ',' ? ' ' : c);
  text = fold(text);

  ParsedAddress out;
  std::size_t digits = 0;
  while (digits < text.size() &&
         std::isdigit(static_cast<unsigned char>(text[digits])))
    ++digits;
  if (digits > 0) {
    out.number = text.substr(0, digits);
    text = fold(text.substr(digits));
  }
  auto toks = tokens(text);
  std::size_t end = toks.size();
  if (end > 0) {
    auto it = options.street_types.find(toks.back());
    if (it != options.street_types.end()) {
      out.type = it->second;
      --end;
    }
  }
  out.name = present(join(toks, 0, end));
  return out;
}

Record normalize_record(const Record &raw, const FieldSchema &raw_schema,
                        const NormalizeOptions &options) {
  const FieldSchema canon = FieldSchema::canonical();
  Record out;
  out.id = raw.id;
  out.values.assign(canon.fields.size(), std::nullopt);
  auto set = [&](FieldRole role, FieldValue v) {
    out.values[*canon.index_of(role)] = std::move(v);
  };
  auto by_name = [&](const std::string &name) -> FieldValue {
    auto idx = raw_schema.index_of(name);
    return idx ? folded(raw.values[*idx]) : std::nullopt;
  };
  auto by_role = [&](FieldRole role) -> FieldValue {
    auto idx = raw_schema.index_of(role);
    return idx ? folded(raw.values[*idx]) : std::nullopt;
  };

  // Pass through already-split fields first; composites override below.
  for (const auto &f : canon.fields)
    set(f.role, by_role(f.role));

  if (auto given = by_name(options.given_column)) {
    auto toks = tokens(*given);
    set(FieldRole::first_name, present(toks.empty() ? "" : toks.front()));
    set(FieldRole::middle_name, present(join(toks, 1, toks.size())));
  }
  if (raw_schema.index_of(options.address_column)) {
    auto addr = parse_address(by_name(options.address_column).value_or(""),
                              options);
    set(FieldRole::street_number, addr.number);
    set(FieldRole::street_name, addr.name);
    set(FieldRole::street_type, addr.type);
  } else if (auto type = by_role(FieldRole::street_type)) {
    auto it = options.street_types.find(*type);
    if (it != options.street_types.end())
      set(FieldRole::street_type, it->second);
  }

  bool female = by_role(FieldRole::female).value_or("0") == "1";
  if (auto prefix = by_name(options.prefix_column))
    female = female || contains(options.female_prefixes, *prefix);
  auto occupation = by_role(FieldRole::occupation);
  if (occupation && contains(options.housewife_variants, *occupation)) {
    female = true;
    occupation.reset();
  }
  set(FieldRole::occupation, occupation);
  set(FieldRole::female, female ? "1" : "0");
  return out;
}

RecordTable normalize_table(const RecordTable &raw,
                            const NormalizeOptions &options) {
  RecordTable out;
  out.label = raw.label;
  out.schema = FieldSchema::canonical();
  out.schema.id_column = raw.schema.id_column;
  out.schema.missing_token = raw.schema.missing_token;
  out.records.reserve(raw.records.size());
  for (const auto &r : raw.records)
    out.records.push_back(normalize_record(r, raw.schema, options));
  return out;
}

RecordTable filter_records(const RecordTable &table) {
  constexpr std::array<FieldRole, 4> kCore{
      FieldRole::first_name, FieldRole::surname, FieldRole::occupation,
      FieldRole::street_name};
  RecordTable out;
  out.label = table.label;
  out.schema = table.schema;
  for (std::size_t r = 0; r < table.size(); ++r) {
    int missing = 0;
    for (FieldRole role : kCore)
      missing += table.value(r, role) ? 0 : 1;
    if (missing <= 1)
      out.records.push_back(table.records[r]);
  }
  return out;
}

} // namespace prl
