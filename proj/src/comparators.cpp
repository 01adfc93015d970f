#include "prl/comparators.hpp"

#include "prl/csv.hpp"
#include "prl/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace prl {

namespace {

const std::vector<double> kJaroWinklerCuts{0.25, 0.45, 0.6, 0.85};
const std::vector<double> kLevenshteinCuts{0.25, 0.5, 0.75};

bool is_string_kind(ComparatorKind k) {
  return k == ComparatorKind::jaro_winkler ||
         k == ComparatorKind::padded_levenshtein;
}

std::size_t field_column(const RecordTable &t, const std::string &field) {
  auto idx = t.schema.index_of(field);
  if (!idx)
    throw std::invalid_argument("field '" + field + "' not in schema");
  return *idx;
}

/// Dictionary-encodes one column: codes[row] indexes `values`, -1 = missing.
struct EncodedColumn {
  std::vector<std::string> values;
  std::vector<std::int32_t> codes;
};

EncodedColumn encode(const RecordTable &t, std::size_t column) {
  EncodedColumn out;
  std::unordered_map<std::string, std::int32_t> ids;
  out.codes.reserve(t.size());
  for (const auto &rec : t.records) {
    const auto &v = rec.values[column];
    if (!v) {
      out.codes.push_back(-1);
      continue;
    }
    auto [it, inserted] =
        ids.emplace(*v, static_cast<std::int32_t>(out.values.size()));
    if (inserted)
      out.values.push_back(*v);
    out.codes.push_back(it->second);
  }
  return out;
}

/// Compares unique value pairs once per thread.
class MemoComparer {
public:
  MemoComparer(const ComparatorSpec &spec, const EncodedColumn &a,
               const EncodedColumn &b)
      : spec_(spec), a_(a), b_(b) {}

  Level level(std::uint32_t row_a, std::uint32_t row_b) {
    const auto ca = a_.codes[row_a];
    const auto cb = b_.codes[row_b];
    if (ca < 0 || cb < 0)
      return 0;
    const std::uint64_t key = (static_cast<std::uint64_t>(ca) << 32) |
                              static_cast<std::uint32_t>(cb);
    auto it = cache_.find(key);
    if (it != cache_.end())
      return it->second;
    Level l = compare_values(spec_, a_.values[ca], b_.values[cb]);
    cache_.emplace(key, l);
    return l;
  }

private:
  const ComparatorSpec &spec_;
  const EncodedColumn &a_;
  const EncodedColumn &b_;
  std::unordered_map<std::uint64_t, Level> cache_;
};

} // namespace

std::string_view to_string(ComparatorKind kind) {
  switch (kind) {
  case ComparatorKind::jaro_winkler: return "jaro_winkler";
  case ComparatorKind::padded_levenshtein: return "padded_levenshtein";
  case ComparatorKind::exact: return "exact";
  case ComparatorKind::middle_name_hybrid: return "middle_name_hybrid";
  }
  return "exact";
}

ComparatorKind parse_comparator_kind(std::string_view name) {
  for (auto k : {ComparatorKind::jaro_winkler, ComparatorKind::padded_levenshtein,
                 ComparatorKind::exact, ComparatorKind::middle_name_hybrid})
    if (to_string(k) == name)
      return k;
  throw std::invalid_argument("unknown comparator kind '" + std::string(name) +
                              "'");
}

ComparatorSpec ComparatorSpec::jaro_winkler(std::string field) {
  return {std::move(field), ComparatorKind::jaro_winkler, kJaroWinklerCuts, 6};
}
ComparatorSpec ComparatorSpec::padded_levenshtein(std::string field) {
  return {std::move(field), ComparatorKind::padded_levenshtein,
          kLevenshteinCuts, 5};
}
ComparatorSpec ComparatorSpec::exact(std::string field) {
  return {std::move(field), ComparatorKind::exact, {}, 2};
}
ComparatorSpec ComparatorSpec::middle_name(std::string field) {
  return {std::move(field), ComparatorKind::middle_name_hybrid,
          kJaroWinklerCuts, 10};
}

void ComparatorSpec::validate() const {
  const std::string who = "comparator '" + field + "': ";
  if (field.empty())
    throw std::invalid_argument("comparator with empty field name");
  for (std::size_t i = 0; i < cut_points.size(); ++i) {
    if (!(cut_points[i] > 0.0 && cut_points[i] < 1.0))
      throw std::invalid_argument(who + "cut points must lie in (0,1)");
    if (i > 0 && !(cut_points[i] > cut_points[i - 1]))
      throw std::invalid_argument(who + "cut points must be ascending");
  }
  switch (kind) {
  case ComparatorKind::jaro_winkler:
  case ComparatorKind::padded_levenshtein:
    if (n_levels != static_cast<int>(cut_points.size()) + 2)
      throw std::invalid_argument(who + "n_levels must be |cut_points| + 2");
    break;
  case ComparatorKind::exact:
    if (n_levels != 2)
      throw std::invalid_argument(who + "exact comparators have 2 levels");
    break;
  case ComparatorKind::middle_name_hybrid:
    if (n_levels != 10 || cut_points != kJaroWinklerCuts)
      throw std::invalid_argument(
          who + "middle-name comparator uses the 10-level layout");
    break;
  }
  if (n_levels > 255)
    throw std::invalid_argument(who + "too many levels");
}

std::vector<ComparatorSpec> default_comparators() {
  return {ComparatorSpec::jaro_winkler("first_name"),
          ComparatorSpec::middle_name("middle_name"),
          ComparatorSpec::jaro_winkler("surname"),
          ComparatorSpec::exact("female"),
          ComparatorSpec::jaro_winkler("occupation"),
          ComparatorSpec::padded_levenshtein("street_number"),
          ComparatorSpec::jaro_winkler("street_name"),
          ComparatorSpec::exact("street_type")};
}

double jaro(std::string_view s, std::string_view t) {
  if (s.empty() || t.empty())
    throw std::invalid_argument("jaro: empty string");
  if (s == t)
    return 1.0;
  const std::size_t longer = std::max(s.size(), t.size());
  const std::size_t window = longer / 2 >= 1 ? longer / 2 - 1 : 0;
  std::vector<char> s_hit(s.size(), 0), t_hit(t.size(), 0);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t lo = i > window ? i - window : 0;
    const std::size_t hi = std::min(t.size(), i + window + 1);
    for (std::size_t j = lo; j < hi; ++j) {
      if (!t_hit[j] && s[i] == t[j]) {
        s_hit[i] = t_hit[j] = 1;
        ++matches;
        break;
      }
    }
  }
  if (matches == 0)
    return 0.0;
  std::size_t half_transpositions = 0;
  for (std::size_t i = 0, j = 0; i < s.size(); ++i) {
    if (!s_hit[i])
      continue;
    while (!t_hit[j])
      ++j;
    if (s[i] != t[j])
      ++half_transpositions;
    ++j;
  }
  const double m = static_cast<double>(matches);
  const double tr = static_cast<double>(half_transpositions / 2);
  return (m / static_cast<double>(s.size()) + m / static_cast<double>(t.size()) +
          (m - tr) / m) /
         3.0;
}

double jaro_winkler(std::string_view s, std::string_view t,
                    double prefix_scale) {
  if (prefix_scale < 0.0 || prefix_scale > 0.25)
    throw std::invalid_argument("jaro_winkler: prefix scale outside [0, 0.25]");
  const double j = jaro(s, t);
  std::size_t prefix = 0;
  const std::size_t cap = std::min<std::size_t>({4, s.size(), t.size()});
  while (prefix < cap && s[prefix] == t[prefix])
    ++prefix;
  return j + static_cast<double>(prefix) * prefix_scale * (1.0 - j);
}

std::size_t levenshtein(std::string_view s, std::string_view t) {
  std::vector<std::size_t> prev(t.size() + 1), cur(t.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= s.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= t.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (s[i - 1] == t[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[t.size()];
}

double padded_levenshtein_sim(std::string_view s, std::string_view t) {
  if (s.empty() || t.empty())
    throw std::invalid_argument("padded_levenshtein_sim: empty string");
  const std::size_t len = std::max(s.size(), t.size());
  std::string ps(len - s.size(), '0'), pt(len - t.size(), '0');
  ps += s;
  pt += t;
  return 1.0 - static_cast<double>(levenshtein(ps, pt)) /
                   static_cast<double>(len);
}

Level bin_similarity(double sim, const ComparatorSpec &spec) {
  if (!is_string_kind(spec.kind) &&
      spec.kind != ComparatorKind::middle_name_hybrid)
    throw std::invalid_argument("bin_similarity: not a string comparator");
  if (!(sim >= 0.0 && sim <= 1.0))
    throw std::invalid_argument("bin_similarity: similarity outside [0,1]");
  if (sim == 1.0)
    return static_cast<Level>(spec.cut_points.size() + 2);
  Level level = 1;
  for (double cut : spec.cut_points)
    if (sim + kBinTolerance >= cut)
      ++level;
  return level;
}

Level compare_middle_name(const FieldValue &a, const FieldValue &b) {
  using namespace middle_level;
  if (!a || !b || a->empty() || b->empty())
    return 0;
  const bool a_initial = a->size() == 1;
  const bool b_initial = b->size() == 1;
  if (a_initial && b_initial)
    return (*a)[0] == (*b)[0] ? initial_initial_match : initial_initial_mismatch;
  if (a_initial || b_initial)
    return (*a)[0] == (*b)[0] ? initial_full_match : initial_full_mismatch;
  static const ComparatorSpec full = ComparatorSpec::jaro_winkler("middle");
  const Level bin = bin_similarity(jaro_winkler(*a, *b), full);
  if (bin == 6)
    return full_exact;
  return static_cast<Level>(full_lowest_bin + bin - 1);
}

Level compare_values(const ComparatorSpec &spec, const FieldValue &a,
                     const FieldValue &b) {
  if (!a || !b || a->empty() || b->empty())
    return 0;
  switch (spec.kind) {
  case ComparatorKind::jaro_winkler:
    return bin_similarity(jaro_winkler(*a, *b), spec);
  case ComparatorKind::padded_levenshtein:
    return bin_similarity(padded_levenshtein_sim(*a, *b), spec);
  case ComparatorKind::exact:
    return *a == *b ? 2 : 1;
  case ComparatorKind::middle_name_hybrid:
    return compare_middle_name(a, b);
  }
  return 0;
}

std::optional<std::size_t> PairIndex::find(std::uint32_t a,
                                           std::uint32_t b) const {
  const RecordPair key{a, b};
  auto it = std::lower_bound(pairs.begin(), pairs.end(), key);
  if (it == pairs.end() || *it != key)
    return std::nullopt;
  return static_cast<std::size_t>(it - pairs.begin());
}

PairIndex index_pairs(const RecordTable &a, const RecordTable &b,
                      const std::vector<IndexClause> &clauses) {
  PairIndex out;
  out.n_a = a.size();
  out.n_b = b.size();
  for (const auto &clause : clauses) {
    if (!out.provenance.empty())
      out.provenance += " OR ";
    out.provenance +=
        clause.field + "[:" + std::to_string(clause.prefix_length) + "]";
    for (const auto &ex : clause.exceptions)
      out.provenance += " (" + std::to_string(ex.prefix_length) +
                        " when both start '" + ex.prefix + "')";

    auto key_of = [&](const std::string &v) {
      std::size_t len = clause.prefix_length;
      for (const auto &ex : clause.exceptions)
        if (v.starts_with(ex.prefix)) {
          len = ex.prefix_length;
          break;
        }
      return v.substr(0, len);
    };
    const std::size_t ca = field_column(a, clause.field);
    const std::size_t cb = field_column(b, clause.field);
    std::unordered_map<std::string, std::vector<std::uint32_t>> by_key;
    for (std::uint32_t j = 0; j < b.size(); ++j)
      if (const auto &v = b.value(j, cb))
        by_key[key_of(*v)].push_back(j);
    for (std::uint32_t i = 0; i < a.size(); ++i) {
      const auto &v = a.value(i, ca);
      if (!v)
        continue;
      auto it = by_key.find(key_of(*v));
      if (it == by_key.end())
        continue;
      for (auto j : it->second)
        out.pairs.push_back({i, j});
    }
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  out.pairs.erase(std::unique(out.pairs.begin(), out.pairs.end()),
                  out.pairs.end());
  return out;
}

PairIndex full_index(std::size_t n_a, std::size_t n_b) {
  PairIndex out;
  out.n_a = n_a;
  out.n_b = n_b;
  out.provenance = "all pairs";
  out.pairs.reserve(n_a * n_b);
  for (std::uint32_t i = 0; i < n_a; ++i)
    for (std::uint32_t j = 0; j < n_b; ++j)
      out.pairs.push_back({i, j});
  return out;
}

std::uint64_t PatternTable::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

std::vector<std::vector<std::uint64_t>> PatternTable::level_marginals() const {
  std::vector<std::vector<std::uint64_t>> out(n_fields());
  for (std::size_t f = 0; f < n_fields(); ++f)
    out[f].assign(static_cast<std::size_t>(n_levels[f]) + 1, 0);
  for (std::size_t p = 0; p < patterns.size(); ++p)
    for (std::size_t f = 0; f < n_fields(); ++f)
      out[f][patterns[p][f]] += counts[p];
  return out;
}

PatternTable build_pattern_table(const RecordTable &a, const RecordTable &b,
                                 const PairIndex &index,
                                 const std::vector<ComparatorSpec> &specs,
                                 unsigned threads) {
  const std::size_t nf = specs.size();
  std::vector<EncodedColumn> cols_a, cols_b;
  for (const auto &spec : specs) {
    spec.validate();
    cols_a.push_back(encode(a, field_column(a, spec.field)));
    cols_b.push_back(encode(b, field_column(b, spec.field)));
  }

  const std::size_t n = index.size();
  std::vector<Level> levels(n * nf);
  parallel_chunks(n, threads, [&](std::size_t lo, std::size_t hi, unsigned) {
    std::vector<MemoComparer> comparers;
    for (std::size_t f = 0; f < nf; ++f)
      comparers.emplace_back(specs[f], cols_a[f], cols_b[f]);
    for (std::size_t p = lo; p < hi; ++p) {
      const auto [i, j] = index.pairs[p];
      for (std::size_t f = 0; f < nf; ++f)
        levels[p * nf + f] = comparers[f].level(i, j);
    }
  });

  std::unordered_map<std::string, std::uint32_t> provisional;
  std::vector<std::string> keys;
  std::vector<std::uint32_t> pair_key(n);
  for (std::size_t p = 0; p < n; ++p) {
    std::string key(reinterpret_cast<const char *>(levels.data() + p * nf), nf);
    auto [it, inserted] =
        provisional.emplace(key, static_cast<std::uint32_t>(keys.size()));
    if (inserted)
      keys.push_back(key);
    pair_key[p] = it->second;
  }
  std::vector<std::uint32_t> order(keys.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(),
            [&](auto x, auto y) { return keys[x] < keys[y]; });
  std::vector<std::uint32_t> rank(keys.size());
  for (std::uint32_t r = 0; r < order.size(); ++r)
    rank[order[r]] = r;

  PatternTable table;
  for (const auto &spec : specs) {
    table.fields.push_back(spec.field);
    table.n_levels.push_back(spec.n_levels);
  }
  table.patterns.resize(keys.size());
  table.counts.assign(keys.size(), 0);
  for (std::uint32_t r = 0; r < order.size(); ++r) {
    const auto &k = keys[order[r]];
    table.patterns[r].assign(k.begin(), k.end());
  }
  table.pair_pattern.resize(n);
  for (std::size_t p = 0; p < n; ++p) {
    table.pair_pattern[p] = rank[pair_key[p]];
    ++table.counts[table.pair_pattern[p]];
  }
  return table;
}

std::vector<std::vector<std::uint64_t>> UCorrectionTallies::excluded() const {
  auto out = full;
  for (std::size_t f = 0; f < out.size(); ++f)
    for (std::size_t h = 0; h < out[f].size(); ++h)
      out[f][h] -= indexed[f][h];
  return out;
}

std::vector<std::uint64_t>
tally_from_frequencies(const ComparatorSpec &spec,
                       const std::vector<ValueCount> &a_values,
                       const std::vector<ValueCount> &b_values) {
  std::vector<std::uint64_t> out(static_cast<std::size_t>(spec.n_levels) + 1, 0);
  for (const auto &va : a_values)
    for (const auto &vb : b_values)
      out[compare_values(spec, va.value, vb.value)] += va.count * vb.count;
  return out;
}

UCorrectionTallies marginal_frequency_tallies(
    const RecordTable &a, const RecordTable &b, const PatternTable &patterns,
    const std::vector<ComparatorSpec> &specs, unsigned threads) {
  UCorrectionTallies out;
  out.n_pairs = static_cast<std::uint64_t>(a.size()) * b.size();
  out.indexed = patterns.level_marginals();
  out.full.resize(specs.size());
  for (const auto &spec : specs)
    out.fields.push_back(spec.field);

  auto frequencies = [](const RecordTable &t, std::size_t column) {
    std::map<FieldValue, std::uint64_t> counts;
    for (const auto &rec : t.records)
      ++counts[rec.values[column]];
    std::vector<ValueCount> v;
    for (auto &[value, c] : counts)
      v.push_back({value, c});
    return v;
  };

  for (std::size_t f = 0; f < specs.size(); ++f) {
    const auto fa = frequencies(a, field_column(a, specs[f].field));
    const auto fb = frequencies(b, field_column(b, specs[f].field));
    // Split the A-side values across workers; merge is a plain sum.
    std::vector<std::vector<std::uint64_t>> partial(std::max(1u, threads));
    parallel_chunks(fa.size(), threads,
                    [&](std::size_t lo, std::size_t hi, unsigned t) {
                      std::vector<ValueCount> slice(fa.begin() + lo,
                                                    fa.begin() + hi);
                      partial[t] = tally_from_frequencies(specs[f], slice, fb);
                    });
    out.full[f].assign(static_cast<std::size_t>(specs[f].n_levels) + 1, 0);
    for (const auto &p : partial)
      for (std::size_t h = 0; h < p.size(); ++h)
        out.full[f][h] += p[h];
  }
  return out;
}

void write_pattern_table(const std::filesystem::path &path,
                         const PatternTable &table) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  csv::Row header;
  for (std::size_t f = 0; f < table.n_fields(); ++f)
    header.push_back(table.fields[f] + ":" + std::to_string(table.n_levels[f]));
  header.push_back("count");
  csv::write_row(out, header);
  for (std::size_t p = 0; p < table.patterns.size(); ++p) {
    csv::Row row;
    for (Level l : table.patterns[p])
      row.push_back(std::to_string(l));
    row.push_back(std::to_string(table.counts[p]));
    csv::write_row(out, row);
  }
}

void write_pair_map(const std::filesystem::path &path, const PairIndex &index,
                    const PatternTable &table,
                    const std::vector<std::string> &a_ids,
                    const std::vector<std::string> &b_ids) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << "a_id,b_id,pattern\n";
  for (std::size_t p = 0; p < index.size(); ++p)
    csv::write_row(out, {a_ids[index.pairs[p].a], b_ids[index.pairs[p].b],
                         std::to_string(table.pair_pattern[p])});
}

void write_tallies(const std::filesystem::path &path,
                   const UCorrectionTallies &tallies) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << "field,level,count\n";
  for (std::size_t f = 0; f < tallies.full.size(); ++f)
    for (std::size_t h = 0; h < tallies.full[f].size(); ++h)
      csv::write_row(out, {tallies.fields[f], std::to_string(h),
                           std::to_string(tallies.full[f][h])});
}

namespace {
std::unordered_map<std::string, std::uint32_t>
id_lookup(const std::vector<std::string> &ids) {
  std::unordered_map<std::string, std::uint32_t> m;
  for (std::uint32_t i = 0; i < ids.size(); ++i)
    m.emplace(ids[i], i);
  return m;
}

std::uint64_t parse_u64(const std::string &s, std::size_t line,
                        std::size_t col) {
  try {
    std::size_t used = 0;
    auto v = std::stoull(s, &used);
    if (used != s.size())
      throw std::invalid_argument(s);
    return v;
  } catch (const std::exception &) {
    throw FormatError("expected a non-negative integer, got '" + s + "'", line,
                      col);
  }
}
} // namespace

ComparisonArtifacts read_comparisons(const std::filesystem::path &pattern_path,
                                     const std::filesystem::path &pair_path,
                                     const std::vector<std::string> &a_ids,
                                     const std::vector<std::string> &b_ids) {
  ComparisonArtifacts out;
  auto pdoc = csv::read_file(pattern_path);
  if (pdoc.rows.empty())
    throw FormatError("empty pattern table " + pattern_path.string());
  const auto &header = pdoc.rows.front();
  for (std::size_t c = 0; c + 1 < header.size(); ++c) {
    auto colon = header[c].rfind(':');
    if (colon == std::string::npos)
      throw FormatError("pattern header cell lacks ':levels'", 1, c + 1);
    out.patterns.fields.push_back(header[c].substr(0, colon));
    out.patterns.n_levels.push_back(static_cast<int>(
        parse_u64(header[c].substr(colon + 1), 1, c + 1)));
  }
  const std::size_t nf = out.patterns.fields.size();
  for (std::size_t r = 1; r < pdoc.rows.size(); ++r) {
    const auto &row = pdoc.rows[r];
    if (row.size() != nf + 1)
      throw FormatError("ragged pattern row", pdoc.line_numbers[r]);
    std::vector<Level> levels(nf);
    for (std::size_t f = 0; f < nf; ++f)
      levels[f] = static_cast<Level>(parse_u64(row[f], pdoc.line_numbers[r], f + 1));
    out.patterns.patterns.push_back(std::move(levels));
    out.patterns.counts.push_back(parse_u64(row[nf], pdoc.line_numbers[r], nf + 1));
  }

  const auto a_of = id_lookup(a_ids);
  const auto b_of = id_lookup(b_ids);
  out.index.n_a = a_ids.size();
  out.index.n_b = b_ids.size();
  out.index.provenance = "loaded from " + pair_path.filename().string();
  auto mdoc = csv::read_file(pair_path);
  for (std::size_t r = 1; r < mdoc.rows.size(); ++r) {
    const auto &row = mdoc.rows[r];
    const std::size_t line = mdoc.line_numbers[r];
    if (row.size() != 3)
      throw FormatError("ragged pair row", line);
    auto ia = a_of.find(row[0]);
    auto ib = b_of.find(row[1]);
    if (ia == a_of.end() || ib == b_of.end())
      throw FormatError("pair references unknown record id", line);
    out.index.pairs.push_back({ia->second, ib->second});
    auto pat = parse_u64(row[2], line, 3);
    if (pat >= out.patterns.patterns.size())
      throw FormatError("pattern id out of range", line, 3);
    out.patterns.pair_pattern.push_back(static_cast<std::uint32_t>(pat));
  }
  if (!std::is_sorted(out.index.pairs.begin(), out.index.pairs.end()))
    throw FormatError("pair map is not in canonical order: " +
                      pair_path.string());
  return out;
}

UCorrectionTallies read_tallies(const std::filesystem::path &path,
                                const PatternTable &patterns,
                                std::uint64_t n_pairs) {
  UCorrectionTallies out;
  out.fields = patterns.fields;
  out.n_pairs = n_pairs;
  out.indexed = patterns.level_marginals();
  out.full.resize(patterns.n_fields());
  for (std::size_t f = 0; f < patterns.n_fields(); ++f)
    out.full[f].assign(static_cast<std::size_t>(patterns.n_levels[f]) + 1, 0);
  auto doc = csv::read_file(path);
  for (std::size_t r = 1; r < doc.rows.size(); ++r) {
    const auto &row = doc.rows[r];
    const std::size_t line = doc.line_numbers[r];
    if (row.size() != 3)
      throw FormatError("ragged tally row", line);
    auto it = std::find(out.fields.begin(), out.fields.end(), row[0]);
    if (it == out.fields.end())
      throw FormatError("tally for unknown field '" + row[0] + "'", line, 1);
    const auto f = static_cast<std::size_t>(it - out.fields.begin());
    const auto h = parse_u64(row[1], line, 2);
    if (h >= out.full[f].size())
      throw FormatError("tally level out of range", line, 2);
    out.full[f][h] = parse_u64(row[2], line, 3);
  }
  return out;
}

} // namespace prl
