#pragma once

#include "prl/records.hpp"

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace prl {

enum class ComparatorKind {
  jaro_winkler,
  padded_levenshtein,
  exact,
  middle_name_hybrid
};

std::string_view to_string(ComparatorKind kind);
ComparatorKind parse_comparator_kind(std::string_view name);

/// Similarity levels are 1..n_levels; level 0 is reserved for comparisons
/// with a missing value.
using Level = std::uint8_t;

struct ComparatorSpec {
  std::string field;
  ComparatorKind kind = ComparatorKind::exact;
  std::vector<double> cut_points; // ascending, in (0,1); string kinds only
  int n_levels = 2;

  static ComparatorSpec jaro_winkler(std::string field);
  static ComparatorSpec padded_levenshtein(std::string field);
  static ComparatorSpec exact(std::string field);
  static ComparatorSpec middle_name(std::string field);

  /// Throws std::invalid_argument when cut points or level count are
  /// inconsistent with the kind.
  void validate() const;
};

/// Comparators for the canonical schema: Jaro-Winkler on names, occupation
/// and street name; padded Levenshtein on street number; exact on the
/// female indicator and street type; hybrid on middle name.
std::vector<ComparatorSpec> default_comparators();

double jaro(std::string_view s, std::string_view t);
/// Jaro similarity boosted by the common prefix (at most 4 characters).
/// Throws std::invalid_argument on empty input.
double jaro_winkler(std::string_view s, std::string_view t,
                    double prefix_scale = 0.1);

std::size_t levenshtein(std::string_view s, std::string_view t);
/// Left-pads the shorter string with '0' and returns 1 - distance / length.
double padded_levenshtein_sim(std::string_view s, std::string_view t);

/// Similarities within this distance below a cut point are binned as if on
/// the cut point (absorbs rounding in the similarity arithmetic).
inline constexpr double kBinTolerance = 1e-12;

Level bin_similarity(double sim, const ComparatorSpec &spec);

/// Middle-name levels, ascending in similarity. Levels 3..7 hold the five
/// inexact Jaro-Winkler bins for two full names.
namespace middle_level {
inline constexpr Level initial_full_mismatch = 1;
inline constexpr Level initial_initial_mismatch = 2;
inline constexpr Level full_lowest_bin = 3;
inline constexpr Level initial_full_match = 8;
inline constexpr Level initial_initial_match = 9;
inline constexpr Level full_exact = 10;
} // namespace middle_level

Level compare_middle_name(const FieldValue &a, const FieldValue &b);

/// Level of one field comparison; 0 when either value is absent.
Level compare_values(const ComparatorSpec &spec, const FieldValue &a,
                     const FieldValue &b);

struct RecordPair {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  auto operator<=>(const RecordPair &) const = default;
};

struct IndexException {
  std::string prefix;         // both values start with this ...
  std::size_t prefix_length;  // ... so compare this many characters instead
};

struct IndexClause {
  std::string field;
  std::size_t prefix_length = 3;
  std::vector<IndexException> exceptions;
};

struct PairIndex {
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  std::vector<RecordPair> pairs; // sorted, unique
  std::string provenance;

  std::size_t size() const noexcept { return pairs.size(); }
  std::optional<std::size_t> find(std::uint32_t a, std::uint32_t b) const;
};

/// Pairs agreeing exactly on the leading characters of at least one clause
/// field (values present on both sides).
PairIndex index_pairs(const RecordTable &a, const RecordTable &b,
                      const std::vector<IndexClause> &clauses);
PairIndex full_index(std::size_t n_a, std::size_t n_b);

struct PatternTable {
  std::vector<std::string> fields;
  std::vector<int> n_levels;                 // k_j per field
  std::vector<std::vector<Level>> patterns;  // sorted lexicographically
  std::vector<std::uint64_t> counts;
  std::vector<std::uint32_t> pair_pattern;   // aligned with PairIndex::pairs

  std::size_t n_fields() const noexcept { return fields.size(); }
  std::uint64_t total() const;
  /// Per field, count of indexed pairs at each level 0..k_j.
  std::vector<std::vector<std::uint64_t>> level_marginals() const;
};

PatternTable build_pattern_table(const RecordTable &a, const RecordTable &b,
                                 const PairIndex &index,
                                 const std::vector<ComparatorSpec> &specs,
                                 unsigned threads = 1);

struct UCorrectionTallies {
  std::vector<std::string> fields;
  std::uint64_t n_pairs = 0; // n_A * n_B
  /// Per field, count of all A x B pairs at each level 0..k_j.
  std::vector<std::vector<std::uint64_t>> full;
  /// Same, restricted to indexed pairs.
  std::vector<std::vector<std::uint64_t>> indexed;

  std::vector<std::vector<std::uint64_t>> excluded() const;
};

/// Frequency-weighted tallies over unique value pairs; each distinct value
/// pair is compared once and weighted by countA * countB.
UCorrectionTallies marginal_frequency_tallies(
    const RecordTable &a, const RecordTable &b, const PatternTable &patterns,
    const std::vector<ComparatorSpec> &specs, unsigned threads = 1);

/// Tallies of one field from value frequency tables. Exposed for the
/// unique-value arithmetic checks.
struct ValueCount {
  FieldValue value;
  std::uint64_t count = 0;
};
std::vector<std::uint64_t>
tally_from_frequencies(const ComparatorSpec &spec,
                       const std::vector<ValueCount> &a_values,
                       const std::vector<ValueCount> &b_values);

void write_pattern_table(const std::filesystem::path &path,
                         const PatternTable &table);
void write_pair_map(const std::filesystem::path &path, const PairIndex &index,
                    const PatternTable &table,
                    const std::vector<std::string> &a_ids,
                    const std::vector<std::string> &b_ids);
void write_tallies(const std::filesystem::path &path,
                   const UCorrectionTallies &tallies);

/// Reads the artifacts written above back into memory. Record ids are
/// resolved against the given id lists.
struct ComparisonArtifacts {
  PairIndex index;
  PatternTable patterns;
};
ComparisonArtifacts read_comparisons(const std::filesystem::path &pattern_path,
                                     const std::filesystem::path &pair_path,
                                     const std::vector<std::string> &a_ids,
                                     const std::vector<std::string> &b_ids);
UCorrectionTallies read_tallies(const std::filesystem::path &path,
                                const PatternTable &patterns,
                                std::uint64_t n_pairs);

} // namespace prl
