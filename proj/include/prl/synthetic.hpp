#pragma once

#include "prl/records.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace prl {

/// Per-field corruption rates, applied independently to each copy of an
/// overlapping individual.
struct FieldCorruption {
  double typo = 0.0;    // one random character edit
  double missing = 0.0; // value dropped
  double replace = 0.0; // value swapped for another draw from the vocabulary
};

struct SyntheticConfig {
  std::size_t n_a = 1000;
  std::size_t n_b = 1000;
  std::size_t overlap = 700;
  /// Keyed by canonical field name; fields not listed are left intact.
  std::map<std::string, FieldCorruption> corruption;
  double mover_rate = 0.0;  // overlapping individuals with a new address in B
  double switch_rate = 0.0; // planted party switches among major-party pairs
  double female_rate = 0.5;
  std::size_t first_name_vocab = 400;
  std::size_t surname_vocab = 3000;
  std::size_t occupation_vocab = 150;
  std::size_t street_name_vocab = 600;

  /// Moderate corruption used by the end-to-end tests and the sample config.
  static SyntheticConfig moderate(std::size_t n_a, std::size_t n_b,
                                  std::size_t overlap);
};

struct SyntheticFiles {
  RecordTable a;
  RecordTable b;
  std::vector<std::pair<std::size_t, std::size_t>> truth; // (row in a, row in b)
  std::size_t major_party_pairs = 0; // true pairs with dem/rep on both sides
  std::size_t planted_switches = 0;
};

/// Generates two duplicate-free files in the canonical schema together with
/// the true matching. Deterministic given the seed. Throws
/// std::invalid_argument when the overlap exceeds either file size.
SyntheticFiles generate_synthetic_files(const SyntheticConfig &config,
                                        std::uint64_t seed);

} // namespace prl
