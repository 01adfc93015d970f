#pragma once

#include "prl/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace prl {

struct WeightEntry {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  double w = 0.0;
};

/// Pair -> weight map over a candidate set. Entries are kept sorted by
/// (a, b) without duplicates; an absent pair can never be linked.
struct SparseWeightMatrix {
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  std::vector<WeightEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  /// Sorts entries and throws std::invalid_argument on duplicates,
  /// out-of-range nodes or non-finite weights.
  void canonicalize();
  static SparseWeightMatrix dense(const std::vector<std::vector<double>> &w);
};

/// Keeps entries with w >= theta, shifted to w - theta.
SparseWeightMatrix threshold_weights(const SparseWeightMatrix &w, double theta);

struct Component {
  std::vector<std::uint32_t> a_nodes; // ascending
  std::vector<std::uint32_t> b_nodes; // ascending
  std::vector<std::size_t> entries;   // positions in the source matrix
};

struct ComponentPartition {
  std::vector<Component> components; // ordered by smallest a-node
};

/// Connected components of the bipartite graph with one edge per entry.
ComponentPartition connected_components(const SparseWeightMatrix &w);

struct AuctionOptions {
  /// Weights are rounded to this fraction of the largest weight before
  /// bidding; the result is exactly optimal at that resolution.
  double resolution = 1e-9;
  /// Stop once epsilon-scaling reaches this tolerance (weight units); the
  /// returned matching is then within n * tolerance of optimal. 0 = exact.
  double early_stop_tolerance = 0.0;
  /// Cap on the number of bids; 0 = unlimited. Hitting the cap returns the
  /// current (feasible, possibly suboptimal) assignment.
  std::size_t max_bids = 0;
};

struct AuctionResult {
  std::vector<RecordPair> links; // ascending
  double total_weight = 0.0;
  bool exact = true;
  std::size_t bids = 0;
};

/// Maximum-weight partial matching over `entries` (all weights > 0) by
/// forward auction with epsilon-scaling. `warm_start` links that are
/// present among the entries seed the first phase. Throws
/// std::invalid_argument on a non-positive weight.
AuctionResult auction_solve(std::span<const WeightEntry> entries,
                            const AuctionOptions &options = {},
                            std::span<const RecordPair> warm_start = {});

struct LsapOptions {
  AuctionOptions auction;
  unsigned threads = 1;
};

struct LsapSolution {
  BipartiteMatching matching;
  double objective = 0.0; // sum of (w - theta) over links
  std::size_t components = 0;
  bool exact = true;
};

/// Thresholds at theta, splits into connected components, solves each by
/// auction and merges. Pairs with w <= theta are never linked.
LsapSolution solve_thresholded_lsap(const SparseWeightMatrix &w, double theta,
                                    const LsapOptions &options = {},
                                    const BipartiteMatching *warm_start = nullptr);

/// Maximum-weight matching that links min(n_a, n_b) records, treating
/// absent pairs as carrying `fill` (defaults to the smallest entry). Used
/// for the classical complete-assignment step.
BipartiteMatching complete_assignment(const SparseWeightMatrix &w,
                                      std::optional<double> fill = std::nullopt);

double matching_weight(const SparseWeightMatrix &w,
                       const BipartiteMatching &matching);

void write_components(const std::filesystem::path &path,
                      const SparseWeightMatrix &w,
                      const ComponentPartition &partition);

} // namespace prl
