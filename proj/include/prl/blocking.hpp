#pragma once

#include "prl/assignment.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace prl {

struct PosthocBlock {
  std::vector<std::uint32_t> a_nodes;  // ascending
  std::vector<std::uint32_t> b_nodes;  // ascending
  std::vector<WeightEntry> pairs;      // every weighted pair among members
  double threshold = 0.0;              // edges were w > threshold
  bool truncated = false;
};

struct PosthocBlockSet {
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  std::size_t candidate_pairs = 0;  // weighted pairs offered to blocking
  double w_min = 0.0;
  std::size_t max_pairs = 0;
  std::vector<PosthocBlock> blocks;  // ordered by smallest a-node

  std::size_t admitted_pairs() const;
};

struct BlockingOptions {
  double w_min = 0.0;
  std::size_t max_pairs = 10000;  // N_c
  double split_quantile = 0.25;
  unsigned threads = 1;
};

/// Threshold at w_min (edges are pairs with w > w_min), take connected
/// components, and give each block every weighted pair among its members.
/// Blocks with more than max_pairs pairs are re-split at a higher threshold
/// until they fit; a block whose edges all share one weight is cut to its
/// heaviest max_pairs pairs with a warning.
PosthocBlockSet build_posthoc_blocks(const SparseWeightMatrix &w,
                                     const BlockingOptions &options);

/// Next threshold for an oversized block: the lower q-quantile of its edge
/// weights, or the largest edge weight below the maximum when the quantile
/// hits the maximum. Empty when all edge weights are equal.
std::optional<double> next_block_threshold(std::vector<double> edge_weights,
                                           double q);

struct BlockSummary {
  std::size_t blocks = 0;
  std::size_t admitted_pairs = 0;
  std::size_t candidate_pairs = 0;
  std::size_t a_records = 0;
  std::size_t b_records = 0;
  std::size_t largest_block = 0;
  std::size_t truncated_blocks = 0;
  double coverage = 0.0;        // admitted / candidate pairs
  double reduction_ratio = 0.0; // 1 - admitted / (n_a * n_b)
  /// Blocks by pair count: bucket i counts sizes in [2^i, 2^(i+1)).
  std::vector<std::size_t> size_histogram;
};

BlockSummary summarize_blocks(const PosthocBlockSet &blocks);

void write_blocks(const std::filesystem::path &path, const PosthocBlockSet &blocks,
                  const std::vector<std::string> &a_ids,
                  const std::vector<std::string> &b_ids);
void write_block_summary(const std::filesystem::path &path,
                         const PosthocBlockSet &blocks);
/// Throws FormatError on malformed rows or a record in two blocks.
PosthocBlockSet read_blocks(const std::filesystem::path &path,
                            const std::vector<std::string> &a_ids,
                            const std::vector<std::string> &b_ids);

} // namespace prl
