#pragma once

#include "prl/blocking.hpp"
#include "prl/model.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace prl {

using Rng = std::mt19937_64;

enum class KernelKind { gibbs, locally_balanced, add_drop_swap };
std::string to_string(KernelKind k);
KernelKind parse_kernel_kind(const std::string &s);

struct KernelPolicy {
  std::size_t gibbs_max_matchings = 1024;
  std::size_t lb_max_pairs = 10000;
  /// Use this kernel for every block regardless of size.
  std::optional<KernelKind> force;

  void validate() const;
};

/// Beta-bipartite log prior of a block's link count, given the links held
/// by every other block.
struct BlockPrior {
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  double alpha = 1.0;
  double beta = 1.0;
  std::size_t other_links = 0;

  double operator()(std::size_t block_links) const {
    return log_prior_matching(other_links + block_links, n_a, n_b, alpha, beta);
  }
};

/// Admitted pairs of one post-hoc block in local coordinates.
class SubBlock {
public:
  SubBlock() = default;
  /// `pairs` are global record pairs; `patterns` gives each pair's
  /// comparison pattern id.
  SubBlock(std::vector<RecordPair> pairs, std::vector<std::uint32_t> patterns);
  /// Looks each block pair up in the index. Throws std::invalid_argument for
  /// a pair that is not indexed.
  static SubBlock from_block(const PosthocBlock &block, const PairIndex &index,
                             const PatternTable &patterns);

  std::size_t n_a() const noexcept { return a_global_.size(); }
  std::size_t n_b() const noexcept { return b_global_.size(); }
  std::size_t n_pairs() const noexcept { return pair_a_.size(); }
  std::uint32_t global_a(std::uint32_t la) const { return a_global_[la]; }
  std::uint32_t global_b(std::uint32_t lb) const { return b_global_[lb]; }
  std::uint32_t pair_a(std::size_t k) const { return pair_a_[k]; }
  std::uint32_t pair_b(std::size_t k) const { return pair_b_[k]; }
  std::uint32_t pattern(std::size_t k) const { return pattern_[k]; }
  std::optional<std::uint32_t> find(std::uint32_t la, std::uint32_t lb) const;
  std::optional<std::uint32_t> find_global(std::uint32_t a, std::uint32_t b) const;
  const std::vector<std::uint32_t> &pairs_of_a(std::uint32_t la) const {
    return a_pairs_[la];
  }

  /// Number of one-to-one sub-matchings (including the empty one), or
  /// cutoff + 1 when there are more than cutoff.
  std::size_t count_matchings(std::size_t cutoff) const;
  /// Every sub-matching as a sorted list of pair indices. Throws
  /// std::length_error when there are more than `limit`.
  std::vector<std::vector<std::uint32_t>> enumerate_matchings(std::size_t limit) const;

private:
  std::vector<std::uint32_t> a_global_, b_global_;
  std::vector<std::uint32_t> pair_a_, pair_b_, pattern_;
  std::vector<std::vector<std::uint32_t>> a_pairs_; // ascending b
};

/// Links of a block: the pair index held by each local node, or -1.
struct SubMatching {
  std::vector<std::int32_t> a_pair;
  std::vector<std::int32_t> b_pair;
  std::size_t links = 0;

  SubMatching() = default;
  explicit SubMatching(const SubBlock &block);
  static SubMatching from_pairs(const SubBlock &block,
                                std::span<const std::uint32_t> pairs);
  void link(const SubBlock &block, std::uint32_t pair);
  void unlink(const SubBlock &block, std::uint32_t pair);
  /// Sorted pair indices.
  std::vector<std::uint32_t> key() const;
};

/// One add / drop / move / double-swap step. Pairs listed in `removed`
/// are unlinked before `added` are linked.
struct Move {
  enum class Type { none, add, drop, move, swap };
  Type type = Type::none;
  std::uint32_t added[2]{};
  std::uint32_t removed[2]{};
  int n_added = 0;
  int n_removed = 0;

  int link_change() const { return n_added - n_removed; }
};

/// The move indexed by admitted pair k = (i, j): drop it if linked; add it
/// if both ends are free; move the single conflicting link onto it; or swap
/// (i, j'), (i', j) to (i, j), (i', j') when (i', j') is admitted. Every
/// move is reached from exactly as many pairs as its reverse.
Move move_for_pair(const SubBlock &block, const SubMatching &state, std::uint32_t k);
void apply_move(const SubBlock &block, SubMatching &state, const Move &move);
/// Change in log target: pair weights added minus removed plus the prior
/// change in the link count.
double move_log_ratio(const Move &move, std::span<const double> pair_weights,
                      const BlockPrior &prior, std::size_t block_links);
/// Non-null pair-indexed moves out of `state` (a swap appears twice).
std::vector<Move> neighborhood(const SubBlock &block, const SubMatching &state);

/// Unnormalized log target of a block sub-matching.
double block_log_target(std::span<const std::uint32_t> pairs,
                        std::span<const double> pair_weights,
                        const BlockPrior &prior);

/// One kernel update in place; returns true when the state changed.
bool gibbs_update(const SubBlock &block,
                  const std::vector<std::vector<std::uint32_t>> &matchings,
                  std::span<const double> pair_weights, const BlockPrior &prior,
                  SubMatching &state, Rng &rng);
bool add_drop_swap_update(const SubBlock &block, std::span<const double> pair_weights,
                          const BlockPrior &prior, SubMatching &state, Rng &rng);
bool locally_balanced_update(const SubBlock &block,
                             std::span<const double> pair_weights,
                             const BlockPrior &prior, SubMatching &state, Rng &rng);

/// Exact one-step transition distribution of a kernel from `state`, keyed
/// by sorted pair-index lists. Gibbs needs the block's matchings.
std::map<std::vector<std::uint32_t>, double>
transition_row(KernelKind kind, const SubBlock &block,
               std::span<const double> pair_weights, const BlockPrior &prior,
               const SubMatching &state);

/// Draws m_j ~ Dir(alpha_m + matched) and u_j ~ Dir(alpha_u + indexed -
/// matched + excluded), ignoring level 0.
ModelParams update_params(const LevelCounts &matched, const LevelCounts &indexed,
                          const LevelCounts &excluded, const PriorSpec &prior,
                          Rng &rng);

/// log p(C, m, u | data) up to a constant.
double log_posterior(const LevelCounts &matched, const LevelCounts &indexed,
                     const LevelCounts &excluded, std::size_t links,
                     std::size_t n_a, std::size_t n_b, const ModelParams &params,
                     const PriorSpec &prior);

class TraceWriter {
public:
  TraceWriter(std::ostream &out, std::vector<std::string> a_ids,
              std::vector<std::string> b_ids, std::vector<std::string> fields);
  void header(std::uint64_t seed, const std::string &config_hash);
  void iteration(std::size_t iter, double log_posterior, std::size_t links,
                 std::span<const RecordPair> added,
                 std::span<const RecordPair> removed);
  void params(const ModelParams &params);

private:
  void check();
  std::ostream &out_;
  std::vector<std::string> a_ids_, b_ids_, fields_;
};

struct TraceHeader {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
};

struct TraceIteration {
  std::size_t iter = 0;
  double log_posterior = 0.0;
  std::size_t links = 0;
};

/// Replays a trace, calling back after each iteration with the matching at
/// that point and the most recent parameter snapshot (null before the
/// first). Throws FormatError on malformed lines or a link count that does
/// not match the replayed matching.
TraceHeader replay_trace(
    const std::filesystem::path &path, const std::vector<std::string> &a_ids,
    const std::vector<std::string> &b_ids, const std::vector<std::string> &fields,
    const std::vector<int> &n_levels,
    const std::function<void(const TraceIteration &, const BipartiteMatching &,
                             const ModelParams *)> &callback);

struct McmcOptions {
  std::size_t iterations = 1000;
  std::uint64_t seed = 1;
  KernelPolicy policy;
  bool sample_params = true;
  /// Update blocks concurrently against the link count at the start of the
  /// sweep instead of the running count.
  bool parallel = false;
  unsigned threads = 1;
  std::size_t check_every = 100;
  std::size_t params_every = 10;
  bool use_u_correction = true;
};

struct SamplerState {
  BipartiteMatching matching;
  ModelParams params;
  LevelCounts matched;
  std::size_t iteration = 0;
  double log_posterior = 0.0;
};

struct McmcResult {
  SamplerState final_state;
  std::vector<double> log_posterior;  // per iteration, index 0 = start
  std::vector<std::size_t> links;
  std::vector<KernelKind> block_kernels;
  std::size_t accepted = 0;
  std::size_t proposals = 0;
};

using McmcObserver = std::function<void(const SamplerState &)>;

/// Restricted sampler: pairs outside the blocks stay unlinked. Each
/// iteration runs one kernel update per block, then a parameter draw.
/// Throws std::invalid_argument when blocks share a record or the starting
/// matching links a pair outside the blocks, and std::logic_error when a
/// periodic consistency check fails.
McmcResult run_restricted_mcmc(const PosthocBlockSet &blocks,
                               const PatternTable &patterns, const PairIndex &index,
                               const UCorrectionTallies *tallies,
                               const PriorSpec &prior, const ModelParams &init,
                               const McmcOptions &options,
                               TraceWriter *trace = nullptr,
                               const McmcObserver &observer = {},
                               const BipartiteMatching *start = nullptr);

} // namespace prl
