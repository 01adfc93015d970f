#pragma once

#include "prl/comparators.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace prl {

/// One-to-one link structure between files A and B, stored as partner
/// arrays so membership and partner lookups are O(1).
class BipartiteMatching {
public:
  static constexpr std::int32_t kUnmatched = -1;

  BipartiteMatching() = default;
  BipartiteMatching(std::size_t n_a, std::size_t n_b);
  static BipartiteMatching from_links(std::size_t n_a, std::size_t n_b,
                                      std::span<const RecordPair> links);

  std::size_t n_a() const noexcept { return a_to_b_.size(); }
  std::size_t n_b() const noexcept { return b_to_a_.size(); }
  std::size_t size() const noexcept { return count_; }
  bool empty() const noexcept { return count_ == 0; }

  std::int32_t partner_of_a(std::uint32_t a) const { return a_to_b_[a]; }
  std::int32_t partner_of_b(std::uint32_t b) const { return b_to_a_[b]; }
  bool contains(std::uint32_t a, std::uint32_t b) const {
    return a_to_b_[a] == static_cast<std::int32_t>(b);
  }

  /// Throws std::logic_error when a or b is already linked.
  void link(std::uint32_t a, std::uint32_t b);
  /// Throws std::logic_error when (a, b) is not a link.
  void unlink(std::uint32_t a, std::uint32_t b);

  /// Links in ascending (a, b) order.
  std::vector<RecordPair> links() const;

  bool operator==(const BipartiteMatching &) const = default;

private:
  std::vector<std::int32_t> a_to_b_;
  std::vector<std::int32_t> b_to_a_;
  std::size_t count_ = 0;
};

/// m- and u-probabilities per field. Vector j has k_j entries; entry h-1
/// holds the probability of level h (level 0 is never modelled).
struct ModelParams {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> u;

  /// Throws std::invalid_argument unless every vector is non-negative and
  /// sums to one within 1e-12 (shape checked against n_levels).
  void validate(const std::vector<int> &n_levels) const;
  static ModelParams uniform(const std::vector<int> &n_levels);
};

struct PriorSpec {
  double alpha = 1.0;
  double beta = 1.0;
  std::vector<std::vector<double>> alpha_m;
  std::vector<std::vector<double>> alpha_u;

  void validate(const std::vector<int> &n_levels) const;
};

/// Beta-bipartite prior on the link count plus Dirichlet priors shaped by
/// comparator layout: agreement-heavy m-priors, uniform u-priors.
PriorSpec default_prior(const std::vector<ComparatorSpec> &specs);

double log_beta(double a, double b);

/// log of the Beta-bipartite prior mass of one particular matching with L
/// links. Throws std::out_of_range when L > min(n_a, n_b).
double log_prior_matching(std::size_t links, std::size_t n_a, std::size_t n_b,
                          double alpha, double beta);

/// log m(g) - log u(g) summed over non-missing fields. Throws
/// std::domain_error on a zero probability at an observed level.
double pair_weight(std::span<const Level> levels, const ModelParams &params);
std::vector<double> pattern_weights(const PatternTable &patterns,
                                    const ModelParams &params);

using LevelCounts = std::vector<std::vector<std::uint64_t>>;

LevelCounts zero_counts(const std::vector<int> &n_levels);
/// Per field, number of linked pairs at each level 0..k_j. Throws
/// std::invalid_argument if a link is not an indexed pair.
LevelCounts matched_level_counts(const PatternTable &patterns,
                                 const PairIndex &index,
                                 const BipartiteMatching &matching);

/// Complete-data log-likelihood from sufficient statistics: matched counts
/// go to m, the rest of the indexed pairs plus `excluded` go to u.
double log_likelihood_from_counts(const LevelCounts &matched,
                                  const LevelCounts &indexed,
                                  const LevelCounts *excluded,
                                  const ModelParams &params);

/// log-likelihood of (C, m, u) over indexed pairs, plus the excluded-pair
/// tallies on the u side when `tallies` is given.
double log_likelihood(const PatternTable &patterns, const PairIndex &index,
                      const BipartiteMatching &matching,
                      const ModelParams &params,
                      const UCorrectionTallies *tallies);

double log_dirichlet_density(std::span<const double> x,
                             std::span<const double> alpha);

void write_params(const std::filesystem::path &path,
                  const std::vector<std::string> &fields,
                  const ModelParams &params);
ModelParams read_params(const std::filesystem::path &path,
                        const std::vector<std::string> &fields,
                        const std::vector<int> &n_levels);

} // namespace prl
