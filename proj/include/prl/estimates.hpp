#pragma once

#include "prl/assignment.hpp"
#include "prl/model.hpp"
#include "prl/records.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace prl {

struct PosteriorSummary {
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  std::size_t retained = 0;
  /// Pairs linked in at least one retained iteration, ascending.
  std::vector<std::pair<RecordPair, double>> link_prob;
  std::vector<std::size_t> link_counts;  // L per retained iteration
  std::optional<ModelParams> params_mean;

  double probability(std::uint32_t a, std::uint32_t b) const;
  double mean_links() const;
};

/// Streaming link-frequency reduction over sampled matchings.
class PosteriorAccumulator {
public:
  PosteriorAccumulator(std::size_t n_a, std::size_t n_b);
  void add(const BipartiteMatching &matching, const ModelParams *params = nullptr);
  /// Throws std::invalid_argument when nothing was added.
  PosteriorSummary summary() const;

private:
  std::size_t n_a_, n_b_, n_ = 0;
  std::unordered_map<std::uint64_t, std::size_t> counts_;
  std::vector<std::size_t> link_counts_;
  std::optional<ModelParams> params_sum_;
  std::size_t params_n_ = 0;
};

/// Replays a trace and averages over iterations numbered above burn_in.
/// Throws std::invalid_argument when no iteration survives the burn-in.
PosteriorSummary posterior_link_probabilities(
    const std::filesystem::path &trace, const std::vector<std::string> &a_ids,
    const std::vector<std::string> &b_ids, const std::vector<std::string> &fields,
    const std::vector<int> &n_levels, std::size_t burn_in);

/// Links every pair whose probability exceeds `threshold`. Conflicts (only
/// possible below 0.5) go to the higher probability, then the smaller pair.
BipartiteMatching bayes_point_estimate(const PosteriorSummary &summary,
                                       double threshold = 0.5);

/// Number of links declared at each threshold.
std::vector<std::pair<double, std::size_t>>
matches_made_curve(const PosteriorSummary &summary,
                   const std::vector<double> &thresholds);

enum class PairLabel { non_match, indeterminate, match };
std::string to_string(PairLabel l);

/// Match when w > t_match; non-match when w < t_nonmatch, or when the two
/// thresholds coincide and w equals them; indeterminate otherwise. One
/// label per entry, no one-to-one enforcement. Throws
/// std::invalid_argument when t_nonmatch > t_match.
std::vector<PairLabel> fs_decision_rule(const SparseWeightMatrix &w, double t_match,
                                        double t_nonmatch);

/// Thresholded assignment: the threshold is part of the optimization.
BipartiteMatching corrected_jaro_estimate(const SparseWeightMatrix &w, double lambda,
                                          const LsapOptions &options = {});
/// Classical order: complete assignment first, then drop links at or below
/// lambda (and links to pairs with no weight).
BipartiteMatching uncorrected_jaro_estimate(const SparseWeightMatrix &w,
                                            double lambda);

struct AdjustedValue {
  double value = 0.0;
  bool clamped = false;
};

/// (rho - chance * pi_F) / (1 - pi_F), clamped to [0,1]. Throws
/// std::invalid_argument unless 0 <= pi_F < 1.
AdjustedValue adjusted_switch_rate(double rho_observed, double pi_f,
                                   double chance_rate = 0.5);
/// (n_r2d - chance * n_switch * pi_F) / (n_switch (1 - pi_F)), clamped.
/// Throws std::invalid_argument when n_switch = 0, n_r2d > n_switch or
/// pi_F is outside [0,1).
AdjustedValue adjusted_direction_fraction(std::uint64_t n_r2d, std::uint64_t n_switch,
                                          double pi_f, double chance_fraction = 0.7);

/// Street-name similarity below 0.85 or street-number similarity below
/// 0.5. A missing value on either side makes the pair a non-mover.
bool is_mover(const FieldValue &a_street_name, const FieldValue &a_street_number,
              const FieldValue &b_street_name, const FieldValue &b_street_number);

struct Subgroup {
  std::string name;
  std::function<bool(std::uint32_t a, std::uint32_t b)> contains;
};

struct SwitchRateOptions {
  std::string republican = "rep";
  std::string democrat = "dem";
  double chance_rate = 0.5;
  double chance_fraction = 0.7;
  /// Named false-match-rate variants; each maps a subgroup name to pi_F.
  std::vector<std::pair<std::string, std::unordered_map<std::string, double>>>
      adjustments;
};

struct SubgroupPosterior {
  std::string name;
  std::vector<double> switch_rate;        // one per iteration with links
  std::vector<double> r2d_fraction;       // one per iteration with switches
  std::size_t missing = 0;                // iterations with no eligible link
  std::vector<std::pair<std::string, std::vector<double>>> adjusted;
  std::vector<std::pair<std::string, std::vector<double>>> adjusted_r2d;
  std::size_t clamped = 0;
};

struct DistributionSummary {
  double mean = 0.0;
  double q025 = 0.0;
  double q500 = 0.0;
  double q975 = 0.0;
};
DistributionSummary summarize_samples(std::vector<double> samples);

/// Per-iteration switch rates among links whose records are both
/// Republican or Democrat, by subgroup, with optional adjustments.
class SwitchRateAccumulator {
public:
  SwitchRateAccumulator(std::vector<FieldValue> a_party,
                        std::vector<FieldValue> b_party,
                        std::vector<Subgroup> subgroups, SwitchRateOptions options);
  void add(const BipartiteMatching &matching);
  const std::vector<SubgroupPosterior> &result() const { return out_; }

private:
  std::vector<FieldValue> a_party_, b_party_;
  std::vector<Subgroup> groups_;
  SwitchRateOptions options_;
  std::vector<SubgroupPosterior> out_;
};

void write_switch_rates(const std::filesystem::path &path,
                        const std::vector<SubgroupPosterior> &posteriors);

struct StratumLabels {
  std::string name;
  std::uint64_t false_matches = 0;
  std::uint64_t true_matches = 0;
  std::uint64_t no_determination = 0;
  std::uint64_t size = 0;  // declared links in the stratum
};

enum class NdPolicy { exclude, as_false };
std::string to_string(NdPolicy p);

struct FmrEstimate {
  std::string stratum;
  NdPolicy policy = NdPolicy::exclude;
  double estimate = 0.0;
  double se = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Per-stratum proportions with SE sqrt(p(1-p)/(n-1)), then the
/// size-weighted overall estimate (last row, stratum "overall"). 95%
/// normal intervals clamped to [0,1]. Throws std::invalid_argument for a
/// stratum with no labels under the policy or a zero total size.
std::vector<FmrEstimate> stratified_fmr(const std::vector<StratumLabels> &strata,
                                        NdPolicy policy);

struct StratumRate {
  std::string name;
  std::uint64_t size = 0;
  std::optional<double> fmr;  // empty when the stratum was not labeled
};
enum class UnlabeledConvention { max_labeled, one };

/// Size-weighted false-match rate where unlabeled strata take the largest
/// labeled rate or 1. Throws std::invalid_argument for max_labeled when no
/// stratum is labeled.
double combined_fmr(const std::vector<StratumRate> &strata,
                    UnlabeledConvention convention);

void write_fmr_report(const std::filesystem::path &path,
                      const std::vector<FmrEstimate> &rows);
void write_link_probabilities(const std::filesystem::path &path,
                              const PosteriorSummary &summary,
                              const std::vector<std::string> &a_ids,
                              const std::vector<std::string> &b_ids);
void write_matching(const std::filesystem::path &path,
                    const BipartiteMatching &matching,
                    const std::vector<std::string> &a_ids,
                    const std::vector<std::string> &b_ids);

} // namespace prl
