#pragma once

#include "prl/assignment.hpp"
#include "prl/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace prl {

/// Additive counts for the m- and u-updates, laid out like ModelParams.
struct PseudoCounts {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> u;

  static PseudoCounts zeros(const std::vector<int> &n_levels);
};

/// m-counts follow the prior shape rescaled to `m_total` per field; u gets
/// `u_per_level` on every level.
PseudoCounts default_pseudo_counts(const PriorSpec &prior, double m_total = 10.0,
                                   double u_per_level = 1.0);

/// Starting values: m from the normalized prior shape, u from the level
/// frequencies over all pairs (smoothed by one count per level).
ModelParams default_initial_params(const PatternTable &patterns,
                                   const PriorSpec &prior,
                                   const UCorrectionTallies *tallies);

struct MixtureEstimate {
  ModelParams params;
  double pi = 0.5;
  std::vector<double> loglik_trace;
  std::size_t iterations = 0;
  bool converged = false;
};

struct EmOptions {
  double tol = 1e-8;
  std::size_t max_iter = 1000;
  /// Optional pseudo-counts added in the M-step; their log-density terms are
  /// then part of the traced objective.
  std::optional<PseudoCounts> pseudo_counts;
  bool use_u_correction = true;
};

/// Two-class mixture fit on aggregated patterns. Pairs outside the index
/// enter as known non-matches through the tallies. Throws
/// std::invalid_argument on non-positive starting values or tol <= 0, and
/// std::domain_error on a non-finite likelihood.
MixtureEstimate em_fellegi_sunter(const PatternTable &patterns,
                                  const UCorrectionTallies *tallies,
                                  const ModelParams &init, double init_pi,
                                  const EmOptions &options = {});

struct PenalizedOptions {
  PseudoCounts pseudo_counts;
  double tol = 1e-6;
  std::size_t max_iter = 200;
  /// Starts tried from fresh (the first is the supplied init); the best
  /// final objective wins.
  std::size_t restarts = 3;
  std::uint64_t seed = 1;
  bool use_u_correction = true;
  LsapOptions lsap;
};

struct PenalizedFit {
  BipartiteMatching matching;
  ModelParams params;
  double theta = 0.0;
  std::vector<double> objective_trace;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Penalized objective for a given (C, m, u): complete-data log-likelihood
/// minus theta per link plus the pseudo-count terms.
double penalized_objective(const LevelCounts &matched, const LevelCounts &indexed,
                           const LevelCounts *excluded, std::size_t links,
                           const ModelParams &params, double theta,
                           const PseudoCounts &pseudo);

/// Alternating maximization over the matching (thresholded assignment) and
/// the m/u-probabilities (closed form). Throws std::runtime_error when the
/// objective drops beyond rounding after a parameter step.
PenalizedFit penalized_mle(const PatternTable &patterns, const PairIndex &index,
                           const UCorrectionTallies *tallies, double theta,
                           const ModelParams &init, const PenalizedOptions &options,
                           const BipartiteMatching *warm_start = nullptr);

struct SweepOptions {
  double theta_start = 0.0;
  double min_gap = 0.01;
  std::size_t max_steps = 10000;
  PenalizedOptions fit;
};

struct SweepStep {
  double theta = 0.0;
  std::size_t links = 0;
  double objective = 0.0;
  std::size_t iterations = 0;
  ModelParams params;
};

struct MaximalWeights {
  SparseWeightMatrix weights;          // every indexed pair with a finite maximum
  std::vector<double> pattern_maxima;  // per pattern
  std::vector<SweepStep> steps;
  std::vector<std::vector<double>> objective_traces;
};

/// Runs penalized fits over an increasing theta sequence until the fitted
/// matching is empty and keeps each pattern's largest weight. Throws
/// std::invalid_argument when min_gap <= 0.
MaximalWeights maximal_weights(const PatternTable &patterns,
                               const PairIndex &index,
                               const UCorrectionTallies *tallies,
                               const ModelParams &init,
                               const SweepOptions &options);

/// Pattern weights with -inf where an observed level has zero m-probability.
std::vector<double> pattern_weights_extended(const PatternTable &patterns,
                                             const ModelParams &params);

void write_weights(const std::filesystem::path &path,
                   const SparseWeightMatrix &w,
                   const std::vector<std::string> &a_ids,
                   const std::vector<std::string> &b_ids);
SparseWeightMatrix read_weights(const std::filesystem::path &path,
                                const std::vector<std::string> &a_ids,
                                const std::vector<std::string> &b_ids);

} // namespace prl
