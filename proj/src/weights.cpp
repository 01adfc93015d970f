#include "prl/weights.hpp"

#include "prl/csv.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace prl {

PseudoCounts PseudoCounts::zeros(const std::vector<int> &n_levels) {
  PseudoCounts p;
  for (int k : n_levels) {
    p.m.emplace_back(static_cast<std::size_t>(k), 0.0);
    p.u.emplace_back(static_cast<std::size_t>(k), 0.0);
  }
  return p;
}

PseudoCounts default_pseudo_counts(const PriorSpec &prior, double m_total,
                                   double u_per_level) {
  PseudoCounts p;
  for (const auto &shape : prior.alpha_m) {
    double sum = 0.0;
    for (double x : shape)
      sum += x;
    std::vector<double> m(shape.size());
    for (std::size_t h = 0; h < shape.size(); ++h)
      m[h] = m_total * shape[h] / sum;
    p.m.push_back(std::move(m));
  }
  for (const auto &shape : prior.alpha_u)
    p.u.emplace_back(shape.size(), u_per_level);
  return p;
}

namespace {

std::vector<double> normalized(std::vector<double> v) {
  double sum = 0.0;
  for (double x : v)
    sum += x;
  if (!(sum > 0.0)) {
    std::fill(v.begin(), v.end(), 1.0 / static_cast<double>(v.size()));
    return v;
  }
  for (double &x : v)
    x /= sum;
  return v;
}

LevelCounts excluded_counts(const PatternTable &patterns,
                            const UCorrectionTallies *tallies, bool use) {
  if (tallies && use) {
    if (tallies->full.size() != patterns.n_fields())
      throw std::invalid_argument("tallies do not match the comparison fields");
    return tallies->excluded();
  }
  return zero_counts(patterns.n_levels);
}

double pseudo_terms(const ModelParams &params, const PseudoCounts &pseudo) {
  double out = 0.0;
  for (std::size_t f = 0; f < params.m.size(); ++f)
    for (std::size_t h = 0; h < params.m[f].size(); ++h) {
      if (pseudo.m[f][h] > 0.0)
        out += pseudo.m[f][h] * std::log(params.m[f][h]);
      if (pseudo.u[f][h] > 0.0)
        out += pseudo.u[f][h] * std::log(params.u[f][h]);
    }
  return out;
}

void check_pseudo_shape(const PseudoCounts &p, const std::vector<int> &n_levels) {
  if (p.m.size() != n_levels.size() || p.u.size() != n_levels.size())
    throw std::invalid_argument("pseudo-count field count mismatch");
  for (std::size_t f = 0; f < n_levels.size(); ++f) {
    if (p.m[f].size() != static_cast<std::size_t>(n_levels[f]) ||
        p.u[f].size() != static_cast<std::size_t>(n_levels[f]))
      throw std::invalid_argument("pseudo-count level count mismatch");
    for (std::size_t h = 0; h < p.m[f].size(); ++h)
      if (!(p.m[f][h] >= 0.0) || !(p.u[f][h] >= 0.0))
        throw std::invalid_argument("pseudo-counts must be >= 0");
  }
}

} // namespace

ModelParams default_initial_params(const PatternTable &patterns,
                                   const PriorSpec &prior,
                                   const UCorrectionTallies *tallies) {
  ModelParams p;
  const LevelCounts marg = tallies ? tallies->full : patterns.level_marginals();
  for (std::size_t f = 0; f < patterns.n_fields(); ++f) {
    p.m.push_back(normalized(prior.alpha_m[f]));
    std::vector<double> u(static_cast<std::size_t>(patterns.n_levels[f]));
    for (std::size_t h = 0; h < u.size(); ++h)
      u[h] = static_cast<double>(marg[f][h + 1]) + 1.0;
    p.u.push_back(normalized(std::move(u)));
  }
  return p;
}

std::vector<double> pattern_weights_extended(const PatternTable &patterns,
                                             const ModelParams &params) {
  std::vector<double> w(patterns.patterns.size(), 0.0);
  for (std::size_t p = 0; p < w.size(); ++p) {
    const auto &g = patterns.patterns[p];
    for (std::size_t f = 0; f < g.size(); ++f) {
      if (g[f] == 0)
        continue;
      const double m = params.m[f][g[f] - 1];
      const double u = params.u[f][g[f] - 1];
      if (!(u > 0.0))
        throw std::domain_error("zero u-probability at an observed level");
      if (!(m > 0.0)) {
        w[p] = -std::numeric_limits<double>::infinity();
        break;
      }
      w[p] += std::log(m) - std::log(u);
    }
  }
  return w;
}

MixtureEstimate em_fellegi_sunter(const PatternTable &patterns,
                                  const UCorrectionTallies *tallies,
                                  const ModelParams &init, double init_pi,
                                  const EmOptions &options) {
  if (!(options.tol > 0.0))
    throw std::invalid_argument("EM tolerance must be positive");
  if (!(init_pi > 0.0 && init_pi < 1.0))
    throw std::invalid_argument("initial mixing weight must lie in (0,1)");
  init.validate(patterns.n_levels);
  for (const auto *side : {&init.m, &init.u})
    for (const auto &v : *side)
      for (double x : v)
        if (!(x > 0.0))
          throw std::invalid_argument("EM starting probabilities must be > 0");
  const PseudoCounts pseudo =
      options.pseudo_counts.value_or(PseudoCounts::zeros(patterns.n_levels));
  check_pseudo_shape(pseudo, patterns.n_levels);

  const LevelCounts excluded =
      excluded_counts(patterns, tallies, options.use_u_correction);
  const std::size_t nf = patterns.n_fields();
  const double n_indexed = static_cast<double>(patterns.total());

  MixtureEstimate est;
  est.params = init;
  est.pi = init_pi;
  std::vector<double> resp(patterns.patterns.size());
  double prev = -std::numeric_limits<double>::infinity();

  for (std::size_t iter = 0; iter < options.max_iter; ++iter) {
    double ll = 0.0;
    const double log_pi = std::log(est.pi), log_1pi = std::log1p(-est.pi);
    for (std::size_t p = 0; p < patterns.patterns.size(); ++p) {
      const auto &g = patterns.patterns[p];
      double lm = log_pi, lu = log_1pi;
      for (std::size_t f = 0; f < nf; ++f) {
        if (g[f] == 0)
          continue;
        lm += std::log(est.params.m[f][g[f] - 1]);
        lu += std::log(est.params.u[f][g[f] - 1]);
      }
      const double top = std::max(lm, lu);
      const double mix = top + std::log(std::exp(lm - top) + std::exp(lu - top));
      ll += static_cast<double>(patterns.counts[p]) * mix;
      resp[p] = std::exp(lm - mix);
    }
    for (std::size_t f = 0; f < nf; ++f)
      for (std::size_t h = 1; h < excluded[f].size(); ++h)
        if (excluded[f][h] > 0)
          ll += static_cast<double>(excluded[f][h]) *
                std::log(est.params.u[f][h - 1]);
    ll += pseudo_terms(est.params, pseudo);
    if (!std::isfinite(ll))
      throw std::domain_error("EM log-likelihood is not finite");
    if (ll < prev - 1e-9 * std::max(1.0, std::abs(prev)))
      throw std::runtime_error("EM log-likelihood decreased");
    est.loglik_trace.push_back(ll);
    est.iterations = iter;
    if (std::isfinite(prev) &&
        std::abs(ll - prev) <= options.tol * std::max(1.0, std::abs(prev))) {
      est.converged = true;
      break;
    }
    prev = ll;

    double matched_mass = 0.0;
    for (std::size_t p = 0; p < resp.size(); ++p)
      matched_mass += resp[p] * static_cast<double>(patterns.counts[p]);
    for (std::size_t f = 0; f < nf; ++f) {
      const auto k = static_cast<std::size_t>(patterns.n_levels[f]);
      std::vector<double> m(pseudo.m[f]), u(pseudo.u[f]);
      for (std::size_t p = 0; p < resp.size(); ++p) {
        const Level h = patterns.patterns[p][f];
        if (h == 0)
          continue;
        const double c = static_cast<double>(patterns.counts[p]);
        m[h - 1] += resp[p] * c;
        u[h - 1] += (1.0 - resp[p]) * c;
      }
      for (std::size_t h = 0; h < k; ++h)
        u[h] += static_cast<double>(excluded[f][h + 1]);
      est.params.m[f] = normalized(std::move(m));
      est.params.u[f] = normalized(std::move(u));
    }
    est.pi = n_indexed > 0.0 ? matched_mass / n_indexed : 0.5;
    est.pi = std::clamp(est.pi, 1e-300, 1.0 - 1e-16);
  }
  return est;
}

double penalized_objective(const LevelCounts &matched, const LevelCounts &indexed,
                           const LevelCounts *excluded, std::size_t links,
                           const ModelParams &params, double theta,
                           const PseudoCounts &pseudo) {
  return log_likelihood_from_counts(matched, indexed, excluded, params) -
         theta * static_cast<double>(links) + pseudo_terms(params, pseudo);
}

namespace {

struct FitContext {
  const PatternTable &patterns;
  const PairIndex &index;
  LevelCounts indexed;
  LevelCounts excluded;
  const PseudoCounts &pseudo;
  const PenalizedOptions &options;
};

LevelCounts matched_counts(const FitContext &ctx, const BipartiteMatching &c) {
  return matched_level_counts(ctx.patterns, ctx.index, c);
}

BipartiteMatching c_step(const FitContext &ctx, const ModelParams &params,
                         double theta, const BipartiteMatching *warm) {
  const std::vector<double> pw = pattern_weights_extended(ctx.patterns, params);
  SparseWeightMatrix w;
  w.n_a = ctx.index.n_a;
  w.n_b = ctx.index.n_b;
  for (std::size_t k = 0; k < ctx.index.pairs.size(); ++k) {
    const double x = pw[ctx.patterns.pair_pattern[k]];
    if (x > theta)
      w.entries.push_back({ctx.index.pairs[k].a, ctx.index.pairs[k].b, x});
  }
  return solve_thresholded_lsap(w, theta, ctx.options.lsap, warm).matching;
}

ModelParams m_step(const FitContext &ctx, const LevelCounts &matched) {
  ModelParams p;
  for (std::size_t f = 0; f < ctx.patterns.n_fields(); ++f) {
    const auto k = static_cast<std::size_t>(ctx.patterns.n_levels[f]);
    std::vector<double> m(ctx.pseudo.m[f]), u(ctx.pseudo.u[f]);
    for (std::size_t h = 0; h < k; ++h) {
      m[h] += static_cast<double>(matched[f][h + 1]);
      u[h] += static_cast<double>(ctx.indexed[f][h + 1] - matched[f][h + 1] +
                                  ctx.excluded[f][h + 1]);
    }
    p.m.push_back(normalized(std::move(m)));
    p.u.push_back(normalized(std::move(u)));
  }
  return p;
}

double objective_of(const FitContext &ctx, const LevelCounts &matched,
                    std::size_t links, const ModelParams &params, double theta) {
  // A zero probability at a level with counts makes the objective -inf;
  // treat that as the worst value rather than an error.
  try {
    return penalized_objective(matched, ctx.indexed, &ctx.excluded, links,
                               params, theta, ctx.pseudo);
  } catch (const std::domain_error &) {
    return -std::numeric_limits<double>::infinity();
  }
}

PenalizedFit fit_once(const FitContext &ctx, double theta, ModelParams params,
                      const BipartiteMatching *warm) {
  PenalizedFit fit;
  fit.theta = theta;
  BipartiteMatching current =
      warm ? *warm : BipartiteMatching(ctx.index.n_a, ctx.index.n_b);
  double objective = -std::numeric_limits<double>::infinity();
  if (warm)
    objective = objective_of(ctx, matched_counts(ctx, current), current.size(),
                             params, theta);

  for (std::size_t iter = 0; iter < ctx.options.max_iter; ++iter) {
    fit.iterations = iter + 1;
    BipartiteMatching proposal = c_step(ctx, params, theta, &current);
    LevelCounts matched = matched_counts(ctx, proposal);
    const double after_c =
        objective_of(ctx, matched, proposal.size(), params, theta);
    if (after_c >= objective || !std::isfinite(objective)) {
      current = std::move(proposal);
    } else {
      matched = matched_counts(ctx, current);
    }

    params = m_step(ctx, matched);
    const double after_m =
        objective_of(ctx, matched, current.size(), params, theta);
    if (std::isfinite(objective) &&
        after_m < objective - 1e-9 * std::max(1.0, std::abs(objective)))
      throw std::runtime_error(
          "penalized objective decreased from " + format_exact(objective) +
          " to " + format_exact(after_m) + " at theta " + format_exact(theta));
    fit.objective_trace.push_back(after_m);
    const double prev = objective;
    objective = std::max(objective, after_m);
    if (std::isfinite(prev) &&
        std::abs(after_m - prev) <= ctx.options.tol * std::max(1.0, std::abs(prev))) {
      fit.converged = true;
      break;
    }
  }
  fit.matching = std::move(current);
  fit.params = std::move(params);
  return fit;
}

ModelParams random_start(const PatternTable &patterns, const ModelParams &base,
                         std::mt19937_64 &rng) {
  ModelParams p;
  auto draw = [&](const std::vector<double> &centre, double concentration) {
    std::vector<double> out(centre.size());
    for (std::size_t h = 0; h < centre.size(); ++h) {
      std::gamma_distribution<double> g(concentration * centre[h] + 0.5, 1.0);
      out[h] = g(rng);
    }
    return normalized(std::move(out));
  };
  for (std::size_t f = 0; f < patterns.n_fields(); ++f) {
    p.m.push_back(draw(base.m[f], 10.0));
    p.u.push_back(draw(base.u[f], 100.0));
  }
  return p;
}

} // namespace

PenalizedFit penalized_mle(const PatternTable &patterns, const PairIndex &index,
                           const UCorrectionTallies *tallies, double theta,
                           const ModelParams &init, const PenalizedOptions &options,
                           const BipartiteMatching *warm_start) {
  if (!std::isfinite(theta))
    throw std::invalid_argument("theta must be finite");
  if (patterns.pair_pattern.size() != index.pairs.size())
    throw std::invalid_argument("pattern map does not match the pair index");
  init.validate(patterns.n_levels);
  check_pseudo_shape(options.pseudo_counts, patterns.n_levels);

  FitContext ctx{patterns,
                 index,
                 patterns.level_marginals(),
                 excluded_counts(patterns, tallies, options.use_u_correction),
                 options.pseudo_counts,
                 options};

  PenalizedFit best = fit_once(ctx, theta, init, warm_start);
  std::mt19937_64 rng(options.seed);
  for (std::size_t r = 1; r < options.restarts; ++r) {
    PenalizedFit alt = fit_once(ctx, theta, random_start(patterns, init, rng),
                                nullptr);
    if (!alt.objective_trace.empty() &&
        (best.objective_trace.empty() ||
         alt.objective_trace.back() > best.objective_trace.back()))
      best = std::move(alt);
  }
  return best;
}

MaximalWeights maximal_weights(const PatternTable &patterns,
                               const PairIndex &index,
                               const UCorrectionTallies *tallies,
                               const ModelParams &init,
                               const SweepOptions &options) {
  if (!(options.min_gap > 0.0))
    throw std::invalid_argument("min_gap must be positive");
  MaximalWeights out;
  out.pattern_maxima.assign(patterns.patterns.size(),
                            -std::numeric_limits<double>::infinity());

  double theta = options.theta_start;
  PenalizedOptions fit_opts = options.fit;
  PenalizedFit fit = penalized_mle(patterns, index, tallies, theta, init, fit_opts);
  fit_opts.restarts = 1;
  for (std::size_t step = 0;; ++step) {
    const std::vector<double> pw = pattern_weights_extended(patterns, fit.params);
    for (std::size_t p = 0; p < pw.size(); ++p)
      out.pattern_maxima[p] = std::max(out.pattern_maxima[p], pw[p]);
    out.steps.push_back({theta, fit.matching.size(),
                         fit.objective_trace.empty() ? 0.0
                                                     : fit.objective_trace.back(),
                         fit.iterations, fit.params});
    out.objective_traces.push_back(fit.objective_trace);
    spdlog::debug("sweep theta={:.4f} links={}", theta, fit.matching.size());
    if (fit.matching.empty())
      break;
    if (step + 1 >= options.max_steps) {
      spdlog::warn("maximal-weight sweep stopped after {} steps with {} links",
                   options.max_steps, fit.matching.size());
      break;
    }
    double smallest = std::numeric_limits<double>::infinity();
    for (const auto &l : fit.matching.links())
      smallest = std::min(smallest,
                          pw[patterns.pair_pattern[*index.find(l.a, l.b)]]);
    theta = std::max(smallest, theta + options.min_gap);
    const BipartiteMatching previous = fit.matching;
    fit = penalized_mle(patterns, index, tallies, theta, fit.params, fit_opts,
                        &previous);
  }

  out.weights.n_a = index.n_a;
  out.weights.n_b = index.n_b;
  for (std::size_t k = 0; k < index.pairs.size(); ++k) {
    const double x = out.pattern_maxima[patterns.pair_pattern[k]];
    if (std::isfinite(x))
      out.weights.entries.push_back({index.pairs[k].a, index.pairs[k].b, x});
  }
  return out;
}

void write_weights(const std::filesystem::path &path,
                   const SparseWeightMatrix &w,
                   const std::vector<std::string> &a_ids,
                   const std::vector<std::string> &b_ids) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << "a_id,b_id,weight\n";
  for (const auto &e : w.entries)
    csv::write_row(out, {a_ids[e.a], b_ids[e.b], format_exact(e.w)});
}

SparseWeightMatrix read_weights(const std::filesystem::path &path,
                                const std::vector<std::string> &a_ids,
                                const std::vector<std::string> &b_ids) {
  std::unordered_map<std::string, std::uint32_t> a_pos, b_pos;
  for (std::uint32_t i = 0; i < a_ids.size(); ++i)
    a_pos.emplace(a_ids[i], i);
  for (std::uint32_t i = 0; i < b_ids.size(); ++i)
    b_pos.emplace(b_ids[i], i);
  const auto doc = csv::read_file(path);
  SparseWeightMatrix w;
  w.n_a = a_ids.size();
  w.n_b = b_ids.size();
  for (std::size_t r = 1; r < doc.rows.size(); ++r) {
    const auto &row = doc.rows[r];
    const std::size_t line = doc.line_numbers[r];
    if (row.size() != 3)
      throw FormatError("weight rows need a_id,b_id,weight", line);
    auto ia = a_pos.find(row[0]);
    if (ia == a_pos.end())
      throw FormatError("unknown a_id '" + row[0] + "'", line, 1);
    auto ib = b_pos.find(row[1]);
    if (ib == b_pos.end())
      throw FormatError("unknown b_id '" + row[1] + "'", line, 2);
    double x = 0.0;
    try {
      x = std::stod(row[2]);
    } catch (const std::exception &) {
      throw FormatError("weight is not a number", line, 3);
    }
    w.entries.push_back({ia->second, ib->second, x});
  }
  w.canonicalize();
  return w;
}

} // namespace prl
