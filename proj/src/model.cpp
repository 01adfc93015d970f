#include "prl/model.hpp"

#include "prl/csv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace prl {

BipartiteMatching::BipartiteMatching(std::size_t n_a, std::size_t n_b)
    : a_to_b_(n_a, kUnmatched), b_to_a_(n_b, kUnmatched) {}

BipartiteMatching BipartiteMatching::from_links(std::size_t n_a,
                                                std::size_t n_b,
                                                std::span<const RecordPair> links) {
  BipartiteMatching m(n_a, n_b);
  for (const auto &l : links)
    m.link(l.a, l.b);
  return m;
}

void BipartiteMatching::link(std::uint32_t a, std::uint32_t b) {
  if (a >= n_a() || b >= n_b())
    throw std::out_of_range("link outside the file sizes");
  if (a_to_b_[a] != kUnmatched || b_to_a_[b] != kUnmatched)
    throw std::logic_error("link (" + std::to_string(a) + "," +
                           std::to_string(b) + ") breaks one-to-one");
  a_to_b_[a] = static_cast<std::int32_t>(b);
  b_to_a_[b] = static_cast<std::int32_t>(a);
  ++count_;
}

void BipartiteMatching::unlink(std::uint32_t a, std::uint32_t b) {
  if (!contains(a, b))
    throw std::logic_error("unlink of a pair that is not linked");
  a_to_b_[a] = kUnmatched;
  b_to_a_[b] = kUnmatched;
  --count_;
}

std::vector<RecordPair> BipartiteMatching::links() const {
  std::vector<RecordPair> out;
  out.reserve(count_);
  for (std::uint32_t a = 0; a < a_to_b_.size(); ++a)
    if (a_to_b_[a] != kUnmatched)
      out.push_back({a, static_cast<std::uint32_t>(a_to_b_[a])});
  return out;
}

namespace {
void check_simplex(const std::vector<double> &v, std::size_t k,
                   const char *what, std::size_t field) {
  if (v.size() != k)
    throw std::invalid_argument(std::string(what) + " vector of field " +
                                std::to_string(field) + " has wrong length");
  double sum = 0.0;
  for (double x : v) {
    if (!(x >= 0.0))
      throw std::invalid_argument(std::string(what) +
                                  " probabilities must be non-negative");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument(std::string(what) + " vector of field " +
                                std::to_string(field) + " does not sum to 1");
}
} // namespace

void ModelParams::validate(const std::vector<int> &n_levels) const {
  if (m.size() != n_levels.size() || u.size() != n_levels.size())
    throw std::invalid_argument("parameter field count mismatch");
  for (std::size_t f = 0; f < n_levels.size(); ++f) {
    check_simplex(m[f], static_cast<std::size_t>(n_levels[f]), "m", f);
    check_simplex(u[f], static_cast<std::size_t>(n_levels[f]), "u", f);
  }
}

ModelParams ModelParams::uniform(const std::vector<int> &n_levels) {
  ModelParams p;
  for (int k : n_levels) {
    p.m.emplace_back(static_cast<std::size_t>(k), 1.0 / k);
    p.u.emplace_back(static_cast<std::size_t>(k), 1.0 / k);
  }
  return p;
}

void PriorSpec::validate(const std::vector<int> &n_levels) const {
  if (!(alpha > 0.0) || !(beta > 0.0))
    throw std::invalid_argument("Beta-bipartite hyperparameters must be > 0");
  if (alpha_m.size() != n_levels.size() || alpha_u.size() != n_levels.size())
    throw std::invalid_argument("Dirichlet prior field count mismatch");
  for (std::size_t f = 0; f < n_levels.size(); ++f) {
    for (const auto *v : {&alpha_m[f], &alpha_u[f]}) {
      if (v->size() != static_cast<std::size_t>(n_levels[f]))
        throw std::invalid_argument("Dirichlet prior of field " +
                                    std::to_string(f) + " has wrong length");
      for (double x : *v)
        if (!(x > 0.0))
          throw std::invalid_argument("Dirichlet pseudo-counts must be > 0");
    }
  }
}

PriorSpec default_prior(const std::vector<ComparatorSpec> &specs) {
  PriorSpec p;
  for (const auto &s : specs) {
    std::vector<double> m(static_cast<std::size_t>(s.n_levels), 1.0);
    switch (s.kind) {
    case ComparatorKind::jaro_winkler:
      if (s.n_levels == 6)
        m = {1, 1, 1, 2, 6, 10};
      break;
    case ComparatorKind::padded_levenshtein:
      if (s.n_levels == 5)
        m = {1, 1, 2, 6, 10};
      break;
    case ComparatorKind::exact:
      m = {1, 5};
      break;
    case ComparatorKind::middle_name_hybrid:
      m = {1, 1, 1, 1, 1, 2, 6, 3, 5, 10};
      break;
    }
    p.alpha_m.push_back(std::move(m));
    p.alpha_u.emplace_back(static_cast<std::size_t>(s.n_levels), 1.0);
  }
  return p;
}

double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

double log_prior_matching(std::size_t links, std::size_t n_a, std::size_t n_b,
                          double alpha, double beta) {
  if (n_a > n_b)
    std::swap(n_a, n_b);
  if (links > n_a)
    throw std::out_of_range("link count exceeds min(n_A, n_B)");
  const double L = static_cast<double>(links);
  const double na = static_cast<double>(n_a);
  const double nb = static_cast<double>(n_b);
  return std::lgamma(nb - L + 1.0) - std::lgamma(nb + 1.0) +
         log_beta(L + alpha, na - L + beta) - log_beta(alpha, beta);
}

double pair_weight(std::span<const Level> levels, const ModelParams &params) {
  double w = 0.0;
  for (std::size_t f = 0; f < levels.size(); ++f) {
    const Level h = levels[f];
    if (h == 0)
      continue;
    const double m = params.m[f][h - 1];
    const double u = params.u[f][h - 1];
    if (!(m > 0.0) || !(u > 0.0))
      throw std::domain_error("zero probability at observed level " +
                              std::to_string(h) + " of field " +
                              std::to_string(f));
    w += std::log(m) - std::log(u);
  }
  return w;
}

std::vector<double> pattern_weights(const PatternTable &patterns,
                                    const ModelParams &params) {
  std::vector<double> w(patterns.patterns.size());
  for (std::size_t p = 0; p < w.size(); ++p)
    w[p] = pair_weight(patterns.patterns[p], params);
  return w;
}

LevelCounts zero_counts(const std::vector<int> &n_levels) {
  LevelCounts c;
  for (int k : n_levels)
    c.emplace_back(static_cast<std::size_t>(k) + 1, 0);
  return c;
}

LevelCounts matched_level_counts(const PatternTable &patterns,
                                 const PairIndex &index,
                                 const BipartiteMatching &matching) {
  LevelCounts c = zero_counts(patterns.n_levels);
  for (const auto &l : matching.links()) {
    auto pos = index.find(l.a, l.b);
    if (!pos)
      throw std::invalid_argument("link (" + std::to_string(l.a) + "," +
                                  std::to_string(l.b) +
                                  ") is not an indexed pair");
    const auto &g = patterns.patterns[patterns.pair_pattern[*pos]];
    for (std::size_t f = 0; f < g.size(); ++f)
      ++c[f][g[f]];
  }
  return c;
}

namespace {
double xlogy(std::uint64_t count, double p) {
  if (count == 0)
    return 0.0;
  if (!(p > 0.0))
    throw std::domain_error("zero probability at a level with observations");
  return static_cast<double>(count) * std::log(p);
}
} // namespace

double log_likelihood_from_counts(const LevelCounts &matched,
                                  const LevelCounts &indexed,
                                  const LevelCounts *excluded,
                                  const ModelParams &params) {
  double ll = 0.0;
  for (std::size_t f = 0; f < matched.size(); ++f) {
    for (std::size_t h = 1; h < matched[f].size(); ++h) {
      std::uint64_t unmatched = indexed[f][h] - matched[f][h];
      if (excluded)
        unmatched += (*excluded)[f][h];
      ll += xlogy(matched[f][h], params.m[f][h - 1]);
      ll += xlogy(unmatched, params.u[f][h - 1]);
    }
  }
  return ll;
}

double log_likelihood(const PatternTable &patterns, const PairIndex &index,
                      const BipartiteMatching &matching,
                      const ModelParams &params,
                      const UCorrectionTallies *tallies) {
  const LevelCounts matched = matched_level_counts(patterns, index, matching);
  const LevelCounts indexed = patterns.level_marginals();
  if (tallies) {
    const LevelCounts excluded = tallies->excluded();
    return log_likelihood_from_counts(matched, indexed, &excluded, params);
  }
  return log_likelihood_from_counts(matched, indexed, nullptr, params);
}

double log_dirichlet_density(std::span<const double> x,
                             std::span<const double> alpha) {
  double a0 = 0.0, out = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    a0 += alpha[i];
    out += (alpha[i] - 1.0) * std::log(x[i]) - std::lgamma(alpha[i]);
  }
  return out + std::lgamma(a0);
}

void write_params(const std::filesystem::path &path,
                  const std::vector<std::string> &fields,
                  const ModelParams &params) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << "field,level,m,u\n";
  for (std::size_t f = 0; f < fields.size(); ++f)
    for (std::size_t h = 0; h < params.m[f].size(); ++h)
      csv::write_row(out, {fields[f], std::to_string(h + 1),
                           format_exact(params.m[f][h]),
                           format_exact(params.u[f][h])});
}

ModelParams read_params(const std::filesystem::path &path,
                        const std::vector<std::string> &fields,
                        const std::vector<int> &n_levels) {
  ModelParams p;
  for (int k : n_levels) {
    p.m.emplace_back(static_cast<std::size_t>(k), -1.0);
    p.u.emplace_back(static_cast<std::size_t>(k), -1.0);
  }
  auto doc = csv::read_file(path);
  for (std::size_t r = 1; r < doc.rows.size(); ++r) {
    const auto &row = doc.rows[r];
    const std::size_t line = doc.line_numbers[r];
    if (row.size() != 4)
      throw FormatError("ragged params row", line);
    auto it = std::find(fields.begin(), fields.end(), row[0]);
    if (it == fields.end())
      throw FormatError("params for unknown field '" + row[0] + "'", line, 1);
    const auto f = static_cast<std::size_t>(it - fields.begin());
    const int h = std::stoi(row[1]);
    if (h < 1 || h > n_levels[f])
      throw FormatError("params level out of range", line, 2);
    p.m[f][static_cast<std::size_t>(h - 1)] = std::stod(row[2]);
    p.u[f][static_cast<std::size_t>(h - 1)] = std::stod(row[3]);
  }
  p.validate(n_levels);
  return p;
}

} // namespace prl
