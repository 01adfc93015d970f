// Brute-force reference implementations used by the unit and acceptance tests.
#pragma once

#include "prl/assignment.hpp"
#include "prl/comparators.hpp"
#include "prl/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <vector>

namespace oracle {

using prl::RecordPair;

inline std::string index_key(const std::string &v, const prl::IndexClause &c) {
  std::size_t len = c.prefix_length;
  for (const auto &ex : c.exceptions)
    if (v.rfind(ex.prefix, 0) == 0) {
      len = ex.prefix_length;
      break;
    }
  return v.substr(0, len);
}

// every pair, tested clause by clause
inline std::vector<RecordPair> index_pairs(const prl::RecordTable &a, const prl::RecordTable &b,
                                           const std::vector<prl::IndexClause> &clauses) {
  std::vector<RecordPair> out;
  for (std::uint32_t i = 0; i < a.size(); ++i)
    for (std::uint32_t j = 0; j < b.size(); ++j)
      for (const auto &c : clauses) {
        const auto &va = a.value(i, *a.schema.index_of(c.field));
        const auto &vb = b.value(j, *b.schema.index_of(c.field));
        if (va && vb && index_key(*va, c) == index_key(*vb, c)) {
          out.push_back({i, j});
          break;
        }
      }
  return out;
}

struct Tallies {
  std::vector<std::vector<std::uint64_t>> full, indexed;
};

inline Tallies tallies(const prl::RecordTable &a, const prl::RecordTable &b,
                       const std::vector<prl::ComparatorSpec> &specs,
                       const std::vector<RecordPair> &index) {
  Tallies t;
  std::set<RecordPair> in(index.begin(), index.end());
  for (const auto &s : specs) {
    t.full.emplace_back(s.n_levels + 1, 0);
    t.indexed.emplace_back(s.n_levels + 1, 0);
  }
  for (std::uint32_t i = 0; i < a.size(); ++i)
    for (std::uint32_t j = 0; j < b.size(); ++j) {
      const bool indexed = in.count({i, j}) > 0;
      for (std::size_t f = 0; f < specs.size(); ++f) {
        const auto col_a = *a.schema.index_of(specs[f].field);
        const auto col_b = *b.schema.index_of(specs[f].field);
        const auto h = prl::compare_values(specs[f], a.value(i, col_a), b.value(j, col_b));
        ++t.full[f][h];
        if (indexed)
          ++t.indexed[f][h];
      }
    }
  return t;
}

inline std::vector<prl::Level> levels(const prl::RecordTable &a, const prl::RecordTable &b,
                                      const std::vector<prl::ComparatorSpec> &specs,
                                      std::uint32_t i, std::uint32_t j) {
  std::vector<prl::Level> out;
  for (const auto &s : specs)
    out.push_back(prl::compare_values(s, a.value(i, *a.schema.index_of(s.field)),
                                      b.value(j, *b.schema.index_of(s.field))));
  return out;
}

// complete-data log-likelihood over every pair of A x B, long double sum
inline long double log_likelihood(const prl::RecordTable &a, const prl::RecordTable &b,
                                  const std::vector<prl::ComparatorSpec> &specs,
                                  const std::set<RecordPair> &links,
                                  const prl::ModelParams &p) {
  long double ll = 0;
  for (std::uint32_t i = 0; i < a.size(); ++i)
    for (std::uint32_t j = 0; j < b.size(); ++j) {
      const bool linked = links.count({i, j}) > 0;
      const auto lv = levels(a, b, specs, i, j);
      for (std::size_t f = 0; f < lv.size(); ++f)
        if (lv[f])
          ll += std::log(static_cast<long double>(linked ? p.m[f][lv[f] - 1]
                                                         : p.u[f][lv[f] - 1]));
    }
  return ll;
}

// all one-to-one matchings using only `allowed` pairs (every pair when empty)
inline void for_each_matching(std::size_t n_a, std::size_t n_b,
                              const std::set<RecordPair> *allowed,
                              const std::function<void(const std::vector<RecordPair> &)> &fn) {
  std::vector<RecordPair> cur;
  std::vector<bool> used(n_b, false);
  std::function<void(std::uint32_t)> rec = [&](std::uint32_t i) {
    if (i == n_a) {
      fn(cur);
      return;
    }
    rec(i + 1);
    for (std::uint32_t j = 0; j < n_b; ++j) {
      if (used[j] || (allowed && !allowed->count({i, j})))
        continue;
      used[j] = true;
      cur.push_back({i, j});
      rec(i + 1);
      cur.pop_back();
      used[j] = false;
    }
  };
  rec(0);
}

inline double choose(double n, double k) {
  return std::exp(std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1));
}

// Beta-binomial on L spread uniformly over the matchings with L links
inline double prior_mass(std::size_t L, std::size_t n_a, std::size_t n_b, double alpha,
                         double beta) {
  const double n = static_cast<double>(std::min(n_a, n_b));
  const double l = static_cast<double>(L);
  auto lbeta = [](double x, double y) {
    return std::lgamma(x) + std::lgamma(y) - std::lgamma(x + y);
  };
  const double p_l = choose(n, l) * std::exp(lbeta(l + alpha, n - l + beta) - lbeta(alpha, beta));
  double count = choose(static_cast<double>(n_a), l) * choose(static_cast<double>(n_b), l);
  for (std::size_t k = 2; k <= L; ++k)
    count *= static_cast<double>(k);
  return p_l / count;
}

// exact link marginals: pi(C) proportional to prior(C) exp(sum of linked weights)
inline std::map<RecordPair, double>
posterior_marginals(std::size_t n_a, std::size_t n_b,
                    const std::map<RecordPair, double> &weights, double alpha, double beta) {
  std::set<RecordPair> allowed;
  for (const auto &kv : weights)
    allowed.insert(kv.first);
  std::map<RecordPair, double> mass;
  double z = 0;
  for_each_matching(n_a, n_b, &allowed, [&](const std::vector<RecordPair> &c) {
    double lw = std::log(prior_mass(c.size(), n_a, n_b, alpha, beta));
    for (const auto &l : c)
      lw += weights.at(l);
    const double p = std::exp(lw);
    z += p;
    for (const auto &l : c)
      mass[l] += p;
  });
  for (auto &kv : mass)
    kv.second /= z;
  return mass;
}

// best partial matching over entries with w > theta, exhaustively
inline double best_thresholded(const prl::SparseWeightMatrix &w, double theta) {
  std::set<RecordPair> allowed;
  std::map<RecordPair, double> val;
  for (const auto &e : w.entries)
    if (e.w > theta) {
      allowed.insert({e.a, e.b});
      val[{e.a, e.b}] = e.w - theta;
    }
  double best = 0;
  for_each_matching(w.n_a, w.n_b, &allowed, [&](const std::vector<RecordPair> &c) {
    double s = 0;
    for (const auto &l : c)
      s += val[l];
    best = std::max(best, s);
  });
  return best;
}

// O(n^3) Hungarian for a dense square cost matrix (minimization)
inline std::vector<int> hungarian(const std::vector<std::vector<double>> &cost) {
  const int n = static_cast<int>(cost.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1), v(n + 1);
  std::vector<int> p(n + 1), way(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      int i0 = p[j0], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j)
        if (!used[j]) {
          const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
      for (int j = 0; j <= n; ++j)
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j])
      row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  std::size_t find(std::size_t x) {
    while (parent[x] != x)
      x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t x, std::size_t y) { parent[find(x)] = find(y); }
};

// per-pair mixture EM over all of A x B; pairs outside `indexed` are fixed
// non-matches. Returns the log-likelihood trace.
inline std::vector<double> pairwise_em(const std::vector<std::vector<prl::Level>> &pair_levels,
                                       const std::vector<bool> &indexed,
                                       prl::ModelParams p, double pi, int iterations) {
  std::vector<double> trace;
  const std::size_t nf = p.m.size();
  std::size_t n_idx = 0;
  for (bool x : indexed)
    n_idx += x;
  for (int it = 0; it < iterations; ++it) {
    long double ll = 0;
    std::vector<std::vector<long double>> mc(nf), uc(nf);
    for (std::size_t f = 0; f < nf; ++f) {
      mc[f].assign(p.m[f].size(), 0);
      uc[f].assign(p.u[f].size(), 0);
    }
    long double g_sum = 0;
    for (std::size_t k = 0; k < pair_levels.size(); ++k) {
      long double lm = 0, lu = 0;
      for (std::size_t f = 0; f < nf; ++f)
        if (auto h = pair_levels[k][f]) {
          lm += std::log(static_cast<long double>(p.m[f][h - 1]));
          lu += std::log(static_cast<long double>(p.u[f][h - 1]));
        }
      long double g = 0;
      if (indexed[k]) {
        const long double a = std::log(static_cast<long double>(pi)) + lm;
        const long double b = std::log1p(static_cast<long double>(-pi)) + lu;
        const long double mx = std::max(a, b);
        const long double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
        ll += lse;
        g = std::exp(a - lse);
      } else {
        ll += lu;
      }
      g_sum += g;
      for (std::size_t f = 0; f < nf; ++f)
        if (auto h = pair_levels[k][f]) {
          mc[f][h - 1] += g;
          uc[f][h - 1] += 1 - g;
        }
    }
    trace.push_back(static_cast<double>(ll));
    pi = static_cast<double>(g_sum / n_idx);
    for (std::size_t f = 0; f < nf; ++f) {
      const long double sm = std::accumulate(mc[f].begin(), mc[f].end(), 0.0L);
      const long double su = std::accumulate(uc[f].begin(), uc[f].end(), 0.0L);
      for (std::size_t h = 0; h < mc[f].size(); ++h) {
        p.m[f][h] = static_cast<double>(mc[f][h] / sm);
        p.u[f][h] = static_cast<double>(uc[f][h] / su);
      }
    }
  }
  return trace;
}

// random sparse weight matrix with weights on a 0.01 grid
inline prl::SparseWeightMatrix random_sparse(std::mt19937_64 &rng, std::size_t max_side,
                                             double density, double lo, double hi) {
  std::uniform_int_distribution<std::size_t> side(1, max_side);
  std::uniform_real_distribution<double> unit(0, 1);
  std::uniform_int_distribution<int> grid(static_cast<int>(lo * 100), static_cast<int>(hi * 100));
  prl::SparseWeightMatrix w;
  w.n_a = side(rng);
  w.n_b = side(rng);
  for (std::uint32_t i = 0; i < w.n_a; ++i)
    for (std::uint32_t j = 0; j < w.n_b; ++j)
      if (unit(rng) < density)
        w.entries.push_back({i, j, grid(rng) / 100.0});
  return w;
}

} // namespace oracle
