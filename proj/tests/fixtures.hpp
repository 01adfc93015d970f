#pragma once

#include "prl/comparators.hpp"
#include "prl/records.hpp"
#include "prl/synthetic.hpp"

#include <algorithm>
#include <initializer_list>
#include <map>
#include <string>

namespace fixture {

using Row = std::map<prl::FieldRole, std::string>;

// canonical-schema table; roles not listed in a row are missing
inline prl::RecordTable table(prl::FileLabel label, std::initializer_list<Row> rows) {
  prl::RecordTable t;
  t.label = label;
  t.schema = prl::FieldSchema::canonical();
  int n = 0;
  for (const auto &row : rows) {
    prl::Record r;
    r.id = (label == prl::FileLabel::A ? "a" : "b") + std::to_string(++n);
    r.values.assign(t.schema.fields.size(), std::nullopt);
    for (const auto &[role, v] : row)
      r.values[*t.schema.index_of(role)] = v;
    t.records.push_back(std::move(r));
  }
  return t;
}

inline prl::SyntheticFiles small_files(std::size_t n_a, std::size_t n_b, std::size_t overlap,
                                       std::uint64_t seed) {
  auto cfg = prl::SyntheticConfig::moderate(n_a, n_b, overlap);
  cfg.first_name_vocab = 30;
  cfg.surname_vocab = 40;
  cfg.occupation_vocab = 12;
  cfg.street_name_vocab = 25;
  return prl::generate_synthetic_files(cfg, seed);
}

} // namespace fixture

#include "prl/model.hpp"

#include <random>

namespace fixture {

inline std::vector<double> random_simplex(std::size_t k, std::mt19937_64 &rng, double shape = 1.0) {
  std::gamma_distribution<double> g(shape, 1.0);
  std::vector<double> v(k);
  double s = 0;
  for (auto &x : v)
    s += x = g(rng) + 1e-3;
  for (auto &x : v)
    x /= s;
  return v;
}

inline prl::ModelParams random_params(const std::vector<int> &levels, std::mt19937_64 &rng) {
  prl::ModelParams p;
  for (int k : levels) {
    p.m.push_back(random_simplex(static_cast<std::size_t>(k), rng));
    p.u.push_back(random_simplex(static_cast<std::size_t>(k), rng));
  }
  return p;
}

inline std::vector<int> levels_of(const std::vector<prl::ComparatorSpec> &specs) {
  std::vector<int> out;
  for (const auto &s : specs)
    out.push_back(s.n_levels);
  return out;
}

// random one-to-one matching drawn from the indexed pairs
inline prl::BipartiteMatching random_matching(const prl::PairIndex &idx, std::mt19937_64 &rng,
                                              double keep = 0.5) {
  prl::BipartiteMatching m(idx.n_a, idx.n_b);
  std::vector<std::size_t> order(idx.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::bernoulli_distribution coin(keep);
  for (auto k : order) {
    const auto &p = idx.pairs[k];
    if (m.partner_of_a(p.a) < 0 && m.partner_of_b(p.b) < 0 && coin(rng))
      m.link(p.a, p.b);
  }
  return m;
}

} // namespace fixture

#include "prl/blocking.hpp"

namespace fixture {

// One comparison field with `k` levels, a random level per pair, fixed
// random m/u, and every pair in a single block.
struct ToyProblem {
  prl::PatternTable pt;
  prl::PairIndex idx;
  prl::PosthocBlockSet blocks;
  prl::ModelParams params;
  prl::PriorSpec prior;
  std::map<prl::RecordPair, double> weights;
};

inline ToyProblem toy_problem(std::size_t n_a, std::size_t n_b, std::mt19937_64 &rng,
                              double alpha = 1.0, double beta = 1.0, int k = 6) {
  ToyProblem t;
  t.idx = prl::full_index(n_a, n_b);
  std::uniform_int_distribution<int> lvl(1, k);
  std::vector<prl::Level> pair_level(t.idx.size());
  for (auto &l : pair_level)
    l = static_cast<prl::Level>(lvl(rng));
  t.pt.fields = {"x"};
  t.pt.n_levels = {k};
  std::map<prl::Level, std::uint32_t> id;
  for (auto l : pair_level)
    id[l] = 0;
  for (auto &[l, i] : id) {
    i = static_cast<std::uint32_t>(t.pt.patterns.size());
    t.pt.patterns.push_back({l});
    t.pt.counts.push_back(0);
  }
  for (auto l : pair_level) {
    t.pt.pair_pattern.push_back(id[l]);
    ++t.pt.counts[id[l]];
  }
  t.params.m = {random_simplex(static_cast<std::size_t>(k), rng)};
  t.params.u = {random_simplex(static_cast<std::size_t>(k), rng)};
  t.prior.alpha = alpha;
  t.prior.beta = beta;
  t.prior.alpha_m = {std::vector<double>(static_cast<std::size_t>(k), 1.0)};
  t.prior.alpha_u = t.prior.alpha_m;
  t.blocks.n_a = n_a;
  t.blocks.n_b = n_b;
  t.blocks.max_pairs = t.idx.size();
  prl::PosthocBlock b;
  for (std::uint32_t i = 0; i < n_a; ++i)
    b.a_nodes.push_back(i);
  for (std::uint32_t j = 0; j < n_b; ++j)
    b.b_nodes.push_back(j);
  for (std::size_t p = 0; p < t.idx.size(); ++p) {
    const auto &rp = t.idx.pairs[p];
    const std::vector<prl::Level> g{pair_level[p]};
    const double w = prl::pair_weight(g, t.params);
    t.weights[rp] = w;
    b.pairs.push_back({rp.a, rp.b, w});
  }
  t.blocks.candidate_pairs = t.idx.size();
  t.blocks.blocks.push_back(std::move(b));
  return t;
}

} // namespace fixture
