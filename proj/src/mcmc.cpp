#include "prl/mcmc.hpp"

#include "prl/parallel.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace prl {

std::string to_string(KernelKind k) {
  switch (k) {
  case KernelKind::gibbs:
    return "gibbs";
  case KernelKind::locally_balanced:
    return "locally_balanced";
  case KernelKind::add_drop_swap:
    return "add_drop_swap";
  }
  return "?";
}

KernelKind parse_kernel_kind(const std::string &s) {
  for (auto k : {KernelKind::gibbs, KernelKind::locally_balanced,
                 KernelKind::add_drop_swap})
    if (s == to_string(k))
      return k;
  throw std::invalid_argument("unknown kernel '" + s + "'");
}

void KernelPolicy::validate() const {
  if (gibbs_max_matchings < 1 || lb_max_pairs < 1)
    throw std::invalid_argument("kernel policy thresholds must be positive");
}

// ---------------------------------------------------------------- blocks

SubBlock::SubBlock(std::vector<RecordPair> pairs, std::vector<std::uint32_t> patterns) {
  if (pairs.size() != patterns.size())
    throw std::invalid_argument("block pairs and patterns differ in length");
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return pairs[x] < pairs[y]; });
  for (const auto &p : pairs) {
    a_global_.push_back(p.a);
    b_global_.push_back(p.b);
  }
  for (auto *v : {&a_global_, &b_global_}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  a_pairs_.resize(a_global_.size());
  for (std::size_t i : order) {
    const auto la = static_cast<std::uint32_t>(
        std::lower_bound(a_global_.begin(), a_global_.end(), pairs[i].a) -
        a_global_.begin());
    const auto lb = static_cast<std::uint32_t>(
        std::lower_bound(b_global_.begin(), b_global_.end(), pairs[i].b) -
        b_global_.begin());
    if (!pair_a_.empty() && pair_a_.back() == la && pair_b_.back() == lb)
      throw std::invalid_argument("duplicate pair in block");
    a_pairs_[la].push_back(static_cast<std::uint32_t>(pair_a_.size()));
    pair_a_.push_back(la);
    pair_b_.push_back(lb);
    pattern_.push_back(patterns[i]);
  }
}

SubBlock SubBlock::from_block(const PosthocBlock &block, const PairIndex &index,
                              const PatternTable &patterns) {
  std::vector<RecordPair> pairs;
  std::vector<std::uint32_t> pats;
  for (const auto &e : block.pairs) {
    auto pos = index.find(e.a, e.b);
    if (!pos)
      throw std::invalid_argument("block pair (" + std::to_string(e.a) + "," +
                                  std::to_string(e.b) + ") is not indexed");
    pairs.push_back({e.a, e.b});
    pats.push_back(patterns.pair_pattern[*pos]);
  }
  return SubBlock(std::move(pairs), std::move(pats));
}

std::optional<std::uint32_t> SubBlock::find(std::uint32_t la, std::uint32_t lb) const {
  const auto &list = a_pairs_[la];
  auto it = std::lower_bound(list.begin(), list.end(), lb,
                             [&](std::uint32_t k, std::uint32_t b) { return pair_b_[k] < b; });
  if (it != list.end() && pair_b_[*it] == lb)
    return *it;
  return std::nullopt;
}

std::optional<std::uint32_t> SubBlock::find_global(std::uint32_t a,
                                                   std::uint32_t b) const {
  auto ia = std::lower_bound(a_global_.begin(), a_global_.end(), a);
  auto ib = std::lower_bound(b_global_.begin(), b_global_.end(), b);
  if (ia == a_global_.end() || *ia != a || ib == b_global_.end() || *ib != b)
    return std::nullopt;
  return find(static_cast<std::uint32_t>(ia - a_global_.begin()),
              static_cast<std::uint32_t>(ib - b_global_.begin()));
}

namespace {

template <class Leaf>
bool walk_matchings(const SubBlock &block, std::uint32_t la, std::vector<char> &used,
                    std::vector<std::uint32_t> &chosen, Leaf &leaf) {
  if (la == block.n_a())
    return leaf(chosen);
  if (!walk_matchings(block, la + 1, used, chosen, leaf))
    return false;
  for (std::uint32_t k : block.pairs_of_a(la)) {
    const std::uint32_t lb = block.pair_b(k);
    if (used[lb])
      continue;
    used[lb] = 1;
    chosen.push_back(k);
    const bool go_on = walk_matchings(block, la + 1, used, chosen, leaf);
    chosen.pop_back();
    used[lb] = 0;
    if (!go_on)
      return false;
  }
  return true;
}

} // namespace

std::size_t SubBlock::count_matchings(std::size_t cutoff) const {
  std::size_t count = 0;
  std::vector<char> used(n_b(), 0);
  std::vector<std::uint32_t> chosen;
  auto leaf = [&](const std::vector<std::uint32_t> &) { return ++count <= cutoff; };
  walk_matchings(*this, 0, used, chosen, leaf);
  return count;
}

std::vector<std::vector<std::uint32_t>>
SubBlock::enumerate_matchings(std::size_t limit) const {
  std::vector<std::vector<std::uint32_t>> out;
  std::vector<char> used(n_b(), 0);
  std::vector<std::uint32_t> chosen;
  bool overflow = false;
  auto leaf = [&](const std::vector<std::uint32_t> &c) {
    if (out.size() >= limit) {
      overflow = true;
      return false;
    }
    auto sorted = c;
    std::sort(sorted.begin(), sorted.end());
    out.push_back(std::move(sorted));
    return true;
  };
  walk_matchings(*this, 0, used, chosen, leaf);
  if (overflow)
    throw std::length_error("block has more than " + std::to_string(limit) +
                            " matchings");
  return out;
}

SubMatching::SubMatching(const SubBlock &block)
    : a_pair(block.n_a(), -1), b_pair(block.n_b(), -1) {}

SubMatching SubMatching::from_pairs(const SubBlock &block,
                                    std::span<const std::uint32_t> pairs) {
  SubMatching s(block);
  for (std::uint32_t k : pairs)
    s.link(block, k);
  return s;
}

void SubMatching::link(const SubBlock &block, std::uint32_t pair) {
  const auto la = block.pair_a(pair), lb = block.pair_b(pair);
  if (a_pair[la] >= 0 || b_pair[lb] >= 0)
    throw std::logic_error("block link breaks one-to-one");
  a_pair[la] = b_pair[lb] = static_cast<std::int32_t>(pair);
  ++links;
}

void SubMatching::unlink(const SubBlock &block, std::uint32_t pair) {
  const auto la = block.pair_a(pair), lb = block.pair_b(pair);
  if (a_pair[la] != static_cast<std::int32_t>(pair))
    throw std::logic_error("block unlink of a pair that is not linked");
  a_pair[la] = b_pair[lb] = -1;
  --links;
}

std::vector<std::uint32_t> SubMatching::key() const {
  std::vector<std::uint32_t> out;
  out.reserve(links);
  for (std::int32_t k : a_pair)
    if (k >= 0)
      out.push_back(static_cast<std::uint32_t>(k));
  std::sort(out.begin(), out.end());
  return out;
}

// ----------------------------------------------------------------- moves

Move move_for_pair(const SubBlock &block, const SubMatching &state, std::uint32_t k) {
  Move mv;
  const auto i = block.pair_a(k), j = block.pair_b(k);
  const std::int32_t ki = state.a_pair[i];
  const std::int32_t kj = state.b_pair[j];
  if (ki == static_cast<std::int32_t>(k)) {
    mv.type = Move::Type::drop;
    mv.removed[mv.n_removed++] = k;
  } else if (ki < 0 && kj < 0) {
    mv.type = Move::Type::add;
    mv.added[mv.n_added++] = k;
  } else if (kj < 0 || ki < 0) {
    mv.type = Move::Type::move;
    mv.removed[mv.n_removed++] = static_cast<std::uint32_t>(ki >= 0 ? ki : kj);
    mv.added[mv.n_added++] = k;
  } else {
    const auto i2 = block.pair_a(static_cast<std::uint32_t>(kj));
    const auto j2 = block.pair_b(static_cast<std::uint32_t>(ki));
    const auto other = block.find(i2, j2);
    if (!other)
      return mv;
    mv.type = Move::Type::swap;
    mv.removed[mv.n_removed++] = static_cast<std::uint32_t>(ki);
    mv.removed[mv.n_removed++] = static_cast<std::uint32_t>(kj);
    mv.added[mv.n_added++] = k;
    mv.added[mv.n_added++] = *other;
  }
  return mv;
}

void apply_move(const SubBlock &block, SubMatching &state, const Move &move) {
  for (int r = 0; r < move.n_removed; ++r)
    state.unlink(block, move.removed[r]);
  for (int a = 0; a < move.n_added; ++a)
    state.link(block, move.added[a]);
}

double move_log_ratio(const Move &move, std::span<const double> pair_weights,
                      const BlockPrior &prior, std::size_t block_links) {
  double d = 0.0;
  for (int a = 0; a < move.n_added; ++a)
    d += pair_weights[move.added[a]];
  for (int r = 0; r < move.n_removed; ++r)
    d -= pair_weights[move.removed[r]];
  if (move.link_change() != 0) {
    const auto after = static_cast<std::size_t>(
        static_cast<long>(block_links) + move.link_change());
    d += prior(after) - prior(block_links);
  }
  return d;
}

std::vector<Move> neighborhood(const SubBlock &block, const SubMatching &state) {
  std::vector<Move> out;
  out.reserve(block.n_pairs());
  for (std::uint32_t k = 0; k < block.n_pairs(); ++k) {
    Move mv = move_for_pair(block, state, k);
    if (mv.type != Move::Type::none)
      out.push_back(mv);
  }
  return out;
}

double block_log_target(std::span<const std::uint32_t> pairs,
                        std::span<const double> pair_weights,
                        const BlockPrior &prior) {
  double t = prior(pairs.size());
  for (std::uint32_t k : pairs)
    t += pair_weights[k];
  return t;
}

// --------------------------------------------------------------- kernels

namespace {

double log_sum_exp(std::span<const double> v) {
  double top = -std::numeric_limits<double>::infinity();
  for (double x : v)
    top = std::max(top, x);
  if (!std::isfinite(top))
    return top;
  double s = 0.0;
  for (double x : v)
    s += std::exp(x - top);
  return top + std::log(s);
}

std::size_t draw_categorical(std::span<const double> log_w, double log_total,
                             Rng &rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < log_w.size(); ++i) {
    acc += std::exp(log_w[i] - log_total);
    if (u < acc)
      return i;
  }
  // Rounding left u above the final cumulative sum; take the last state
  // with positive mass.
  for (std::size_t i = log_w.size(); i-- > 0;)
    if (std::isfinite(log_w[i]))
      return i;
  return log_w.size() - 1;
}

bool accept(double log_ratio, Rng &rng) {
  if (log_ratio >= 0.0)
    return true;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  return std::log(unif(rng)) < log_ratio;
}

// Half log-ratios of every move out of `state`; logsumexp is log Z.
std::vector<double> balanced_scores(const std::vector<Move> &moves,
                                    std::span<const double> pair_weights,
                                    const BlockPrior &prior, std::size_t links) {
  std::vector<double> s(moves.size());
  for (std::size_t i = 0; i < moves.size(); ++i)
    s[i] = 0.5 * move_log_ratio(moves[i], pair_weights, prior, links);
  return s;
}

} // namespace

bool gibbs_update(const SubBlock &block,
                  const std::vector<std::vector<std::uint32_t>> &matchings,
                  std::span<const double> pair_weights, const BlockPrior &prior,
                  SubMatching &state, Rng &rng) {
  std::vector<double> lw(matchings.size());
  for (std::size_t i = 0; i < matchings.size(); ++i)
    lw[i] = block_log_target(matchings[i], pair_weights, prior);
  const std::size_t pick = draw_categorical(lw, log_sum_exp(lw), rng);
  const auto before = state.key();
  if (before == matchings[pick])
    return false;
  state = SubMatching::from_pairs(block, matchings[pick]);
  return true;
}

bool add_drop_swap_update(const SubBlock &block, std::span<const double> pair_weights,
                          const BlockPrior &prior, SubMatching &state, Rng &rng) {
  if (block.n_pairs() == 0)
    return false;
  std::uniform_int_distribution<std::uint32_t> pick(
      0, static_cast<std::uint32_t>(block.n_pairs() - 1));
  const Move mv = move_for_pair(block, state, pick(rng));
  if (mv.type == Move::Type::none)
    return false;
  if (!accept(move_log_ratio(mv, pair_weights, prior, state.links), rng))
    return false;
  apply_move(block, state, mv);
  return true;
}

bool locally_balanced_update(const SubBlock &block,
                             std::span<const double> pair_weights,
                             const BlockPrior &prior, SubMatching &state, Rng &rng) {
  const std::vector<Move> moves = neighborhood(block, state);
  if (moves.empty())
    return false;
  const std::vector<double> score =
      balanced_scores(moves, pair_weights, prior, state.links);
  const double log_z = log_sum_exp(score);
  const Move &mv = moves[draw_categorical(score, log_z, rng)];
  SubMatching next = state;
  apply_move(block, next, mv);
  const double log_z_next =
      log_sum_exp(balanced_scores(neighborhood(block, next), pair_weights, prior,
                                  next.links));
  if (!accept(log_z - log_z_next, rng))
    return false;
  state = std::move(next);
  return true;
}

std::map<std::vector<std::uint32_t>, double>
transition_row(KernelKind kind, const SubBlock &block,
               std::span<const double> pair_weights, const BlockPrior &prior,
               const SubMatching &state) {
  std::map<std::vector<std::uint32_t>, double> row;
  const auto self = state.key();
  switch (kind) {
  case KernelKind::gibbs: {
    const auto all = block.enumerate_matchings(std::size_t{1} << 20);
    std::vector<double> lw(all.size());
    for (std::size_t i = 0; i < all.size(); ++i)
      lw[i] = block_log_target(all[i], pair_weights, prior);
    const double lz = log_sum_exp(lw);
    for (std::size_t i = 0; i < all.size(); ++i)
      row[all[i]] += std::exp(lw[i] - lz);
    break;
  }
  case KernelKind::add_drop_swap: {
    const double q = 1.0 / static_cast<double>(block.n_pairs());
    for (std::uint32_t k = 0; k < block.n_pairs(); ++k) {
      const Move mv = move_for_pair(block, state, k);
      if (mv.type == Move::Type::none) {
        row[self] += q;
        continue;
      }
      const double a =
          std::min(1.0, std::exp(move_log_ratio(mv, pair_weights, prior, state.links)));
      SubMatching next = state;
      apply_move(block, next, mv);
      row[next.key()] += q * a;
      row[self] += q * (1.0 - a);
    }
    break;
  }
  case KernelKind::locally_balanced: {
    const auto moves = neighborhood(block, state);
    const auto score = balanced_scores(moves, pair_weights, prior, state.links);
    const double lz = log_sum_exp(score);
    for (std::size_t i = 0; i < moves.size(); ++i) {
      const double q = std::exp(score[i] - lz);
      SubMatching next = state;
      apply_move(block, next, moves[i]);
      const double lz_next = log_sum_exp(balanced_scores(
          neighborhood(block, next), pair_weights, prior, next.links));
      const double a = std::min(1.0, std::exp(lz - lz_next));
      row[next.key()] += q * a;
      row[self] += q * (1.0 - a);
    }
    break;
  }
  }
  return row;
}

// ------------------------------------------------------------ parameters

ModelParams update_params(const LevelCounts &matched, const LevelCounts &indexed,
                          const LevelCounts &excluded, const PriorSpec &prior,
                          Rng &rng) {
  ModelParams p;
  auto dirichlet = [&rng](const std::vector<double> &shape) {
    std::vector<double> x(shape.size());
    double sum = 0.0;
    for (std::size_t h = 0; h < shape.size(); ++h) {
      std::gamma_distribution<double> g(shape[h], 1.0);
      x[h] = std::max(g(rng), 1e-300);
      sum += x[h];
    }
    for (double &v : x)
      v /= sum;
    return x;
  };
  for (std::size_t f = 0; f < matched.size(); ++f) {
    std::vector<double> am(prior.alpha_m[f]), au(prior.alpha_u[f]);
    for (std::size_t h = 0; h < am.size(); ++h) {
      am[h] += static_cast<double>(matched[f][h + 1]);
      au[h] += static_cast<double>(indexed[f][h + 1] - matched[f][h + 1] +
                                   excluded[f][h + 1]);
    }
    p.m.push_back(dirichlet(am));
    p.u.push_back(dirichlet(au));
  }
  return p;
}

double log_posterior(const LevelCounts &matched, const LevelCounts &indexed,
                     const LevelCounts &excluded, std::size_t links,
                     std::size_t n_a, std::size_t n_b, const ModelParams &params,
                     const PriorSpec &prior) {
  double lp = log_likelihood_from_counts(matched, indexed, &excluded, params) +
              log_prior_matching(links, n_a, n_b, prior.alpha, prior.beta);
  for (std::size_t f = 0; f < params.m.size(); ++f)
    lp += log_dirichlet_density(params.m[f], prior.alpha_m[f]) +
          log_dirichlet_density(params.u[f], prior.alpha_u[f]);
  return lp;
}

// --------------------------------------------------------------- sampler

namespace {

struct BlockRun {
  SubBlock block;
  KernelKind kind = KernelKind::add_drop_swap;
  std::vector<std::vector<std::uint32_t>> matchings; // gibbs only
  SubMatching state;
  std::vector<double> weights;
};

KernelKind choose_kernel(const SubBlock &block, const KernelPolicy &policy) {
  if (policy.force)
    return *policy.force;
  if (block.count_matchings(policy.gibbs_max_matchings) <= policy.gibbs_max_matchings)
    return KernelKind::gibbs;
  if (block.n_pairs() <= policy.lb_max_pairs)
    return KernelKind::locally_balanced;
  return KernelKind::add_drop_swap;
}

bool run_kernel(BlockRun &run, const BlockPrior &prior, Rng &rng) {
  switch (run.kind) {
  case KernelKind::gibbs:
    return gibbs_update(run.block, run.matchings, run.weights, prior, run.state, rng);
  case KernelKind::locally_balanced:
    return locally_balanced_update(run.block, run.weights, prior, run.state, rng);
  case KernelKind::add_drop_swap:
    return add_drop_swap_update(run.block, run.weights, prior, run.state, rng);
  }
  return false;
}

struct Delta {
  std::vector<RecordPair> added, removed;
};

void diff_links(const BlockRun &run, const std::vector<std::uint32_t> &before,
                const std::vector<std::uint32_t> &after, Delta &out) {
  std::vector<std::uint32_t> gone, came;
  std::set_difference(before.begin(), before.end(), after.begin(), after.end(),
                      std::back_inserter(gone));
  std::set_difference(after.begin(), after.end(), before.begin(), before.end(),
                      std::back_inserter(came));
  const SubBlock &b = run.block;
  for (auto k : gone)
    out.removed.push_back({b.global_a(b.pair_a(k)), b.global_b(b.pair_b(k))});
  for (auto k : came)
    out.added.push_back({b.global_a(b.pair_a(k)), b.global_b(b.pair_b(k))});
}

void apply_delta(const Delta &d, const PatternTable &patterns, const PairIndex &index,
                 BipartiteMatching &matching, LevelCounts &matched) {
  auto bump = [&](const RecordPair &l, int sign) {
    const auto &g = patterns.patterns[patterns.pair_pattern[*index.find(l.a, l.b)]];
    for (std::size_t f = 0; f < g.size(); ++f)
      matched[f][g[f]] = static_cast<std::uint64_t>(
          static_cast<long long>(matched[f][g[f]]) + sign);
  };
  for (const auto &l : d.removed) {
    matching.unlink(l.a, l.b);
    bump(l, -1);
  }
  for (const auto &l : d.added) {
    matching.link(l.a, l.b);
    bump(l, +1);
  }
}

} // namespace

McmcResult run_restricted_mcmc(const PosthocBlockSet &blocks,
                               const PatternTable &patterns, const PairIndex &index,
                               const UCorrectionTallies *tallies,
                               const PriorSpec &prior, const ModelParams &init,
                               const McmcOptions &options, TraceWriter *trace,
                               const McmcObserver &observer,
                               const BipartiteMatching *start) {
  options.policy.validate();
  prior.validate(patterns.n_levels);
  init.validate(patterns.n_levels);
  const std::size_t n_a = index.n_a, n_b = index.n_b;

  std::vector<std::int64_t> a_owner(n_a, -1), b_owner(n_b, -1);
  std::vector<BlockRun> runs(blocks.blocks.size());
  for (std::size_t i = 0; i < blocks.blocks.size(); ++i) {
    const auto &blk = blocks.blocks[i];
    for (auto a : blk.a_nodes) {
      if (a_owner[a] >= 0)
        throw std::invalid_argument("record a" + std::to_string(a) +
                                    " lies in two blocks");
      a_owner[a] = static_cast<std::int64_t>(i);
    }
    for (auto b : blk.b_nodes) {
      if (b_owner[b] >= 0)
        throw std::invalid_argument("record b" + std::to_string(b) +
                                    " lies in two blocks");
      b_owner[b] = static_cast<std::int64_t>(i);
    }
    runs[i].block = SubBlock::from_block(blk, index, patterns);
  }
  parallel_chunks(runs.size(), options.threads,
                  [&](std::size_t lo, std::size_t hi, unsigned) {
    for (std::size_t i = lo; i < hi; ++i) {
      auto &run = runs[i];
      run.kind = choose_kernel(run.block, options.policy);
      if (run.kind == KernelKind::gibbs)
        run.matchings = run.block.enumerate_matchings(options.policy.gibbs_max_matchings);
      run.state = SubMatching(run.block);
      run.weights.resize(run.block.n_pairs());
    }
  });

  SamplerState st;
  st.matching = BipartiteMatching(n_a, n_b);
  if (start) {
    for (const auto &l : start->links()) {
      const std::int64_t owner = a_owner[l.a];
      std::optional<std::uint32_t> k;
      if (owner >= 0)
        k = runs[static_cast<std::size_t>(owner)].block.find_global(l.a, l.b);
      if (!k)
        throw std::invalid_argument("starting link lies outside the blocks");
      runs[static_cast<std::size_t>(owner)].state.link(
          runs[static_cast<std::size_t>(owner)].block, *k);
      st.matching.link(l.a, l.b);
    }
  }
  st.params = init;
  st.matched = matched_level_counts(patterns, index, st.matching);
  const LevelCounts indexed = patterns.level_marginals();
  const LevelCounts excluded = tallies && options.use_u_correction
                                   ? tallies->excluded()
                                   : zero_counts(patterns.n_levels);
  auto posterior = [&](const LevelCounts &matched, std::size_t links) {
    return log_posterior(matched, indexed, excluded, links, n_a, n_b, st.params, prior);
  };
  st.log_posterior = posterior(st.matched, st.matching.size());

  McmcResult res;
  for (const auto &r : runs)
    res.block_kernels.push_back(r.kind);
  res.log_posterior.push_back(st.log_posterior);
  res.links.push_back(st.matching.size());
  if (trace) {
    const auto links = st.matching.links();
    trace->iteration(0, st.log_posterior, links.size(), links, {});
    trace->params(st.params);
  }
  if (observer)
    observer(st);

  Rng rng(options.seed);
  BlockPrior bp{n_a, n_b, prior.alpha, prior.beta, 0};
  for (std::size_t iter = 1; iter <= options.iterations; ++iter) {
    const std::vector<double> pw = pattern_weights(patterns, st.params);
    Delta delta;
    if (!options.parallel) {
      for (auto &run : runs) {
        for (std::size_t k = 0; k < run.weights.size(); ++k)
          run.weights[k] = pw[run.block.pattern(k)];
        const auto before = run.state.key();
        BlockPrior p = bp;
        p.other_links = st.matching.size() - run.state.links;
        ++res.proposals;
        if (!run_kernel(run, p, rng))
          continue;
        ++res.accepted;
        Delta d;
        diff_links(run, before, run.state.key(), d);
        apply_delta(d, patterns, index, st.matching, st.matched);
        delta.added.insert(delta.added.end(), d.added.begin(), d.added.end());
        delta.removed.insert(delta.removed.end(), d.removed.begin(), d.removed.end());
      }
    } else {
      const std::size_t links0 = st.matching.size();
      std::vector<Delta> deltas(runs.size());
      std::vector<char> changed(runs.size(), 0);
      parallel_chunks(runs.size(), options.threads,
                      [&](std::size_t lo, std::size_t hi, unsigned) {
        for (std::size_t i = lo; i < hi; ++i) {
          auto &run = runs[i];
          for (std::size_t k = 0; k < run.weights.size(); ++k)
            run.weights[k] = pw[run.block.pattern(k)];
          std::seed_seq seq{static_cast<std::uint32_t>(options.seed),
                            static_cast<std::uint32_t>(options.seed >> 32),
                            static_cast<std::uint32_t>(iter),
                            static_cast<std::uint32_t>(i)};
          Rng local(seq);
          const auto before = run.state.key();
          BlockPrior p = bp;
          p.other_links = links0 - run.state.links;
          if (run_kernel(run, p, local)) {
            changed[i] = 1;
            diff_links(run, before, run.state.key(), deltas[i]);
          }
        }
      });
      res.proposals += runs.size();
      for (std::size_t i = 0; i < runs.size(); ++i) {
        if (!changed[i])
          continue;
        ++res.accepted;
        apply_delta(deltas[i], patterns, index, st.matching, st.matched);
        delta.added.insert(delta.added.end(), deltas[i].added.begin(),
                           deltas[i].added.end());
        delta.removed.insert(delta.removed.end(), deltas[i].removed.begin(),
                             deltas[i].removed.end());
      }
    }

    if (options.sample_params)
      st.params = update_params(st.matched, indexed, excluded, prior, rng);
    st.iteration = iter;
    st.log_posterior = posterior(st.matched, st.matching.size());
    res.log_posterior.push_back(st.log_posterior);
    res.links.push_back(st.matching.size());

    if (options.check_every > 0 && iter % options.check_every == 0) {
      const LevelCounts recount = matched_level_counts(patterns, index, st.matching);
      if (recount != st.matched)
        throw std::logic_error("matched-level counts drifted from a recount");
      const double fresh = posterior(recount, st.matching.links().size());
      if (std::abs(fresh - st.log_posterior) > 1e-6)
        throw std::logic_error("log posterior drifted from a recomputation");
    }
    if (trace) {
      std::sort(delta.added.begin(), delta.added.end());
      std::sort(delta.removed.begin(), delta.removed.end());
      trace->iteration(iter, st.log_posterior, st.matching.size(), delta.added,
                       delta.removed);
      if (options.params_every > 0 && iter % options.params_every == 0)
        trace->params(st.params);
    }
    if (observer)
      observer(st);
  }
  res.final_state = std::move(st);
  return res;
}

} // namespace prl
