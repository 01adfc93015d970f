#include "fixtures.hpp"
#include "oracles.hpp"
#include "prl/mcmc.hpp"

#include "prl/csv.hpp"

#include <doctest.h>

#include <fstream>

#include <sstream>

using namespace prl;

namespace {

SubBlock random_block(std::mt19937_64 &rng, std::size_t max_side, double density,
                      std::vector<double> &weights) {
  std::uniform_int_distribution<std::size_t> side(1, max_side);
  std::uniform_real_distribution<double> u(0, 1), w(-3, 3);
  const auto na = side(rng), nb = side(rng);
  std::vector<RecordPair> pairs;
  std::vector<std::uint32_t> pats;
  for (std::uint32_t i = 0; i < na; ++i)
    for (std::uint32_t j = 0; j < nb; ++j)
      if (u(rng) < density || pairs.empty()) {
        pairs.push_back({10 + 2 * i, 5 + 3 * j});
        pats.push_back(static_cast<std::uint32_t>(pats.size()));
      }
  weights.clear();
  for (std::size_t k = 0; k < pairs.size(); ++k)
    weights.push_back(w(rng));
  return SubBlock(pairs, pats);
}

double row_sum(const std::map<std::vector<std::uint32_t>, double> &row) {
  double s = 0;
  for (const auto &kv : row)
    s += kv.second;
  return s;
}

} // namespace

TEST_CASE("sub-block enumeration and counting") {
  std::vector<RecordPair> pairs{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  SubBlock b(pairs, {0, 1, 2, 3});
  CHECK(b.n_a() == 2);
  CHECK(b.n_pairs() == 4);
  CHECK(b.count_matchings(100) == 7);
  CHECK(b.count_matchings(3) == 4);
  CHECK(b.enumerate_matchings(7).size() == 7);
  CHECK_THROWS_AS(b.enumerate_matchings(6), std::length_error);
  CHECK(b.find_global(1, 0) == 2u);
  CHECK_FALSE(b.find_global(2, 0).has_value());
}

TEST_CASE("pair-indexed moves") {
  std::vector<RecordPair> pairs{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  SubBlock b(pairs, {0, 1, 2, 3});
  std::vector<std::uint32_t> one{0};
  auto s = SubMatching::from_pairs(b, one);
  CHECK(move_for_pair(b, s, 0).type == Move::Type::drop);
  CHECK(move_for_pair(b, s, 3).type == Move::Type::add);
  auto mv = move_for_pair(b, s, 1);
  CHECK(mv.type == Move::Type::move);
  CHECK(mv.removed[0] == 0);
  CHECK(mv.added[0] == 1);
  std::vector<std::uint32_t> cross{1, 2};
  auto x = SubMatching::from_pairs(b, cross);
  auto sw = move_for_pair(b, x, 0);
  CHECK(sw.type == Move::Type::swap);
  CHECK(sw.link_change() == 0);
  apply_move(b, x, sw);
  CHECK(x.key() == std::vector<std::uint32_t>{0, 3});
  // swap without the fourth pair admitted is a null move
  std::vector<RecordPair> three{{0, 0}, {0, 1}, {1, 0}};
  SubBlock t(three, {0, 1, 2});
  std::vector<std::uint32_t> tc{1, 2};
  auto ts = SubMatching::from_pairs(t, tc);
  CHECK(move_for_pair(t, ts, 0).type == Move::Type::none);
  CHECK(neighborhood(b, SubMatching::from_pairs(b, cross)).size() == 4);
}

TEST_CASE("one-pair block link probability is logistic") {
  SubBlock b({{0, 0}}, {0});
  std::vector<double> w{1.3};
  BlockPrior prior{5, 7, 1.0, 1.0, 2};
  SubMatching empty(b);
  auto row = transition_row(KernelKind::gibbs, b, w, prior, empty);
  const double z = 1.3 + prior(1) - prior(0);
  CHECK(row[{0}] == doctest::Approx(1 / (1 + std::exp(-z))));
}

TEST_CASE("every kernel satisfies detailed balance") {
  std::mt19937_64 rng(99);
  std::vector<double> w;
  int tested = 0;
  for (int rep = 0; rep < 60; ++rep) {
    auto b = random_block(rng, 4, 0.6, w);
    if (b.count_matchings(200) > 200)
      continue;
    ++tested;
    BlockPrior prior{9, 11, rep % 2 ? 2.0 : 1.0, rep % 2 ? 5.0 : 1.0,
                     static_cast<std::size_t>(rep % 3)};
    auto all = b.enumerate_matchings(200);
    std::map<std::vector<std::uint32_t>, double> logpi;
    for (const auto &m : all)
      logpi[m] = block_log_target(m, w, prior);
    double mx = -1e300;
    for (const auto &kv : logpi)
      mx = std::max(mx, kv.second);
    double z = 0;
    for (const auto &kv : logpi)
      z += std::exp(kv.second - mx);
    auto pi = [&](const std::vector<std::uint32_t> &m) { return std::exp(logpi[m] - mx) / z; };
    for (auto kind : {KernelKind::gibbs, KernelKind::add_drop_swap, KernelKind::locally_balanced}) {
      std::map<std::vector<std::uint32_t>, std::map<std::vector<std::uint32_t>, double>> P;
      for (const auto &m : all) {
        P[m] = transition_row(kind, b, w, prior, SubMatching::from_pairs(b, m));
        CHECK(row_sum(P[m]) == doctest::Approx(1.0).epsilon(1e-12));
      }
      double worst = 0;
      for (const auto &i : all)
        for (const auto &[j, pij] : P[i]) {
          const double pji = P[j].count(i) ? P[j][i] : 0.0;
          worst = std::max(worst, std::abs(pi(i) * pij - pi(j) * pji));
        }
      CHECK(worst < 1e-10);
    }
  }
  CHECK(tested > 20);
}

TEST_CASE("log posterior differences are pair weights plus prior change") {
  std::mt19937_64 rng(4);
  auto t = fixture::toy_problem(3, 3, rng);
  BipartiteMatching c(3, 3);
  auto matched0 = matched_level_counts(t.pt, t.idx, c);
  auto zeros = zero_counts(t.pt.n_levels);
  const double lp0 = log_posterior(matched0, t.pt.level_marginals(), zeros, 0, 3, 3,
                                   t.params, t.prior);
  c.link(1, 2);
  auto matched1 = matched_level_counts(t.pt, t.idx, c);
  const double lp1 = log_posterior(matched1, t.pt.level_marginals(), zeros, 1, 3, 3,
                                   t.params, t.prior);
  const double want = t.weights.at({1, 2}) + log_prior_matching(1, 3, 3, 1, 1) -
                      log_prior_matching(0, 3, 3, 1, 1);
  CHECK(lp1 - lp0 == doctest::Approx(want));
}

TEST_CASE("parameter draws follow the conjugate posterior") {
  PriorSpec prior;
  prior.alpha_m = {{1, 3}};
  prior.alpha_u = {{2, 2}};
  LevelCounts matched{{0, 0, 0}}, indexed{{5, 10, 30}}, excluded{{0, 60, 0}};
  Rng rng(1);
  double m1 = 0, u1 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    auto p = update_params(matched, indexed, excluded, prior, rng);
    m1 += p.m[0][0];
    u1 += p.u[0][0];
  }
  CHECK(m1 / n == doctest::Approx(0.25).epsilon(0.03));
  CHECK(u1 / n == doctest::Approx(72.0 / 104.0).epsilon(0.01));
}

TEST_CASE("sampler reproduces exact marginals on a small block") {
  std::mt19937_64 rng(21);
  auto t = fixture::toy_problem(3, 2, rng);
  auto exact = oracle::posterior_marginals(3, 2, t.weights, 1, 1);
  for (auto kind : {KernelKind::gibbs, KernelKind::add_drop_swap, KernelKind::locally_balanced}) {
    McmcOptions o;
    o.iterations = 30000;
    o.seed = 5;
    o.sample_params = false;
    o.policy.force = kind;
    std::map<RecordPair, double> freq;
    std::size_t kept = 0;
    auto res = run_restricted_mcmc(t.blocks, t.pt, t.idx, nullptr, t.prior, t.params, o, nullptr,
                                   [&](const SamplerState &s) {
                                     if (s.iteration < 1000)
                                       return;
                                     ++kept;
                                     for (const auto &l : s.matching.links())
                                       freq[l] += 1;
                                   });
    CHECK(res.block_kernels[0] == kind);
    for (const auto &[pair, p] : exact)
      CHECK(freq[pair] / kept == doctest::Approx(p).epsilon(0.03).scale(1));
  }
}

TEST_CASE("kernel policy by block size") {
  std::mt19937_64 rng(2);
  auto t = fixture::toy_problem(4, 4, rng);
  McmcOptions o;
  o.iterations = 2;
  o.sample_params = false;
  CHECK(run_restricted_mcmc(t.blocks, t.pt, t.idx, nullptr, t.prior, t.params, o)
            .block_kernels[0] == KernelKind::gibbs);  // 209 matchings
  o.policy.gibbs_max_matchings = 100;
  CHECK(run_restricted_mcmc(t.blocks, t.pt, t.idx, nullptr, t.prior, t.params, o)
            .block_kernels[0] == KernelKind::locally_balanced);
  o.policy.lb_max_pairs = 10;
  CHECK(run_restricted_mcmc(t.blocks, t.pt, t.idx, nullptr, t.prior, t.params, o)
            .block_kernels[0] == KernelKind::add_drop_swap);
  CHECK(parse_kernel_kind(to_string(KernelKind::locally_balanced)) == KernelKind::locally_balanced);
  CHECK_THROWS_AS(parse_kernel_kind("metropolis"), std::invalid_argument);
}

TEST_CASE("traces are deterministic and replay to the sampled states") {
  std::mt19937_64 rng(6);
  auto t = fixture::toy_problem(4, 3, rng);
  std::vector<std::string> a{"a0", "a1", "a2", "a3"}, b{"b0", "b1", "b2"};
  auto run = [&](std::uint64_t seed, bool parallel, unsigned threads, std::vector<std::size_t> *links) {
    std::ostringstream out;
    TraceWriter tw(out, a, b, {"x"});
    tw.header(seed, "h");
    McmcOptions o;
    o.iterations = 300;
    o.seed = seed;
    o.parallel = parallel;
    o.threads = threads;
    o.check_every = 7;
    o.params_every = 5;
    auto res = run_restricted_mcmc(t.blocks, t.pt, t.idx, nullptr, t.prior, t.params, o, &tw);
    if (links)
      *links = res.links;
    return out.str();
  };
  std::vector<std::size_t> links;
  const auto first = run(3, false, 1, &links);
  CHECK(first == run(3, false, 1, nullptr));
  CHECK(first != run(4, false, 1, nullptr));
  CHECK(run(3, true, 1, nullptr) == run(3, true, 3, nullptr));

  const auto path = std::filesystem::temp_directory_path() / "prl_trace_test.txt";
  std::ofstream(path) << first;
  std::vector<std::size_t> replayed;
  std::size_t snapshots = 0;
  auto hdr = replay_trace(path, a, b, {"x"}, {6},
                          [&](const TraceIteration &it, const BipartiteMatching &m,
                              const ModelParams *p) {
                            CHECK(it.iter == replayed.size());
                            replayed.push_back(m.size());
                            snapshots += p != nullptr;
                          });
  CHECK(hdr.seed == 3);
  CHECK(hdr.n_a == 4);
  CHECK(replayed == links);
  CHECK(snapshots == links.size());

  std::ofstream(path) << "# seed=1\n0,0,1\n";
  CHECK_THROWS_AS(replay_trace(path, a, b, {"x"}, {6}, [](auto &, auto &, auto) {}), FormatError);
}

TEST_CASE("sampler input checks") {
  std::mt19937_64 rng(7);
  auto t = fixture::toy_problem(2, 2, rng);
  McmcOptions o;
  o.iterations = 1;
  auto twice = t.blocks;
  twice.blocks.push_back(twice.blocks[0]);
  CHECK_THROWS_AS(run_restricted_mcmc(twice, t.pt, t.idx, nullptr, t.prior, t.params, o),
                  std::invalid_argument);
  auto small = t.blocks;
  small.blocks[0].pairs.pop_back();
  BipartiteMatching start(2, 2);
  start.link(1, 1);
  CHECK_THROWS_AS(run_restricted_mcmc(small, t.pt, t.idx, nullptr, t.prior, t.params, o,
                                      nullptr, {}, &start),
                  std::invalid_argument);
}
