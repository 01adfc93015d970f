#include "oracles.hpp"
#include "prl/blocking.hpp"
#include "prl/csv.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <map>

using namespace prl;

namespace {

// shaped after the worked figure: one 4x3 block joined through several
// edges, two singleton blocks, and (a4,b1) below the threshold
SparseWeightMatrix toy() {
  SparseWeightMatrix w;
  w.n_a = 6;
  w.n_b = 5;
  w.entries = {{0, 0, 3.0}, {1, 0, 2.0}, {1, 1, 3.0}, {2, 1, 1.0}, {2, 4, 2.0},
               {3, 4, 2.5}, {3, 0, -1.0}, {4, 2, 4.0}, {5, 3, 4.0}, {4, 3, -2.0}};
  w.canonicalize();
  return w;
}

void check_invariants(const SparseWeightMatrix &w, const PosthocBlockSet &set) {
  std::map<std::uint32_t, std::size_t> a_block, b_block;
  for (std::size_t k = 0; k < set.blocks.size(); ++k) {
    const auto &bl = set.blocks[k];
    for (auto a : bl.a_nodes)
      CHECK(a_block.emplace(a, k).second);
    for (auto b : bl.b_nodes)
      CHECK(b_block.emplace(b, k).second);
    if (!bl.truncated)
      CHECK(bl.pairs.size() <= set.max_pairs);
    for (const auto &p : bl.pairs) {
      CHECK(std::binary_search(bl.a_nodes.begin(), bl.a_nodes.end(), p.a));
      CHECK(std::binary_search(bl.b_nodes.begin(), bl.b_nodes.end(), p.b));
    }
    if (k)
      CHECK(set.blocks[k - 1].a_nodes.front() < bl.a_nodes.front());
  }
  // every weighted pair inside one untruncated block is admitted
  std::size_t inside = 0;
  for (const auto &e : w.entries) {
    auto ia = a_block.find(e.a);
    auto ib = b_block.find(e.b);
    if (ia != a_block.end() && ib != b_block.end() && ia->second == ib->second &&
        !set.blocks[ia->second].truncated)
      ++inside;
  }
  std::size_t admitted = 0;
  for (const auto &bl : set.blocks)
    if (!bl.truncated)
      admitted += bl.pairs.size();
  CHECK(inside == admitted);
}

} // namespace

TEST_CASE("worked example: transitivity admits a below-threshold pair") {
  auto w = toy();
  BlockingOptions o;
  o.w_min = 0;
  auto set = build_posthoc_blocks(w, o);
  REQUIRE(set.blocks.size() == 3);
  const auto &one = set.blocks[0];
  CHECK(one.a_nodes == std::vector<std::uint32_t>{0, 1, 2, 3});
  CHECK(one.b_nodes == std::vector<std::uint32_t>{0, 1, 4});
  CHECK(one.pairs.size() == 7);
  bool star = false;
  for (const auto &p : one.pairs)
    star |= p.a == 3 && p.b == 0 && p.w == -1.0;
  CHECK(star);
  CHECK(set.blocks[1].pairs.size() == 1);
  CHECK(set.blocks[2].pairs.size() == 1);
  CHECK(set.admitted_pairs() == 9);
  check_invariants(w, set);
}

TEST_CASE("threshold above every weight gives no blocks") {
  BlockingOptions o;
  o.w_min = 10;
  auto set = build_posthoc_blocks(toy(), o);
  CHECK(set.blocks.empty());
  CHECK(set.admitted_pairs() == 0);
}

TEST_CASE("unbounded blocks are the components at w_min") {
  std::mt19937_64 rng(31);
  for (int rep = 0; rep < 20; ++rep) {
    auto w = oracle::random_sparse(rng, 25, 0.08, -3, 3);
    w.canonicalize();
    BlockingOptions o;
    o.max_pairs = 1u << 30;
    auto set = build_posthoc_blocks(w, o);
    oracle::UnionFind uf(w.n_a + w.n_b);
    std::vector<bool> touched(w.n_a + w.n_b);
    for (const auto &e : w.entries)
      if (e.w > 0) {
        uf.unite(e.a, w.n_a + e.b);
        touched[e.a] = touched[w.n_a + e.b] = true;
      }
    std::set<std::size_t> roots;
    for (std::size_t v = 0; v < touched.size(); ++v)
      if (touched[v])
        roots.insert(uf.find(v));
    CHECK(set.blocks.size() == roots.size());
    for (const auto &bl : set.blocks) {
      const auto r = uf.find(bl.a_nodes.front());
      for (auto a : bl.a_nodes)
        CHECK(uf.find(a) == r);
      for (auto b : bl.b_nodes)
        CHECK(uf.find(w.n_a + b) == r);
    }
    check_invariants(w, set);
  }
}

TEST_CASE("oversized blocks are split until they fit") {
  std::mt19937_64 rng(32);
  for (int rep = 0; rep < 20; ++rep) {
    auto w = oracle::random_sparse(rng, 30, 0.3, -1, 6);
    w.canonicalize();
    BlockingOptions o;
    o.max_pairs = 6;
    o.threads = 1 + rep % 2;
    auto set = build_posthoc_blocks(w, o);
    check_invariants(w, set);
    for (const auto &bl : set.blocks)
      CHECK(bl.pairs.size() <= 6);
    // without a size cap, raising w_min never admits more pairs
    BlockingOptions lo, hi;
    hi.w_min = 2;
    CHECK(build_posthoc_blocks(w, hi).admitted_pairs() <=
          build_posthoc_blocks(w, lo).admitted_pairs());
  }
}

TEST_CASE("equal weights cannot be split and are truncated") {
  SparseWeightMatrix w = SparseWeightMatrix::dense({{1, 1, 1}, {1, 1, 1}, {1, 1, 1}});
  BlockingOptions o;
  o.max_pairs = 4;
  auto set = build_posthoc_blocks(w, o);
  REQUIRE(set.blocks.size() == 1);
  CHECK(set.blocks[0].truncated);
  CHECK(set.blocks[0].pairs.size() == 4);
  CHECK(summarize_blocks(set).truncated_blocks == 1);
}

TEST_CASE("next threshold rule") {
  CHECK(next_block_threshold({1, 2, 3, 4}, 0.25) == 1.0);
  CHECK(next_block_threshold({5, 5, 5, 2}, 0.5) == 2.0);
  CHECK(next_block_threshold({5, 5, 5, 2}, 0.9) == 2.0);  // quantile at the max
  CHECK_FALSE(next_block_threshold({3, 3}, 0.25).has_value());
}

TEST_CASE("options are validated") {
  BlockingOptions o;
  o.max_pairs = 0;
  CHECK_THROWS_AS(build_posthoc_blocks(toy(), o), std::invalid_argument);
  o.max_pairs = 5;
  o.w_min = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(build_posthoc_blocks(toy(), o), std::invalid_argument);
  o.w_min = 0;
  o.split_quantile = 1.0;
  CHECK_THROWS_AS(build_posthoc_blocks(toy(), o), std::invalid_argument);
}

TEST_CASE("block files and summary") {
  auto dir = testutil::temp_dir("blocks");
  auto set = build_posthoc_blocks(toy(), {});
  std::vector<std::string> a{"a1", "a2", "a3", "a4", "a5", "a6"}, b{"b1", "b2", "b3", "b4", "b5"};
  write_blocks(dir / "b.csv", set, a, b);
  write_block_summary(dir / "s.json", set);
  auto back = read_blocks(dir / "b.csv", a, b);
  REQUIRE(back.blocks.size() == set.blocks.size());
  for (std::size_t k = 0; k < set.blocks.size(); ++k) {
    CHECK(back.blocks[k].a_nodes == set.blocks[k].a_nodes);
    CHECK(back.blocks[k].pairs.size() == set.blocks[k].pairs.size());
  }
  auto s = summarize_blocks(set);
  CHECK(s.blocks == 3);
  CHECK(s.admitted_pairs == 9);
  CHECK(s.candidate_pairs == 10);
  CHECK(s.largest_block == 7);
  CHECK(s.reduction_ratio == doctest::Approx(1 - 9.0 / 30));
  CHECK(s.size_histogram[0] == 2);
  CHECK(s.size_histogram[2] == 1);
  testutil::write_file(dir / "bad.csv",
                       "block_id,a_id,b_id,weight\n0,a1,b1,1\n1,a1,b2,1\n");
  CHECK_THROWS_AS(read_blocks(dir / "bad.csv", a, b), FormatError);
}
