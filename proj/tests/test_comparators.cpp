#include "fixtures.hpp"
#include "oracles.hpp"
#include "prl/comparators.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace prl;
using R = FieldRole;

namespace {
double round2(double x) { return std::round(x * 100) / 100; }
} // namespace

TEST_CASE("jaro-winkler reference values") {
  CHECK(jaro_winkler("herbert", "herbert") == 1.0);
  CHECK(round2(jaro_winkler("dams", "adams")) == doctest::Approx(0.85));
  CHECK(jaro_winkler("martha", "marhta") == doctest::Approx(0.961).epsilon(5e-4));
  CHECK(jaro("martha", "marhta") == doctest::Approx(17.0 / 18.0));
  CHECK(jaro_winkler("abc", "xyz") == 0.0);
  CHECK(jaro_winkler("dixon", "dicksonx") == doctest::Approx(jaro_winkler("dicksonx", "dixon")));
  CHECK_THROWS_AS(jaro_winkler("", "a"), std::invalid_argument);
  CHECK(jaro_winkler("a", "a") == 1.0);
}

TEST_CASE("padded levenshtein") {
  CHECK(levenshtein("kitten", "sitting") == 3);
  CHECK(padded_levenshtein_sim("123", "123") == 1.0);
  CHECK(padded_levenshtein_sim("45", "145") == doctest::Approx(2.0 / 3.0));
  CHECK(padded_levenshtein_sim("9", "111") == 0.0);
  CHECK_THROWS_AS(padded_levenshtein_sim("", "1"), std::invalid_argument);
}

TEST_CASE("binning honours cut points exactly") {
  const auto jw = ComparatorSpec::jaro_winkler("x");
  const auto lev = ComparatorSpec::padded_levenshtein("x");
  CHECK(bin_similarity(1.0, jw) == 6);
  CHECK(bin_similarity(0.85, jw) == 5);
  CHECK(bin_similarity(std::nextafter(0.85, 0.0), jw) == 5);  // within rounding tolerance
  CHECK(bin_similarity(0.8499, jw) == 4);
  CHECK(bin_similarity(0.6, jw) == 4);
  CHECK(bin_similarity(0.45, jw) == 3);
  CHECK(bin_similarity(0.25, jw) == 2);
  CHECK(bin_similarity(0.0, jw) == 1);
  CHECK(bin_similarity(0.30, lev) == 2);
  CHECK(bin_similarity(0.5, lev) == 3);
  CHECK(bin_similarity(0.75, lev) == 4);
  CHECK(bin_similarity(1.0, lev) == 5);
  CHECK_THROWS_AS(bin_similarity(1.5, jw), std::invalid_argument);
  CHECK_THROWS_AS(bin_similarity(0.5, ComparatorSpec::exact("x")), std::invalid_argument);
  // monotone
  Level prev = 0;
  for (int i = 0; i <= 1000; ++i) {
    const Level l = bin_similarity(i / 1000.0, jw);
    CHECK(l >= prev);
    prev = l;
  }
}

TEST_CASE("comparator settings validation") {
  auto s = ComparatorSpec::jaro_winkler("x");
  CHECK_NOTHROW(s.validate());
  s.cut_points = {0.5, 0.4};
  s.n_levels = 4;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.cut_points = {0.4, 0.5};
  s.n_levels = 5;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  auto e = ComparatorSpec::exact("y");
  e.n_levels = 3;
  CHECK_THROWS_AS(e.validate(), std::invalid_argument);
  CHECK(default_comparators().size() == 8);
}

TEST_CASE("middle names") {
  using namespace middle_level;
  CHECK(compare_middle_name("e", "e") == initial_initial_match);
  CHECK(compare_middle_name("e", "f") == initial_initial_mismatch);
  CHECK(compare_middle_name("e", "edward") == initial_full_match);
  CHECK(compare_middle_name("edward", "f") == initial_full_mismatch);
  CHECK(compare_middle_name("f", std::nullopt) == 0);
  CHECK(compare_middle_name("edward", "edward") == full_exact);
  CHECK(compare_middle_name("edward", "edwerd") == full_lowest_bin + 4);
  CHECK(compare_middle_name("ab", "xy") == full_lowest_bin);
}

TEST_CASE("compare_values and missing") {
  const auto exact = ComparatorSpec::exact("f");
  CHECK(compare_values(exact, "1", "1") == 2);
  CHECK(compare_values(exact, "1", "0") == 1);
  CHECK(compare_values(exact, std::nullopt, "0") == 0);
  CHECK(compare_values(ComparatorSpec::jaro_winkler("s"), "", "x") == 0);
}

TEST_CASE("pattern table for a worked example pair") {
  auto a = fixture::table(FileLabel::A, {{{R::first_name, "herbert"},
                                          {R::middle_name, "e"},
                                          {R::surname, "dams"},
                                          {R::female, "0"},
                                          {R::occupation, "laborer"}}});
  auto b = fixture::table(FileLabel::B, {{{R::first_name, "herbert"},
                                          {R::middle_name, "e"},
                                          {R::surname, "adams"},
                                          {R::female, "0"},
                                          {R::occupation, "laborer"}}});
  std::vector<ComparatorSpec> specs{
      ComparatorSpec::jaro_winkler("first_name"), ComparatorSpec::middle_name("middle_name"),
      ComparatorSpec::jaro_winkler("surname"), ComparatorSpec::exact("female"),
      ComparatorSpec::jaro_winkler("occupation")};
  auto idx = full_index(1, 1);
  auto t = build_pattern_table(a, b, idx, specs);
  REQUIRE(t.patterns.size() == 1);
  CHECK(t.patterns[0] == std::vector<Level>{6, middle_level::initial_initial_match, 5, 2, 6});
  CHECK(t.total() == 1);
}

TEST_CASE("index matches brute force, including exceptions") {
  auto files = fixture::small_files(60, 50, 30, 3);
  std::vector<IndexClause> clauses{{"surname", 2, {}},
                                   {"first_name", 3, {{"ma", 4}}}};
  auto idx = index_pairs(files.a, files.b, clauses);
  CHECK(idx.pairs == oracle::index_pairs(files.a, files.b, clauses));
  CHECK(std::is_sorted(idx.pairs.begin(), idx.pairs.end()));
  CHECK(idx.find(idx.pairs.front().a, idx.pairs.front().b) == std::size_t{0});

  auto a = fixture::table(FileLabel::A, {{{R::first_name, "gussie"}, {R::surname, "albitz"}}});
  auto b = fixture::table(FileLabel::B, {{{R::first_name, "hazel"}, {R::surname, "adams"}},
                                         {{R::first_name, "x"}, {R::surname, "albitz"}}});
  auto two = index_pairs(a, b, {{"first_name", 3, {}}, {"surname", 3, {}}});
  REQUIRE(two.size() == 1);
  CHECK(two.pairs[0] == RecordPair{0, 1});
}

TEST_CASE("tallies equal the full cross product and reconcile with the index") {
  auto files = fixture::small_files(80, 70, 40, 9);
  auto specs = default_comparators();
  auto idx = index_pairs(files.a, files.b, {{"surname", 1, {}}});
  auto pt = build_pattern_table(files.a, files.b, idx, specs, 3);
  auto t = marginal_frequency_tallies(files.a, files.b, pt, specs, 2);
  auto ref = oracle::tallies(files.a, files.b, specs, idx.pairs);
  CHECK(t.full == ref.full);
  CHECK(t.indexed == ref.indexed);
  CHECK(t.indexed == pt.level_marginals());
  for (std::size_t f = 0; f < specs.size(); ++f) {
    std::uint64_t s = 0;
    for (auto c : t.full[f])
      s += c;
    CHECK(s == 80u * 70u);
  }
  auto ex = t.excluded();
  for (std::size_t f = 0; f < specs.size(); ++f)
    for (std::size_t h = 0; h < ex[f].size(); ++h)
      CHECK(ex[f][h] + t.indexed[f][h] == t.full[f][h]);

  // thread count does not change the table
  auto pt1 = build_pattern_table(files.a, files.b, idx, specs, 1);
  CHECK(pt1.patterns == pt.patterns);
  CHECK(pt1.pair_pattern == pt.pair_pattern);
}

TEST_CASE("unique-value weighting reproduces 8,173 x 8,349") {
  const auto spec = ComparatorSpec::jaro_winkler("first_name");
  auto tally = tally_from_frequencies(spec, {{std::string("john"), 8173}},
                                      {{std::string("william"), 8349}});
  const Level lv = bin_similarity(jaro_winkler("john", "william"), spec);
  CHECK(tally[lv] == 68236377u);
  CHECK(8173ull * 8349ull == 68236377ull);
  auto same = tally_from_frequencies(spec, {{std::string("ann"), 3}, {std::nullopt, 2}},
                                     {{std::string("ann"), 4}});
  CHECK(same[6] == 12u);
  CHECK(same[0] == 8u);
}

TEST_CASE("comparison artifacts round trip") {
  auto dir = testutil::temp_dir("cmp");
  auto files = fixture::small_files(30, 30, 20, 4);
  auto specs = default_comparators();
  auto idx = index_pairs(files.a, files.b, {{"surname", 1, {}}});
  auto pt = build_pattern_table(files.a, files.b, idx, specs);
  auto t = marginal_frequency_tallies(files.a, files.b, pt, specs);
  write_pattern_table(dir / "p.csv", pt);
  write_pair_map(dir / "m.csv", idx, pt, files.a.ids(), files.b.ids());
  write_tallies(dir / "t.csv", t);
  auto back = read_comparisons(dir / "p.csv", dir / "m.csv", files.a.ids(), files.b.ids());
  CHECK(back.index.pairs == idx.pairs);
  CHECK(back.patterns.patterns == pt.patterns);
  CHECK(back.patterns.counts == pt.counts);
  CHECK(back.patterns.pair_pattern == pt.pair_pattern);
  auto tb = read_tallies(dir / "t.csv", back.patterns, 900);
  CHECK(tb.full == t.full);
  CHECK(tb.indexed == t.indexed);
}
