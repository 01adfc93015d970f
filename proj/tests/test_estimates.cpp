#include "fixtures.hpp"
#include "prl/estimates.hpp"
#include "prl/mcmc.hpp"
#include "prl/synthetic.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace prl;

namespace {

FmrEstimate row(const std::vector<FmrEstimate> &rows, const std::string &name) {
  for (const auto &r : rows)
    if (r.stratum == name)
      return r;
  FAIL("missing stratum " << name);
  return {};
}

void check3(const FmrEstimate &e, double est, double lo, double hi) {
  CHECK(std::round(e.estimate * 1000) / 1000 == doctest::Approx(est));
  CHECK(std::round(e.lo * 1000) / 1000 == doctest::Approx(lo));
  CHECK(std::round(e.hi * 1000) / 1000 == doctest::Approx(hi));
}

} // namespace

TEST_CASE("labelled-sample false match rates") {
  // fastLink-only non-movers
  std::vector<StratumLabels> fl{{"fastlink_only", 105, 44, 1, 4348}};
  check3(row(stratified_fmr(fl, NdPolicy::exclude), "fastlink_only"), 0.705, 0.631, 0.778);
  check3(row(stratified_fmr(fl, NdPolicy::as_false), "fastlink_only"), 0.707, 0.634, 0.780);
  // intersection movers: interval clamped at zero
  std::vector<StratumLabels> in{{"intersection", 2, 88, 10, 14276}};
  check3(row(stratified_fmr(in, NdPolicy::exclude), "intersection"), 0.022, 0.000, 0.053);
  // the Bayesian model's links are the intersection plus Bayesian-only strata
  std::vector<StratumLabels> movers{{"intersection", 2, 88, 10, 14276},
                                    {"bayes_only", 12, 118, 20, 18525}};
  auto m = stratified_fmr(movers, NdPolicy::exclude);
  REQUIRE(m.back().stratum == "overall");
  check3(m.back(), 0.062, 0.031, 0.093);
  check3(stratified_fmr(movers, NdPolicy::as_false).back(), 0.173, 0.126, 0.219);
  std::vector<StratumLabels> stayers{{"intersection", 4, 96, 0, 38968},
                                     {"bayes_only", 26, 121, 3, 60562}};
  check3(stratified_fmr(stayers, NdPolicy::exclude).back(), 0.123, 0.083, 0.164);

  std::vector<StratumLabels> clean{{"s", 0, 10, 0, 100}};
  for (auto p : {NdPolicy::exclude, NdPolicy::as_false}) {
    auto r = stratified_fmr(clean, p)[0];
    CHECK(r.estimate == 0.0);
    CHECK(r.se == 0.0);
  }
  std::vector<StratumLabels> empty{{"s", 0, 0, 3, 100}};
  CHECK_THROWS_AS(stratified_fmr(empty, NdPolicy::exclude), std::invalid_argument);
}

TEST_CASE("unlabeled strata conventions") {
  std::vector<StratumRate> s{{"a", 100, 0.1}, {"b", 300, 0.2}, {"c", 100, std::nullopt}};
  CHECK(combined_fmr(s, UnlabeledConvention::max_labeled) ==
        doctest::Approx((10 + 60 + 20) / 500.0));
  CHECK(combined_fmr(s, UnlabeledConvention::one) == doctest::Approx((10 + 60 + 100) / 500.0));
  std::vector<StratumRate> none{{"c", 100, std::nullopt}};
  CHECK_THROWS_AS(combined_fmr(none, UnlabeledConvention::max_labeled), std::invalid_argument);
  CHECK(combined_fmr(none, UnlabeledConvention::one) == 1.0);
}

TEST_CASE("switch-rate adjustments") {
  CHECK(adjusted_switch_rate(0.3, 0.1).value == doctest::Approx(0.2778).epsilon(1e-4));
  CHECK(adjusted_switch_rate(0.3, 0.0).value == 0.3);
  CHECK(adjusted_switch_rate(0.5, 0.37).value == doctest::Approx(0.5));
  CHECK(adjusted_direction_fraction(80, 100, 0.5).value == doctest::Approx(0.90));
  CHECK(adjusted_direction_fraction(70, 100, 0.0).value == doctest::Approx(0.70));
  CHECK(adjusted_direction_fraction(70, 100, 0.4).value == doctest::Approx(0.70));
  for (double rho : {0.0, 0.05, 0.2, 0.45, 0.9})
    for (double pf : {0.0, 0.1, 0.33, 0.8}) {
      const double obs = 0.5 * pf + rho * (1 - pf);
      CHECK(std::abs(adjusted_switch_rate(obs, pf).value - rho) < 1e-12);
    }
  auto c = adjusted_switch_rate(0.01, 0.5);
  CHECK(c.clamped);
  CHECK(c.value == 0.0);
  CHECK_THROWS_AS(adjusted_switch_rate(0.2, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(adjusted_direction_fraction(1, 0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(adjusted_direction_fraction(5, 4, 0.1), std::invalid_argument);
}

TEST_CASE("mover rule") {
  CHECK_FALSE(is_mover("main", "12", "main", "12"));
  CHECK(is_mover("main", "12", "elm", "12"));
  CHECK(is_mover("main", "12", "main", "98"));
  CHECK_FALSE(is_mover(std::nullopt, "12", "elm", "98"));
}

TEST_CASE("Fellegi-Sunter decision rule") {
  SparseWeightMatrix w;
  w.n_a = 3;
  w.n_b = 1;
  w.entries = {{0, 0, 2.0}, {1, 0, 0.5}, {2, 0, -1.0}};
  auto l = fs_decision_rule(w, 1, 0);
  CHECK(l == std::vector<PairLabel>{PairLabel::match, PairLabel::indeterminate,
                                    PairLabel::non_match});
  auto eq = fs_decision_rule(w, 0.5, 0.5);
  for (auto x : eq)
    CHECK(x != PairLabel::indeterminate);
  w.entries[0].w = 1.0;
  CHECK(fs_decision_rule(w, 1.0, 0.0)[0] == PairLabel::indeterminate);
  CHECK_THROWS_AS(fs_decision_rule(w, 0, 1), std::invalid_argument);
}

TEST_CASE("Jaro estimates agree when the threshold is inactive") {
  auto w = SparseWeightMatrix::dense({{5, 1, 2}, {1, 6, 1}, {3, 2, 4}});
  auto a = corrected_jaro_estimate(w, 0.0);
  auto b = uncorrected_jaro_estimate(w, 0.0);
  CHECK(a == b);
  CHECK(a.size() == 3);
}

TEST_CASE("posterior summaries from a trace") {
  auto dir = testutil::temp_dir("post");
  std::vector<std::string> a{"a0", "a1"}, b{"b0", "b1"};
  {
    std::ofstream out(dir / "t.txt");
    TraceWriter tw(out, a, b, {"x"});
    tw.header(1, "h");
    std::vector<RecordPair> l0{{0, 0}}, l1{{1, 1}};
    tw.iteration(0, -1, 1, l0, {});
    tw.iteration(1, -1, 2, l1, {});
    tw.iteration(2, -1, 1, {}, l1);
    tw.iteration(3, -1, 2, l1, {});
  }
  auto s = posterior_link_probabilities(dir / "t.txt", a, b, {"x"}, {2}, 1);
  CHECK(s.retained == 2);
  CHECK(s.probability(0, 0) == 1.0);
  CHECK(s.probability(1, 1) == 0.5);
  CHECK(s.probability(0, 1) == 0.0);
  CHECK(s.mean_links() == 1.5);
  auto again = posterior_link_probabilities(dir / "t.txt", a, b, {"x"}, {2}, 1);
  CHECK(again.link_prob == s.link_prob);
  CHECK_THROWS_AS(posterior_link_probabilities(dir / "t.txt", a, b, {"x"}, {2}, 3),
                  std::invalid_argument);
  CHECK(bayes_point_estimate(s).links() == std::vector<RecordPair>{{0, 0}});
  CHECK(bayes_point_estimate(s, 0.5).size() == 1);
  auto curve = matches_made_curve(s, {0.25, 0.75});
  CHECK(curve[0].second == 2);
  CHECK(curve[1].second == 1);
  write_link_probabilities(dir / "p.csv", s, a, b);
  CHECK(testutil::read_file(dir / "p.csv").rfind("a_id,b_id,probability\n", 0) == 0);
}

TEST_CASE("point estimate resolves conflicts below one half") {
  PosteriorSummary s;
  s.n_a = s.n_b = 2;
  s.retained = 10;
  s.link_prob = {{{0, 0}, 0.4}, {{0, 1}, 0.45}, {{1, 1}, 0.3}};
  auto m = bayes_point_estimate(s, 0.25);
  CHECK(m.links() == std::vector<RecordPair>{{0, 1}});
  s.link_prob = {{{0, 0}, 0.9}, {{1, 1}, 0.2}};
  CHECK(bayes_point_estimate(s).size() == 1);
  s.link_prob = {{{0, 0}, 0.3}};
  CHECK(bayes_point_estimate(s).empty());
}

TEST_CASE("switch rates recover a planted rate under perfect linkage") {
  auto cfg = SyntheticConfig::moderate(3000, 3000, 2500);
  auto files = generate_synthetic_files(cfg, 12);
  std::vector<FieldValue> pa, pb;
  for (std::size_t i = 0; i < files.a.size(); ++i)
    pa.push_back(files.a.value(i, FieldRole::party));
  for (std::size_t i = 0; i < files.b.size(); ++i)
    pb.push_back(files.b.value(i, FieldRole::party));
  BipartiteMatching truth(files.a.size(), files.b.size());
  for (auto [i, j] : files.truth)
    truth.link(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
  SwitchRateOptions o;
  o.adjustments = {{"none", {{"all", 0.0}}}, {"tenth", {{"all", 0.1}}}};
  std::vector<Subgroup> g{{"all", [](auto, auto) { return true; }},
                          {"nobody", [](auto, auto) { return false; }}};
  SwitchRateAccumulator acc(pa, pb, g, o);
  acc.add(truth);
  acc.add(truth);
  const auto &r = acc.result();
  const double planted =
      static_cast<double>(files.planted_switches) / static_cast<double>(files.major_party_pairs);
  CHECK(r[0].switch_rate[0] == doctest::Approx(planted));
  CHECK(planted == doctest::Approx(0.2).epsilon(0.1));
  CHECK(r[0].adjusted[0].second == r[0].switch_rate);
  CHECK(r[0].adjusted[1].second[0] ==
        doctest::Approx(adjusted_switch_rate(planted, 0.1).value));
  CHECK(r[1].missing == 2);
  CHECK(r[1].switch_rate.empty());
  auto dir = testutil::temp_dir("switch");
  write_switch_rates(dir / "s.csv", r);
  CHECK(testutil::read_file(dir / "s.csv").find("all,switch_rate_mean,") != std::string::npos);
}

TEST_CASE("sample summaries") {
  auto d = summarize_samples({1, 2, 3, 4, 5});
  CHECK(d.mean == 3);
  CHECK(d.q500 == 3);
  CHECK(d.q025 == doctest::Approx(1.1));
  CHECK(d.q975 == doctest::Approx(4.9));
}
