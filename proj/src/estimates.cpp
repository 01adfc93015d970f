#include "prl/estimates.hpp"

#include "prl/comparators.hpp"
#include "prl/csv.hpp"
#include "prl/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace prl {

namespace {
std::uint64_t pair_key(std::uint32_t a, std::uint32_t b) {
  return (static_cast<std::uint64_t>(a) << 32) | b;
}
} // namespace

double PosteriorSummary::probability(std::uint32_t a, std::uint32_t b) const {
  auto it = std::lower_bound(
      link_prob.begin(), link_prob.end(), RecordPair{a, b},
      [](const auto &x, const RecordPair &y) { return x.first < y; });
  return it != link_prob.end() && it->first == RecordPair{a, b} ? it->second : 0.0;
}

double PosteriorSummary::mean_links() const {
  if (link_counts.empty())
    return 0.0;
  double s = 0.0;
  for (auto l : link_counts)
    s += static_cast<double>(l);
  return s / static_cast<double>(link_counts.size());
}

PosteriorAccumulator::PosteriorAccumulator(std::size_t n_a, std::size_t n_b)
    : n_a_(n_a), n_b_(n_b) {}

void PosteriorAccumulator::add(const BipartiteMatching &matching,
                               const ModelParams *params) {
  ++n_;
  link_counts_.push_back(matching.size());
  for (std::uint32_t a = 0; a < matching.n_a(); ++a) {
    const std::int32_t b = matching.partner_of_a(a);
    if (b != BipartiteMatching::kUnmatched)
      ++counts_[pair_key(a, static_cast<std::uint32_t>(b))];
  }
  if (params) {
    if (!params_sum_) {
      params_sum_ = *params;
    } else {
      for (std::size_t f = 0; f < params->m.size(); ++f)
        for (std::size_t h = 0; h < params->m[f].size(); ++h) {
          params_sum_->m[f][h] += params->m[f][h];
          params_sum_->u[f][h] += params->u[f][h];
        }
    }
    ++params_n_;
  }
}

PosteriorSummary PosteriorAccumulator::summary() const {
  if (n_ == 0)
    throw std::invalid_argument("no retained iterations to summarize");
  PosteriorSummary s;
  s.n_a = n_a_;
  s.n_b = n_b_;
  s.retained = n_;
  s.link_counts = link_counts_;
  for (const auto &[key, count] : counts_)
    s.link_prob.push_back(
        {RecordPair{static_cast<std::uint32_t>(key >> 32),
                    static_cast<std::uint32_t>(key & 0xffffffffu)},
         static_cast<double>(count) / static_cast<double>(n_)});
  std::sort(s.link_prob.begin(), s.link_prob.end());
  if (params_sum_) {
    ModelParams mean = *params_sum_;
    for (auto *side : {&mean.m, &mean.u})
      for (auto &v : *side)
        for (double &x : v)
          x /= static_cast<double>(params_n_);
    s.params_mean = std::move(mean);
  }
  return s;
}

PosteriorSummary posterior_link_probabilities(
    const std::filesystem::path &trace, const std::vector<std::string> &a_ids,
    const std::vector<std::string> &b_ids, const std::vector<std::string> &fields,
    const std::vector<int> &n_levels, std::size_t burn_in) {
  PosteriorAccumulator acc(a_ids.size(), b_ids.size());
  std::size_t kept = 0;
  replay_trace(trace, a_ids, b_ids, fields, n_levels,
               [&](const TraceIteration &it, const BipartiteMatching &m,
                   const ModelParams *params) {
                 if (it.iter <= burn_in)
                   return;
                 acc.add(m, params);
                 ++kept;
               });
  if (kept == 0)
    throw std::invalid_argument("burn-in of " + std::to_string(burn_in) +
                                " leaves no iterations in the trace");
  return acc.summary();
}

BipartiteMatching bayes_point_estimate(const PosteriorSummary &summary,
                                       double threshold) {
  std::vector<std::pair<RecordPair, double>> picked;
  for (const auto &lp : summary.link_prob)
    if (lp.second > threshold)
      picked.push_back(lp);
  std::stable_sort(picked.begin(), picked.end(),
                   [](const auto &x, const auto &y) { return x.second > y.second; });
  BipartiteMatching out(summary.n_a, summary.n_b);
  for (const auto &[p, prob] : picked)
    if (out.partner_of_a(p.a) == BipartiteMatching::kUnmatched &&
        out.partner_of_b(p.b) == BipartiteMatching::kUnmatched)
      out.link(p.a, p.b);
  return out;
}

std::vector<std::pair<double, std::size_t>>
matches_made_curve(const PosteriorSummary &summary,
                   const std::vector<double> &thresholds) {
  std::vector<std::pair<double, std::size_t>> out;
  for (double t : thresholds)
    out.emplace_back(t, bayes_point_estimate(summary, t).size());
  return out;
}

std::string to_string(PairLabel l) {
  switch (l) {
  case PairLabel::non_match:
    return "non-match";
  case PairLabel::indeterminate:
    return "indeterminate";
  case PairLabel::match:
    return "match";
  }
  return "?";
}

std::vector<PairLabel> fs_decision_rule(const SparseWeightMatrix &w, double t_match,
                                        double t_nonmatch) {
  if (t_nonmatch > t_match)
    throw std::invalid_argument("non-match threshold exceeds match threshold");
  std::vector<PairLabel> out;
  out.reserve(w.size());
  for (const auto &e : w.entries) {
    if (e.w > t_match)
      out.push_back(PairLabel::match);
    else if (e.w < t_nonmatch || t_nonmatch == t_match)
      out.push_back(PairLabel::non_match);
    else
      out.push_back(PairLabel::indeterminate);
  }
  return out;
}

BipartiteMatching corrected_jaro_estimate(const SparseWeightMatrix &w, double lambda,
                                          const LsapOptions &options) {
  return solve_thresholded_lsap(w, lambda, options).matching;
}

BipartiteMatching uncorrected_jaro_estimate(const SparseWeightMatrix &w,
                                            double lambda) {
  const BipartiteMatching full = complete_assignment(w);
  BipartiteMatching out(w.n_a, w.n_b);
  for (const auto &l : full.links()) {
    auto it = std::lower_bound(
        w.entries.begin(), w.entries.end(), l,
        [](const WeightEntry &e, const RecordPair &x) {
          return e.a != x.a ? e.a < x.a : e.b < x.b;
        });
    if (it != w.entries.end() && it->a == l.a && it->b == l.b && it->w > lambda)
      out.link(l.a, l.b);
  }
  return out;
}

namespace {
AdjustedValue clamp_unit(double x) {
  AdjustedValue v{x, false};
  if (x < 0.0 || x > 1.0) {
    v.value = std::clamp(x, 0.0, 1.0);
    v.clamped = true;
  }
  return v;
}
void check_pi_f(double pi_f) {
  if (!(pi_f >= 0.0 && pi_f < 1.0))
    throw std::invalid_argument("false-match rate must lie in [0,1)");
}
} // namespace

AdjustedValue adjusted_switch_rate(double rho_observed, double pi_f,
                                   double chance_rate) {
  check_pi_f(pi_f);
  return clamp_unit((rho_observed - chance_rate * pi_f) / (1.0 - pi_f));
}

AdjustedValue adjusted_direction_fraction(std::uint64_t n_r2d, std::uint64_t n_switch,
                                          double pi_f, double chance_fraction) {
  check_pi_f(pi_f);
  if (n_switch == 0)
    throw std::invalid_argument("direction fraction needs at least one switch");
  if (n_r2d > n_switch)
    throw std::invalid_argument("more directed switches than switches");
  const double ns = static_cast<double>(n_switch);
  return clamp_unit((static_cast<double>(n_r2d) - chance_fraction * ns * pi_f) /
                    (ns * (1.0 - pi_f)));
}

bool is_mover(const FieldValue &a_street_name, const FieldValue &a_street_number,
              const FieldValue &b_street_name, const FieldValue &b_street_number) {
  if (!a_street_name || !b_street_name || !a_street_number || !b_street_number)
    return false;
  return jaro_winkler(*a_street_name, *b_street_name) < 0.85 ||
         padded_levenshtein_sim(*a_street_number, *b_street_number) < 0.5;
}

DistributionSummary summarize_samples(std::vector<double> samples) {
  DistributionSummary s;
  if (samples.empty())
    return {NAN, NAN, NAN, NAN};
  std::sort(samples.begin(), samples.end());
  double sum = 0.0;
  for (double x : samples)
    sum += x;
  s.mean = sum / static_cast<double>(samples.size());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(samples.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, samples.size() - 1);
    return samples[lo] + (pos - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
  };
  s.q025 = quantile(0.025);
  s.q500 = quantile(0.5);
  s.q975 = quantile(0.975);
  return s;
}

SwitchRateAccumulator::SwitchRateAccumulator(std::vector<FieldValue> a_party,
                                             std::vector<FieldValue> b_party,
                                             std::vector<Subgroup> subgroups,
                                             SwitchRateOptions options)
    : a_party_(std::move(a_party)), b_party_(std::move(b_party)),
      groups_(std::move(subgroups)), options_(std::move(options)) {
  for (const auto &g : groups_) {
    SubgroupPosterior p;
    p.name = g.name;
    for (const auto &[label, rates] : options_.adjustments) {
      p.adjusted.emplace_back(label, std::vector<double>{});
      p.adjusted_r2d.emplace_back(label, std::vector<double>{});
    }
    out_.push_back(std::move(p));
  }
}

void SwitchRateAccumulator::add(const BipartiteMatching &matching) {
  const auto links = matching.links();
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    std::uint64_t n = 0, switches = 0, r2d = 0;
    for (const auto &l : links) {
      const auto &pa = a_party_[l.a];
      const auto &pb = b_party_[l.b];
      if (!pa || !pb)
        continue;
      const bool major_a = *pa == options_.republican || *pa == options_.democrat;
      const bool major_b = *pb == options_.republican || *pb == options_.democrat;
      if (!major_a || !major_b || !groups_[g].contains(l.a, l.b))
        continue;
      ++n;
      if (*pa != *pb) {
        ++switches;
        if (*pa == options_.republican)
          ++r2d;
      }
    }
    auto &post = out_[g];
    if (n == 0) {
      ++post.missing;
      continue;
    }
    const double rho = static_cast<double>(switches) / static_cast<double>(n);
    post.switch_rate.push_back(rho);
    if (switches > 0)
      post.r2d_fraction.push_back(static_cast<double>(r2d) /
                                  static_cast<double>(switches));
    for (std::size_t k = 0; k < options_.adjustments.size(); ++k) {
      const auto &rates = options_.adjustments[k].second;
      auto it = rates.find(groups_[g].name);
      const double pi_f = it == rates.end() ? 0.0 : it->second;
      const AdjustedValue v = adjusted_switch_rate(rho, pi_f, options_.chance_rate);
      post.clamped += v.clamped ? 1 : 0;
      post.adjusted[k].second.push_back(v.value);
      if (switches > 0) {
        const AdjustedValue d =
            adjusted_direction_fraction(r2d, switches, pi_f, options_.chance_fraction);
        post.clamped += d.clamped ? 1 : 0;
        post.adjusted_r2d[k].second.push_back(d.value);
      }
    }
  }
}

void write_switch_rates(const std::filesystem::path &path,
                        const std::vector<SubgroupPosterior> &posteriors) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << "subgroup,statistic,value\n";
  auto emit = [&](const std::string &group, const std::string &prefix,
                  const std::vector<double> &samples) {
    const DistributionSummary s = summarize_samples(samples);
    csv::write_row(out, {group, prefix + "mean", format_exact(s.mean)});
    csv::write_row(out, {group, prefix + "q025", format_exact(s.q025)});
    csv::write_row(out, {group, prefix + "median", format_exact(s.q500)});
    csv::write_row(out, {group, prefix + "q975", format_exact(s.q975)});
  };
  for (const auto &p : posteriors) {
    emit(p.name, "switch_rate_", p.switch_rate);
    emit(p.name, "r2d_fraction_", p.r2d_fraction);
    for (const auto &[label, samples] : p.adjusted)
      emit(p.name, label + "_switch_rate_", samples);
    for (const auto &[label, samples] : p.adjusted_r2d)
      emit(p.name, label + "_r2d_fraction_", samples);
    csv::write_row(out, {p.name, "samples", std::to_string(p.switch_rate.size())});
    csv::write_row(out, {p.name, "missing", std::to_string(p.missing)});
    csv::write_row(out, {p.name, "clamped", std::to_string(p.clamped)});
  }
}

std::string to_string(NdPolicy p) {
  return p == NdPolicy::exclude ? "nd_excluded" : "nd_as_false";
}

std::vector<FmrEstimate> stratified_fmr(const std::vector<StratumLabels> &strata,
                                        NdPolicy policy) {
  std::vector<FmrEstimate> out;
  double total = 0.0;
  for (const auto &s : strata)
    total += static_cast<double>(s.size);
  if (!(total > 0.0))
    throw std::invalid_argument("strata sizes sum to zero");
  double overall = 0.0, overall_var = 0.0;
  for (const auto &s : strata) {
    double fm = static_cast<double>(s.false_matches);
    double n = fm + static_cast<double>(s.true_matches);
    if (policy == NdPolicy::as_false) {
      fm += static_cast<double>(s.no_determination);
      n += static_cast<double>(s.no_determination);
    }
    if (!(n > 0.0))
      throw std::invalid_argument("stratum '" + s.name + "' has no usable labels");
    const double p = fm / n;
    const double se = n > 1.0 ? std::sqrt(p * (1.0 - p) / (n - 1.0)) : 0.0;
    out.push_back({s.name, policy, p, se, std::max(0.0, p - 1.96 * se),
                   std::min(1.0, p + 1.96 * se)});
    const double weight = static_cast<double>(s.size) / total;
    overall += weight * p;
    overall_var += weight * weight * se * se;
  }
  const double se = std::sqrt(overall_var);
  out.push_back({"overall", policy, overall, se, std::max(0.0, overall - 1.96 * se),
                 std::min(1.0, overall + 1.96 * se)});
  return out;
}

double combined_fmr(const std::vector<StratumRate> &strata,
                    UnlabeledConvention convention) {
  double worst = -1.0, total = 0.0;
  for (const auto &s : strata) {
    total += static_cast<double>(s.size);
    if (s.fmr)
      worst = std::max(worst, *s.fmr);
  }
  if (!(total > 0.0))
    throw std::invalid_argument("strata sizes sum to zero");
  double fill = 1.0;
  if (convention == UnlabeledConvention::max_labeled) {
    if (worst < 0.0)
      throw std::invalid_argument("no stratum carries a false-match estimate");
    fill = worst;
  }
  double acc = 0.0;
  for (const auto &s : strata)
    acc += static_cast<double>(s.size) * s.fmr.value_or(fill);
  return acc / total;
}

void write_fmr_report(const std::filesystem::path &path,
                      const std::vector<FmrEstimate> &rows) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << "stratum,policy,estimate,se,lo,hi\n";
  for (const auto &r : rows)
    csv::write_row(out, {r.stratum, to_string(r.policy), format_exact(r.estimate),
                         format_exact(r.se), format_exact(r.lo), format_exact(r.hi)});
}

void write_link_probabilities(const std::filesystem::path &path,
                              const PosteriorSummary &summary,
                              const std::vector<std::string> &a_ids,
                              const std::vector<std::string> &b_ids) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << "a_id,b_id,probability\n";
  for (const auto &[p, prob] : summary.link_prob)
    csv::write_row(out, {a_ids[p.a], b_ids[p.b], format_exact(prob)});
}

void write_matching(const std::filesystem::path &path,
                    const BipartiteMatching &matching,
                    const std::vector<std::string> &a_ids,
                    const std::vector<std::string> &b_ids) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << "a_id,b_id\n";
  for (const auto &l : matching.links())
    csv::write_row(out, {a_ids[l.a], b_ids[l.b]});
}

} // namespace prl
