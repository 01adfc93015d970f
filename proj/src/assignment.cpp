#include "prl/assignment.hpp"

#include "prl/csv.hpp"
#include "prl/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace prl {

void SparseWeightMatrix::canonicalize() {
  std::sort(entries.begin(), entries.end(), [](const auto &x, const auto &y) {
    return x.a != y.a ? x.a < y.a : x.b < y.b;
  });
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto &e = entries[i];
    if (e.a >= n_a || e.b >= n_b)
      throw std::invalid_argument("weight entry outside the file sizes");
    if (!std::isfinite(e.w))
      throw std::invalid_argument("non-finite weight");
    if (i > 0 && entries[i - 1].a == e.a && entries[i - 1].b == e.b)
      throw std::invalid_argument("duplicate weight entry (" +
                                  std::to_string(e.a) + "," +
                                  std::to_string(e.b) + ")");
  }
}

SparseWeightMatrix
SparseWeightMatrix::dense(const std::vector<std::vector<double>> &w) {
  SparseWeightMatrix out;
  out.n_a = w.size();
  out.n_b = w.empty() ? 0 : w.front().size();
  for (std::uint32_t a = 0; a < w.size(); ++a) {
    if (w[a].size() != out.n_b)
      throw std::invalid_argument("ragged dense weight matrix");
    for (std::uint32_t b = 0; b < out.n_b; ++b)
      out.entries.push_back({a, b, w[a][b]});
  }
  return out;
}

SparseWeightMatrix threshold_weights(const SparseWeightMatrix &w, double theta) {
  SparseWeightMatrix out;
  out.n_a = w.n_a;
  out.n_b = w.n_b;
  for (const auto &e : w.entries)
    if (e.w >= theta)
      out.entries.push_back({e.a, e.b, e.w - theta});
  return out;
}

namespace {

class UnionFind {
public:
  explicit UnionFind(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t x, std::size_t y) {
    x = find(x);
    y = find(y);
    if (x == y)
      return;
    if (y < x)
      std::swap(x, y);
    parent_[y] = x;
  }

private:
  std::vector<std::size_t> parent_;
};

} // namespace

ComponentPartition connected_components(const SparseWeightMatrix &w) {
  const std::size_t na = w.n_a;
  UnionFind uf(na + w.n_b);
  for (const auto &e : w.entries)
    uf.unite(e.a, na + e.b);

  // Every component contains an a-node, and the union keeps the smallest
  // node as root, so roots are a-nodes and sorting by root orders by
  // smallest a-index.
  std::unordered_map<std::size_t, std::size_t> slot;
  std::vector<std::size_t> roots;
  for (const auto &e : w.entries) {
    const std::size_t r = uf.find(e.a);
    if (slot.emplace(r, 0).second)
      roots.push_back(r);
  }
  std::sort(roots.begin(), roots.end());
  ComponentPartition out;
  out.components.resize(roots.size());
  for (std::size_t i = 0; i < roots.size(); ++i)
    slot[roots[i]] = i;
  for (std::size_t k = 0; k < w.entries.size(); ++k) {
    const auto &e = w.entries[k];
    auto &c = out.components[slot[uf.find(e.a)]];
    c.entries.push_back(k);
    c.a_nodes.push_back(e.a);
    c.b_nodes.push_back(e.b);
  }
  for (auto &c : out.components) {
    std::sort(c.a_nodes.begin(), c.a_nodes.end());
    c.a_nodes.erase(std::unique(c.a_nodes.begin(), c.a_nodes.end()),
                    c.a_nodes.end());
    std::sort(c.b_nodes.begin(), c.b_nodes.end());
    c.b_nodes.erase(std::unique(c.b_nodes.begin(), c.b_nodes.end()),
                    c.b_nodes.end());
  }
  return out;
}

namespace {

// Square assignment problem with persons = A + dummy(B) and objects =
// B + dummy(A). Real pairs carry their benefit; a -> dummy(a), dummy(b) ->
// b and dummy(b) -> dummy(a) for every real edge (a, b) carry zero. Every
// partial matching extends to a perfect assignment of the same value.
struct AuctionProblem {
  std::size_t na = 0, nb = 0;
  std::vector<std::size_t> begin;
  std::vector<std::uint32_t> obj;
  std::vector<std::int64_t> benefit;
  std::vector<double> weight; // original weight on real arcs

  std::size_t n() const { return na + nb; }
};

struct Best {
  std::uint32_t obj;
  std::int64_t first;
  std::int64_t second;
};

Best best_two(const AuctionProblem &p, const std::vector<std::int64_t> &price,
              std::size_t person) {
  constexpr std::int64_t lowest = std::numeric_limits<std::int64_t>::min() / 4;
  Best b{0, lowest, lowest};
  for (std::size_t k = p.begin[person]; k < p.begin[person + 1]; ++k) {
    const std::int64_t v = p.benefit[k] - price[p.obj[k]];
    if (v > b.first) {
      b.second = b.first;
      b.first = v;
      b.obj = p.obj[k];
    } else if (v > b.second) {
      b.second = v;
    }
  }
  if (b.second == lowest)
    b.second = b.first;
  return b;
}

std::int64_t arc_benefit(const AuctionProblem &p, std::size_t person,
                         std::uint32_t object) {
  for (std::size_t k = p.begin[person]; k < p.begin[person + 1]; ++k)
    if (p.obj[k] == object)
      return p.benefit[k];
  throw std::logic_error("auction assignment uses a missing arc");
}

} // namespace

AuctionResult auction_solve(std::span<const WeightEntry> entries,
                            const AuctionOptions &options,
                            std::span<const RecordPair> warm_start) {
  AuctionResult result;
  if (entries.empty())
    return result;
  if (!(options.resolution > 0.0))
    throw std::invalid_argument("auction resolution must be positive");

  std::vector<std::uint32_t> a_ids, b_ids;
  double wmax = 0.0;
  for (const auto &e : entries) {
    if (!(e.w > 0.0) || !std::isfinite(e.w))
      throw std::invalid_argument("auction weights must be positive and finite");
    a_ids.push_back(e.a);
    b_ids.push_back(e.b);
    wmax = std::max(wmax, e.w);
  }
  for (auto *v : {&a_ids, &b_ids}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  auto local = [](const std::vector<std::uint32_t> &ids, std::uint32_t id) {
    return static_cast<std::uint32_t>(
        std::lower_bound(ids.begin(), ids.end(), id) - ids.begin());
  };

  AuctionProblem p;
  p.na = a_ids.size();
  p.nb = b_ids.size();
  const std::size_t n = p.n();
  const double unit = options.resolution * wmax;
  const auto scale = static_cast<std::int64_t>(n + 1);

  struct LocalEdge {
    std::uint32_t a, b;
    std::int64_t benefit;
    double w;
  };
  std::vector<LocalEdge> edges;
  edges.reserve(entries.size());
  std::int64_t max_benefit = 1;
  for (const auto &e : entries) {
    const auto units = std::max<std::int64_t>(1, std::llround(e.w / unit));
    edges.push_back({local(a_ids, e.a), local(b_ids, e.b), units * scale, e.w});
    max_benefit = std::max(max_benefit, units * scale);
  }

  std::vector<std::size_t> deg_a(p.na, 1), deg_b(p.nb, 1);
  for (const auto &e : edges) {
    ++deg_a[e.a];
    ++deg_b[e.b];
  }
  p.begin.assign(n + 1, 0);
  for (std::size_t i = 0; i < p.na; ++i)
    p.begin[i + 1] = p.begin[i] + deg_a[i];
  for (std::size_t j = 0; j < p.nb; ++j)
    p.begin[p.na + j + 1] = p.begin[p.na + j] + deg_b[j];
  p.obj.resize(p.begin[n]);
  p.benefit.resize(p.begin[n]);
  p.weight.assign(p.begin[n], 0.0);
  std::vector<std::size_t> fill(p.begin.begin(), p.begin.end() - 1);
  auto add_arc = [&](std::size_t person, std::uint32_t object, std::int64_t c,
                     double w = 0.0) {
    p.obj[fill[person]] = object;
    p.weight[fill[person]] = w;
    p.benefit[fill[person]++] = c;
  };
  for (std::size_t j = 0; j < p.nb; ++j)
    add_arc(p.na + j, static_cast<std::uint32_t>(j), 0);
  for (const auto &e : edges) {
    add_arc(e.a, e.b, e.benefit, e.w);
    add_arc(p.na + e.b, static_cast<std::uint32_t>(p.nb + e.a), 0);
  }
  for (std::size_t i = 0; i < p.na; ++i)
    add_arc(i, static_cast<std::uint32_t>(p.nb + i), 0);

  std::vector<std::int64_t> price(n, 0);
  std::vector<std::int32_t> assigned(n, -1), owner(n, -1);
  auto assign = [&](std::size_t person, std::uint32_t object) {
    assigned[person] = static_cast<std::int32_t>(object);
    owner[object] = static_cast<std::int32_t>(person);
  };

  if (!warm_start.empty()) {
    std::vector<char> a_taken(p.na, 0), b_taken(p.nb, 0);
    for (const auto &l : warm_start) {
      auto ia = std::lower_bound(a_ids.begin(), a_ids.end(), l.a);
      auto ib = std::lower_bound(b_ids.begin(), b_ids.end(), l.b);
      if (ia == a_ids.end() || *ia != l.a || ib == b_ids.end() || *ib != l.b)
        continue;
      const auto la = static_cast<std::uint32_t>(ia - a_ids.begin());
      const auto lb = static_cast<std::uint32_t>(ib - b_ids.begin());
      bool has_arc = false;
      for (std::size_t k = p.begin[la]; k < p.begin[la + 1] && !has_arc; ++k)
        has_arc = p.obj[k] == lb;
      if (!has_arc || a_taken[la] || b_taken[lb])
        continue;
      a_taken[la] = b_taken[lb] = 1;
      assign(la, lb);
      assign(p.na + lb, static_cast<std::uint32_t>(p.nb + la));
    }
    for (std::size_t i = 0; i < p.na; ++i)
      if (!a_taken[i])
        assign(i, static_cast<std::uint32_t>(p.nb + i));
    for (std::size_t j = 0; j < p.nb; ++j)
      if (!b_taken[j])
        assign(p.na + j, static_cast<std::uint32_t>(j));
  }

  const double tol_units =
      options.early_stop_tolerance > 0.0
          ? options.early_stop_tolerance / unit * static_cast<double>(scale)
          : 0.0;
  constexpr std::int64_t kFactor = 6;
  std::int64_t eps = std::max<std::int64_t>(1, max_benefit / kFactor);
  bool aborted = false;
  std::deque<std::size_t> queue;
  while (true) {
    queue.clear();
    for (std::size_t person = 0; person < n; ++person) {
      if (assigned[person] >= 0) {
        const auto j = static_cast<std::uint32_t>(assigned[person]);
        const Best best = best_two(p, price, person);
        const std::int64_t v = arc_benefit(p, person, j) - price[j];
        if (v >= best.first - eps)
          continue;
        owner[j] = -1;
        assigned[person] = -1;
      }
      queue.push_back(person);
    }
    while (!queue.empty()) {
      const std::size_t person = queue.front();
      queue.pop_front();
      const Best best = best_two(p, price, person);
      price[best.obj] += best.first - best.second + eps;
      if (owner[best.obj] >= 0) {
        const auto prev = static_cast<std::size_t>(owner[best.obj]);
        assigned[prev] = -1;
        queue.push_back(prev);
      }
      assign(person, best.obj);
      ++result.bids;
      if (options.max_bids > 0 && result.bids >= options.max_bids) {
        aborted = true;
        break;
      }
    }
    if (aborted || eps == 1 || static_cast<double>(eps) <= tol_units)
      break;
    eps = std::max<std::int64_t>(1, eps / kFactor);
  }
  result.exact = !aborted && eps == 1;

  for (std::size_t i = 0; i < p.na; ++i) {
    const std::int32_t j = assigned[i];
    if (j < 0 || static_cast<std::size_t>(j) >= p.nb)
      continue;
    result.links.push_back({a_ids[i], b_ids[static_cast<std::size_t>(j)]});
    for (std::size_t k = p.begin[i]; k < p.begin[i + 1]; ++k)
      if (p.obj[k] == static_cast<std::uint32_t>(j)) {
        result.total_weight += p.weight[k];
        break;
      }
  }
  return result;
}

LsapSolution solve_thresholded_lsap(const SparseWeightMatrix &w, double theta,
                                    const LsapOptions &options,
                                    const BipartiteMatching *warm_start) {
  SparseWeightMatrix t = threshold_weights(w, theta);
  std::erase_if(t.entries, [](const WeightEntry &e) { return !(e.w > 0.0); });
  const ComponentPartition parts = connected_components(t);

  LsapSolution out;
  out.matching = BipartiteMatching(w.n_a, w.n_b);
  out.components = parts.components.size();
  std::vector<AuctionResult> solved(parts.components.size());

  parallel_chunks(parts.components.size(), options.threads,
                  [&](std::size_t lo, std::size_t hi, unsigned) {
    for (std::size_t c = lo; c < hi; ++c) {
      const Component &comp = parts.components[c];
      std::vector<WeightEntry> local;
      local.reserve(comp.entries.size());
      for (std::size_t k : comp.entries)
        local.push_back(t.entries[k]);
      auto &res = solved[c];
      if (comp.a_nodes.size() == 1 || comp.b_nodes.size() == 1) {
        const auto best = std::max_element(
            local.begin(), local.end(),
            [](const auto &x, const auto &y) { return x.w < y.w; });
        res.links.push_back({best->a, best->b});
        res.total_weight = best->w;
        continue;
      }
      std::vector<RecordPair> warm;
      if (warm_start) {
        for (std::uint32_t a : comp.a_nodes) {
          const std::int32_t b = warm_start->partner_of_a(a);
          if (b != BipartiteMatching::kUnmatched)
            warm.push_back({a, static_cast<std::uint32_t>(b)});
        }
      }
      res = auction_solve(local, options.auction, warm);
    }
  });

  for (const auto &res : solved) {
    out.exact = out.exact && res.exact;
    out.objective += res.total_weight;
    for (const auto &l : res.links)
      out.matching.link(l.a, l.b);
  }
  return out;
}

BipartiteMatching complete_assignment(const SparseWeightMatrix &w,
                                      std::optional<double> fill) {
  BipartiteMatching out(w.n_a, w.n_b);
  if (w.n_a == 0 || w.n_b == 0)
    return out;
  if (!fill && w.entries.empty())
    throw std::invalid_argument("complete assignment needs a fill weight");
  double lo = fill.value_or(std::numeric_limits<double>::infinity());
  double hi = fill.value_or(-std::numeric_limits<double>::infinity());
  for (const auto &e : w.entries) {
    lo = std::min(lo, e.w);
    hi = std::max(hi, e.w);
  }
  const double fill_w = fill.value_or(lo);
  // Shift so every pair is positive, then add a bonus per link large enough
  // that any maximum-weight matching has maximum cardinality.
  const double range = hi - lo + 1.0;
  const double bonus =
      static_cast<double>(std::min(w.n_a, w.n_b) + 1) * range;
  std::vector<double> row(w.n_b);
  std::vector<WeightEntry> dense;
  dense.reserve(w.n_a * w.n_b);
  std::size_t k = 0;
  for (std::uint32_t a = 0; a < w.n_a; ++a) {
    std::fill(row.begin(), row.end(), fill_w);
    for (; k < w.entries.size() && w.entries[k].a == a; ++k)
      row[w.entries[k].b] = w.entries[k].w;
    for (std::uint32_t b = 0; b < w.n_b; ++b)
      dense.push_back({a, b, row[b] - lo + 1.0 + bonus});
  }
  const AuctionResult res = auction_solve(dense);
  for (const auto &l : res.links)
    out.link(l.a, l.b);
  return out;
}

double matching_weight(const SparseWeightMatrix &w,
                       const BipartiteMatching &matching) {
  double total = 0.0;
  for (const auto &l : matching.links()) {
    auto it = std::lower_bound(
        w.entries.begin(), w.entries.end(), l, [](const WeightEntry &e, const RecordPair &x) {
          return e.a != x.a ? e.a < x.a : e.b < x.b;
        });
    if (it == w.entries.end() || it->a != l.a || it->b != l.b)
      throw std::invalid_argument("matching links a pair with no weight");
    total += it->w;
  }
  return total;
}

void write_components(const std::filesystem::path &path,
                      const SparseWeightMatrix &w,
                      const ComponentPartition &partition) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << "component,a,b,weight\n";
  for (std::size_t c = 0; c < partition.components.size(); ++c)
    for (std::size_t k : partition.components[c].entries)
      csv::write_row(out, {std::to_string(c), std::to_string(w.entries[k].a),
                           std::to_string(w.entries[k].b),
                           format_exact(w.entries[k].w)});
}

} // namespace prl
