#include "prl/blocking.hpp"

#include "prl/csv.hpp"
#include "prl/parallel.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace prl {

std::size_t PosthocBlockSet::admitted_pairs() const {
  std::size_t n = 0;
  for (const auto &b : blocks)
    n += b.pairs.size();
  return n;
}

std::optional<double> next_block_threshold(std::vector<double> edge_weights,
                                           double q) {
  if (edge_weights.empty())
    return std::nullopt;
  std::sort(edge_weights.begin(), edge_weights.end());
  const double top = edge_weights.back();
  if (edge_weights.front() == top)
    return std::nullopt;
  const auto n = edge_weights.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  double cut = edge_weights[rank - 1];
  if (cut == top)
    cut = *(std::lower_bound(edge_weights.begin(), edge_weights.end(), top) - 1);
  return cut;
}

namespace {

// Components of the edges (w > threshold) among `pairs`; each group gets
// every pair of `pairs` whose endpoints both fall in it.
std::vector<std::vector<WeightEntry>> split_pairs(const std::vector<WeightEntry> &pairs,
                                                  double threshold) {
  std::vector<std::uint32_t> a_ids, b_ids;
  for (const auto &e : pairs)
    if (e.w > threshold) {
      a_ids.push_back(e.a);
      b_ids.push_back(e.b);
    }
  for (auto *v : {&a_ids, &b_ids}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  const std::size_t na = a_ids.size();
  std::vector<std::size_t> parent(na + b_ids.size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  auto pos = [](const std::vector<std::uint32_t> &ids, std::uint32_t id) -> long {
    auto it = std::lower_bound(ids.begin(), ids.end(), id);
    return it != ids.end() && *it == id ? it - ids.begin() : -1;
  };
  for (const auto &e : pairs)
    if (e.w > threshold) {
      std::size_t x = find(static_cast<std::size_t>(pos(a_ids, e.a)));
      std::size_t y = find(na + static_cast<std::size_t>(pos(b_ids, e.b)));
      if (x != y)
        parent[std::max(x, y)] = std::min(x, y);
    }
  // Roots are the smallest member, always an a-node, so root order is the
  // canonical smallest-a order.
  std::map<std::size_t, std::size_t> slot;
  for (std::size_t i = 0; i < na; ++i)
    slot.emplace(find(i), 0);
  std::size_t next = 0;
  for (auto &[root, s] : slot)
    s = next++;
  std::vector<std::vector<WeightEntry>> groups(slot.size());
  for (const auto &e : pairs) {
    const long ia = pos(a_ids, e.a), ib = pos(b_ids, e.b);
    if (ia < 0 || ib < 0)
      continue;
    const std::size_t ra = find(static_cast<std::size_t>(ia));
    const std::size_t rb = find(na + static_cast<std::size_t>(ib));
    if (ra == rb)
      groups[slot[ra]].push_back(e);
  }
  return groups;
}

PosthocBlock make_block(std::vector<WeightEntry> pairs, double threshold,
                        bool truncated) {
  PosthocBlock b;
  std::sort(pairs.begin(), pairs.end(), [](const auto &x, const auto &y) {
    return x.a != y.a ? x.a < y.a : x.b < y.b;
  });
  for (const auto &e : pairs) {
    b.a_nodes.push_back(e.a);
    b.b_nodes.push_back(e.b);
  }
  for (auto *v : {&b.a_nodes, &b.b_nodes}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  b.pairs = std::move(pairs);
  b.threshold = threshold;
  b.truncated = truncated;
  return b;
}

void refine(std::vector<WeightEntry> pairs, double threshold,
            const BlockingOptions &options, std::vector<PosthocBlock> &out) {
  if (pairs.size() <= options.max_pairs) {
    out.push_back(make_block(std::move(pairs), threshold, false));
    return;
  }
  std::vector<double> edge_weights;
  for (const auto &e : pairs)
    if (e.w > threshold)
      edge_weights.push_back(e.w);
  const auto cut = next_block_threshold(edge_weights, options.split_quantile);
  if (!cut) {
    spdlog::warn("block of {} pairs cannot be split (all edge weights equal); "
                 "keeping the heaviest {}",
                 pairs.size(), options.max_pairs);
    std::stable_sort(pairs.begin(), pairs.end(),
                     [](const auto &x, const auto &y) { return x.w > y.w; });
    pairs.resize(options.max_pairs);
    out.push_back(make_block(std::move(pairs), threshold, true));
    return;
  }
  for (auto &group : split_pairs(pairs, *cut))
    refine(std::move(group), *cut, options, out);
}

} // namespace

PosthocBlockSet build_posthoc_blocks(const SparseWeightMatrix &w,
                                     const BlockingOptions &options) {
  if (options.max_pairs < 1)
    throw std::invalid_argument("block size limit must be at least 1");
  if (!std::isfinite(options.w_min))
    throw std::invalid_argument("w_min must be finite");
  if (!(options.split_quantile > 0.0 && options.split_quantile < 1.0))
    throw std::invalid_argument("split quantile must lie in (0,1)");

  PosthocBlockSet set;
  set.n_a = w.n_a;
  set.n_b = w.n_b;
  set.candidate_pairs = w.size();
  set.w_min = options.w_min;
  set.max_pairs = options.max_pairs;

  auto groups = split_pairs(w.entries, options.w_min);
  std::vector<std::vector<PosthocBlock>> parts(groups.size());
  parallel_chunks(groups.size(), options.threads,
                  [&](std::size_t lo, std::size_t hi, unsigned) {
    for (std::size_t g = lo; g < hi; ++g)
      refine(std::move(groups[g]), options.w_min, options, parts[g]);
  });
  for (auto &p : parts)
    for (auto &b : p)
      set.blocks.push_back(std::move(b));
  std::sort(set.blocks.begin(), set.blocks.end(),
            [](const auto &x, const auto &y) { return x.a_nodes[0] < y.a_nodes[0]; });
  return set;
}

BlockSummary summarize_blocks(const PosthocBlockSet &blocks) {
  BlockSummary s;
  s.blocks = blocks.blocks.size();
  s.candidate_pairs = blocks.candidate_pairs;
  for (const auto &b : blocks.blocks) {
    const std::size_t n = b.pairs.size();
    s.admitted_pairs += n;
    s.a_records += b.a_nodes.size();
    s.b_records += b.b_nodes.size();
    s.largest_block = std::max(s.largest_block, n);
    s.truncated_blocks += b.truncated ? 1 : 0;
    std::size_t bucket = 0;
    while ((std::size_t{2} << bucket) <= n)
      ++bucket;
    if (s.size_histogram.size() <= bucket)
      s.size_histogram.resize(bucket + 1, 0);
    ++s.size_histogram[bucket];
  }
  s.coverage = s.candidate_pairs
                   ? static_cast<double>(s.admitted_pairs) /
                         static_cast<double>(s.candidate_pairs)
                   : 0.0;
  const double all = static_cast<double>(blocks.n_a) * static_cast<double>(blocks.n_b);
  s.reduction_ratio = all > 0 ? 1.0 - static_cast<double>(s.admitted_pairs) / all : 0.0;
  return s;
}

void write_blocks(const std::filesystem::path &path, const PosthocBlockSet &blocks,
                  const std::vector<std::string> &a_ids,
                  const std::vector<std::string> &b_ids) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << "block_id,a_id,b_id,weight\n";
  for (std::size_t k = 0; k < blocks.blocks.size(); ++k)
    for (const auto &e : blocks.blocks[k].pairs)
      csv::write_row(out, {std::to_string(k), a_ids[e.a], b_ids[e.b],
                           format_exact(e.w)});
}

void write_block_summary(const std::filesystem::path &path,
                         const PosthocBlockSet &blocks) {
  const BlockSummary s = summarize_blocks(blocks);
  nlohmann::json j;
  j["blocks"] = s.blocks;
  j["admitted_pairs"] = s.admitted_pairs;
  j["candidate_pairs"] = s.candidate_pairs;
  j["a_records"] = s.a_records;
  j["b_records"] = s.b_records;
  j["largest_block"] = s.largest_block;
  j["truncated_blocks"] = s.truncated_blocks;
  j["coverage"] = s.coverage;
  j["reduction_ratio"] = s.reduction_ratio;
  j["w_min"] = blocks.w_min;
  j["max_pairs"] = blocks.max_pairs;
  nlohmann::json hist = nlohmann::json::array();
  for (std::size_t i = 0; i < s.size_histogram.size(); ++i)
    hist.push_back({{"min_pairs", std::size_t{1} << i},
                    {"max_pairs", (std::size_t{2} << i) - 1},
                    {"blocks", s.size_histogram[i]}});
  j["size_histogram"] = hist;
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

PosthocBlockSet read_blocks(const std::filesystem::path &path,
                            const std::vector<std::string> &a_ids,
                            const std::vector<std::string> &b_ids) {
  std::unordered_map<std::string, std::uint32_t> a_pos, b_pos;
  for (std::uint32_t i = 0; i < a_ids.size(); ++i)
    a_pos.emplace(a_ids[i], i);
  for (std::uint32_t i = 0; i < b_ids.size(); ++i)
    b_pos.emplace(b_ids[i], i);
  const auto doc = csv::read_file(path);
  std::map<std::size_t, std::vector<WeightEntry>> grouped;
  std::vector<long> a_block(a_ids.size(), -1), b_block(b_ids.size(), -1);
  for (std::size_t r = 1; r < doc.rows.size(); ++r) {
    const auto &row = doc.rows[r];
    const std::size_t line = doc.line_numbers[r];
    if (row.size() != 4)
      throw FormatError("block rows need block_id,a_id,b_id,weight", line);
    std::size_t id = 0;
    double w = 0.0;
    try {
      id = std::stoul(row[0]);
      w = std::stod(row[3]);
    } catch (const std::exception &) {
      throw FormatError("malformed block row", line);
    }
    auto ia = a_pos.find(row[1]);
    auto ib = b_pos.find(row[2]);
    if (ia == a_pos.end())
      throw FormatError("unknown a_id '" + row[1] + "'", line, 2);
    if (ib == b_pos.end())
      throw FormatError("unknown b_id '" + row[2] + "'", line, 3);
    for (auto [blk, node] : {std::pair{&a_block, ia->second},
                             std::pair{&b_block, ib->second}}) {
      long &slot = (*blk)[node];
      if (slot >= 0 && slot != static_cast<long>(id))
        throw FormatError("record appears in two blocks", line);
      slot = static_cast<long>(id);
    }
    grouped[id].push_back({ia->second, ib->second, w});
  }
  PosthocBlockSet set;
  set.n_a = a_ids.size();
  set.n_b = b_ids.size();
  for (auto &[id, pairs] : grouped)
    set.blocks.push_back(make_block(std::move(pairs), 0.0, false));
  set.candidate_pairs = set.admitted_pairs();
  return set;
}

} // namespace prl
