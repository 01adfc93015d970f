#include "prl/csv.hpp"
#include "prl/mcmc.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <ostream>
#include <unordered_map>

namespace prl {

TraceWriter::TraceWriter(std::ostream &out, std::vector<std::string> a_ids,
                         std::vector<std::string> b_ids,
                         std::vector<std::string> fields)
    : out_(out), a_ids_(std::move(a_ids)), b_ids_(std::move(b_ids)),
      fields_(std::move(fields)) {}

void TraceWriter::check() {
  if (!out_)
    throw std::runtime_error("trace write failed");
}

void TraceWriter::header(std::uint64_t seed, const std::string &config_hash) {
  out_ << "# seed=" << seed << "\n"
       << "# config_hash=" << config_hash << "\n"
       << "# n_a=" << a_ids_.size() << "\n"
       << "# n_b=" << b_ids_.size() << "\n";
  check();
}

void TraceWriter::iteration(std::size_t iter, double log_posterior,
                            std::size_t links, std::span<const RecordPair> added,
                            std::span<const RecordPair> removed) {
  out_ << iter << ',' << format_exact(log_posterior) << ',' << links << '\n';
  for (const auto &l : removed)
    out_ << '-' << csv::quote(a_ids_[l.a]) << ',' << csv::quote(b_ids_[l.b]) << '\n';
  for (const auto &l : added)
    out_ << '+' << csv::quote(a_ids_[l.a]) << ',' << csv::quote(b_ids_[l.b]) << '\n';
  check();
}

void TraceWriter::params(const ModelParams &params) {
  for (std::size_t f = 0; f < fields_.size(); ++f)
    for (std::size_t h = 0; h < params.m[f].size(); ++h)
      out_ << csv::quote(fields_[f]) << ',' << h + 1 << ','
           << format_exact(params.m[f][h]) << ',' << format_exact(params.u[f][h])
           << '\n';
  check();
}

TraceHeader replay_trace(
    const std::filesystem::path &path, const std::vector<std::string> &a_ids,
    const std::vector<std::string> &b_ids, const std::vector<std::string> &fields,
    const std::vector<int> &n_levels,
    const std::function<void(const TraceIteration &, const BipartiteMatching &,
                             const ModelParams *)> &callback) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot read " + path.string());
  std::unordered_map<std::string, std::uint32_t> a_pos, b_pos;
  for (std::uint32_t i = 0; i < a_ids.size(); ++i)
    a_pos.emplace(a_ids[i], i);
  for (std::uint32_t i = 0; i < b_ids.size(); ++i)
    b_pos.emplace(b_ids[i], i);

  TraceHeader header;
  BipartiteMatching matching(a_ids.size(), b_ids.size());
  ModelParams latest, pending;
  bool have_params = false, in_params = false, have_iter = false;
  TraceIteration current;
  std::size_t line_no = 0;

  auto flush = [&] {
    if (in_params) {
      pending.validate(n_levels);
      latest = pending;
      have_params = true;
      in_params = false;
    }
    if (!have_iter)
      return;
    if (matching.size() != current.links)
      throw FormatError("iteration " + std::to_string(current.iter) + " declares " +
                            std::to_string(current.links) + " links but replay has " +
                            std::to_string(matching.size()),
                        line_no);
    callback(current, matching, have_params ? &latest : nullptr);
  };

  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        continue;
      std::string key = line.substr(1, eq - 1);
      key.erase(0, key.find_first_not_of(' '));
      const std::string value = line.substr(eq + 1);
      try {
        if (key == "seed")
          header.seed = std::stoull(value);
        else if (key == "config_hash")
          header.config_hash = value;
        else if (key == "n_a")
          header.n_a = std::stoul(value);
        else if (key == "n_b")
          header.n_b = std::stoul(value);
      } catch (const std::exception &) {
        throw FormatError("malformed trace header", line_no);
      }
      continue;
    }
    if (line[0] == '+' || line[0] == '-') {
      const auto row = csv::split_line(std::string_view(line).substr(1), line_no);
      if (row.size() != 2)
        throw FormatError("link delta needs a_id,b_id", line_no);
      auto ia = a_pos.find(row[0]);
      auto ib = b_pos.find(row[1]);
      if (ia == a_pos.end() || ib == b_pos.end())
        throw FormatError("link delta names an unknown record", line_no);
      try {
        if (line[0] == '+')
          matching.link(ia->second, ib->second);
        else
          matching.unlink(ia->second, ib->second);
      } catch (const std::logic_error &e) {
        throw FormatError(e.what(), line_no);
      }
      continue;
    }
    const auto row = csv::split_line(line, line_no);
    if (std::isdigit(static_cast<unsigned char>(line[0]))) {
      if (row.size() != 3)
        throw FormatError("iteration rows need iter,logpost,L", line_no);
      flush();
      try {
        current.iter = std::stoul(row[0]);
        current.log_posterior = std::stod(row[1]);
        current.links = std::stoul(row[2]);
      } catch (const std::exception &) {
        throw FormatError("malformed iteration row", line_no);
      }
      have_iter = true;
      continue;
    }
    if (row.size() != 4)
      throw FormatError("parameter rows need field,level,m,u", line_no);
    auto it = std::find(fields.begin(), fields.end(), row[0]);
    if (it == fields.end())
      throw FormatError("parameter row for unknown field '" + row[0] + "'", line_no, 1);
    if (!in_params) {
      pending = ModelParams::uniform(n_levels);
      in_params = true;
    }
    const auto f = static_cast<std::size_t>(it - fields.begin());
    try {
      const int h = std::stoi(row[1]);
      if (h < 1 || h > n_levels[f])
        throw FormatError("parameter level out of range", line_no, 2);
      pending.m[f][static_cast<std::size_t>(h - 1)] = std::stod(row[2]);
      pending.u[f][static_cast<std::size_t>(h - 1)] = std::stod(row[3]);
    } catch (const FormatError &) {
      throw;
    } catch (const std::exception &) {
      throw FormatError("malformed parameter row", line_no);
    }
  }
  flush();
  return header;
}

} // namespace prl
