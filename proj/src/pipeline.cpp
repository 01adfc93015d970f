#include "prl/pipeline.hpp"

#include "prl/csv.hpp"
#include "prl/synthetic.hpp"
#include "prl/weights.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>

namespace prl {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Stage s) {
  switch (s) {
  case Stage::compare:
    return "compare";
  case Stage::weights:
    return "weights";
  case Stage::block:
    return "block";
  case Stage::sample:
    return "sample";
  case Stage::summarize:
    return "summarize";
  case Stage::estimate:
    return "estimate";
  }
  return "?";
}

const std::vector<Stage> &all_stages() {
  static const std::vector<Stage> stages{Stage::compare, Stage::weights,
                                         Stage::block,   Stage::sample,
                                         Stage::summarize, Stage::estimate};
  return stages;
}

Stage parse_stage(const std::string &s) {
  for (Stage st : all_stages())
    if (to_string(st) == s)
      return st;
  throw ConfigError("unknown stage '" + s + "'");
}

FieldSchema PipelineConfig::stored_schema() const {
  return normalize ? FieldSchema::canonical() : schema;
}

// ------------------------------------------------------------------ config

namespace {

template <class T>
T get_or(const json &j, const char *key, T fallback, const std::string &where) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null())
    return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception &) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

const json &section(const json &j, const char *key) {
  static const json empty = json::object();
  if (!j.contains(key))
    return empty;
  if (!j.at(key).is_object())
    throw ConfigError(std::string(key) + " must be an object");
  return j.at(key);
}

fs::path resolve(const fs::path &base, const std::string &p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void require(bool ok, const std::string &message) {
  if (!ok)
    throw ConfigError(message);
}

} // namespace

PipelineConfig parse_config(const json &j, const fs::path &base_dir) {
  if (!j.is_object())
    throw ConfigError("configuration must be a JSON object");
  PipelineConfig c;
  c.raw = j;

  const json &files = section(j, "files");
  require(files.contains("a") && files.contains("b"),
          "files.a and files.b are required");
  c.file_a = resolve(base_dir, get_or<std::string>(files, "a", "", "files"));
  c.file_b = resolve(base_dir, get_or<std::string>(files, "b", "", "files"));
  c.output_dir = resolve(base_dir, get_or<std::string>(j, "output_dir", "out", "config"));

  if (j.contains("schema")) {
    const json &s = section(j, "schema");
    c.schema.id_column = get_or<std::string>(s, "id_column", "id", "schema");
    c.schema.missing_token = get_or<std::string>(s, "missing_token", "", "schema");
    require(s.contains("fields") && s.at("fields").is_array(),
            "schema.fields must be a list");
    for (const auto &f : s.at("fields")) {
      FieldDef def;
      def.name = get_or<std::string>(f, "name", "", "schema.fields");
      require(!def.name.empty(), "schema.fields entries need a name");
      try {
        def.role = parse_field_role(get_or<std::string>(f, "role", "other", "schema.fields"));
      } catch (const std::exception &e) {
        throw ConfigError("schema.fields." + def.name + ": " + e.what());
      }
      c.schema.fields.push_back(def);
    }
  } else {
    c.schema = FieldSchema::canonical();
  }
  try {
    c.schema.validate();
  } catch (const std::exception &e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
  c.normalize = get_or<bool>(j, "normalize", true, "config");
  c.filter = get_or<bool>(j, "filter", false, "config");

  if (j.contains("comparators")) {
    require(j.at("comparators").is_array(), "comparators must be a list");
    for (const auto &cj : j.at("comparators")) {
      const auto field = get_or<std::string>(cj, "field", "", "comparators");
      ComparatorSpec spec;
      try {
        const auto kind = parse_comparator_kind(
            get_or<std::string>(cj, "kind", "", "comparators." + field));
        switch (kind) {
        case ComparatorKind::jaro_winkler:
          spec = ComparatorSpec::jaro_winkler(field);
          break;
        case ComparatorKind::padded_levenshtein:
          spec = ComparatorSpec::padded_levenshtein(field);
          break;
        case ComparatorKind::exact:
          spec = ComparatorSpec::exact(field);
          break;
        case ComparatorKind::middle_name_hybrid:
          spec = ComparatorSpec::middle_name(field);
          break;
        }
        if (cj.contains("cut_points")) {
          spec.cut_points = get_or<std::vector<double>>(cj, "cut_points", {},
                                                        "comparators." + field);
          spec.n_levels = static_cast<int>(spec.cut_points.size()) + 2;
        }
        spec.validate();
      } catch (const ConfigError &) {
        throw;
      } catch (const std::exception &e) {
        throw ConfigError("comparators." + field + ": " + e.what());
      }
      c.comparators.push_back(std::move(spec));
    }
  } else {
    c.comparators = default_comparators();
  }
  const FieldSchema stored = c.stored_schema();
  for (const auto &spec : c.comparators)
    require(stored.index_of(spec.field).has_value(),
            "comparator field '" + spec.field + "' is not in the schema");

  if (j.contains("indexing")) {
    require(j.at("indexing").is_array(), "indexing must be a list");
    for (const auto &ij : j.at("indexing")) {
      IndexClause clause;
      clause.field = get_or<std::string>(ij, "field", "", "indexing");
      clause.prefix_length = get_or<std::size_t>(ij, "prefix_length", 3, "indexing");
      require(stored.index_of(clause.field).has_value(),
              "indexing field '" + clause.field + "' is not in the schema");
      require(clause.prefix_length > 0, "indexing.prefix_length must be positive");
      if (ij.contains("exceptions"))
        for (const auto &ej : ij.at("exceptions"))
          clause.exceptions.push_back(
              {get_or<std::string>(ej, "prefix", "", "indexing.exceptions"),
               get_or<std::size_t>(ej, "prefix_length", 4, "indexing.exceptions")});
      c.indexing.push_back(std::move(clause));
    }
  }

  c.prior = default_prior(c.comparators);
  const json &pj = section(j, "prior");
  c.prior.alpha = get_or<double>(pj, "alpha", 1.0, "prior");
  c.prior.beta = get_or<double>(pj, "beta", 1.0, "prior");
  for (const char *side : {"alpha_m", "alpha_u"}) {
    if (!pj.contains(side))
      continue;
    for (const auto &[field, values] : pj.at(side).items()) {
      auto it = std::find_if(c.comparators.begin(), c.comparators.end(),
                             [&](const auto &s) { return s.field == field; });
      require(it != c.comparators.end(),
              std::string("prior.") + side + " names unknown field '" + field + "'");
      const auto f = static_cast<std::size_t>(it - c.comparators.begin());
      auto &target = std::string(side) == "alpha_m" ? c.prior.alpha_m[f] : c.prior.alpha_u[f];
      try {
        target = values.get<std::vector<double>>();
      } catch (const json::exception &) {
        throw ConfigError(std::string("prior.") + side + "." + field + " must be a list");
      }
    }
  }
  std::vector<int> levels;
  for (const auto &s : c.comparators)
    levels.push_back(s.n_levels);
  try {
    c.prior.validate(levels);
  } catch (const std::exception &e) {
    throw ConfigError(std::string("prior: ") + e.what());
  }

  const json &wj = section(j, "weights");
  auto &w = c.weights;
  w.method = get_or<std::string>(wj, "method", w.method, "weights");
  require(w.method == "maximal" || w.method == "penalized" || w.method == "em",
          "weights.method must be maximal, penalized or em");
  w.theta = get_or<double>(wj, "theta", w.theta, "weights");
  w.min_gap = get_or<double>(wj, "min_gap", w.min_gap, "weights");
  w.tol = get_or<double>(wj, "tol", w.tol, "weights");
  w.max_iter = get_or<std::size_t>(wj, "max_iter", w.max_iter, "weights");
  w.restarts = get_or<std::size_t>(wj, "restarts", w.restarts, "weights");
  w.pseudo_m_total = get_or<double>(wj, "pseudo_m_total", w.pseudo_m_total, "weights");
  w.pseudo_u_per_level =
      get_or<double>(wj, "pseudo_u_per_level", w.pseudo_u_per_level, "weights");
  w.u_correction = get_or<bool>(wj, "u_correction", w.u_correction, "weights");
  w.seed = get_or<std::uint64_t>(wj, "seed", w.seed, "weights");
  require(w.min_gap > 0, "weights.min_gap must be positive");
  require(w.tol > 0, "weights.tol must be positive");
  require(w.restarts >= 1, "weights.restarts must be at least 1");
  require(w.pseudo_m_total >= 0 && w.pseudo_u_per_level >= 0,
          "weights pseudo-counts must be non-negative");

  const json &bj = section(j, "blocking");
  c.blocking.w_min = get_or<double>(bj, "w_min", 0.0, "blocking");
  c.blocking.max_pairs = get_or<std::size_t>(bj, "max_pairs", 10000, "blocking");
  c.blocking.split_quantile = get_or<double>(bj, "split_quantile", 0.25, "blocking");
  require(std::isfinite(c.blocking.w_min), "blocking.w_min must be finite");
  require(c.blocking.max_pairs >= 1, "blocking.max_pairs must be at least 1");
  require(c.blocking.split_quantile > 0 && c.blocking.split_quantile < 1,
          "blocking.split_quantile must lie in (0,1)");

  const json &mj = section(j, "mcmc");
  auto &m = c.mcmc;
  m.iterations = get_or<std::size_t>(mj, "iterations", m.iterations, "mcmc");
  m.burn_in = get_or<std::size_t>(mj, "burn_in", m.burn_in, "mcmc");
  m.seed = get_or<std::uint64_t>(mj, "seed", m.seed, "mcmc");
  m.policy.gibbs_max_matchings = get_or<std::size_t>(
      mj, "gibbs_max_matchings", m.policy.gibbs_max_matchings, "mcmc");
  m.policy.lb_max_pairs =
      get_or<std::size_t>(mj, "lb_max_pairs", m.policy.lb_max_pairs, "mcmc");
  if (mj.contains("kernel")) {
    try {
      m.policy.force = parse_kernel_kind(get_or<std::string>(mj, "kernel", "", "mcmc"));
    } catch (const std::invalid_argument &e) {
      throw ConfigError(std::string("mcmc.kernel: ") + e.what());
    }
  }
  m.strict_sequential = get_or<bool>(mj, "strict_sequential", m.strict_sequential, "mcmc");
  m.params_every = get_or<std::size_t>(mj, "params_every", m.params_every, "mcmc");
  m.check_every = get_or<std::size_t>(mj, "check_every", m.check_every, "mcmc");
  m.sample_params = get_or<bool>(mj, "sample_params", m.sample_params, "mcmc");
  m.u_correction = get_or<bool>(mj, "u_correction", m.u_correction, "mcmc");
  require(m.iterations >= 1, "mcmc.iterations must be at least 1");
  require(m.burn_in < m.iterations, "mcmc.burn_in must be below mcmc.iterations");
  require(m.policy.gibbs_max_matchings >= 1 && m.policy.lb_max_pairs >= 1,
          "mcmc kernel thresholds must be positive");

  const json &ej = section(j, "estimate");
  auto &e = c.estimate;
  e.threshold = get_or<double>(ej, "threshold", e.threshold, "estimate");
  require(e.threshold >= 0.5 && e.threshold <= 1.0,
          "estimate.threshold must lie in [0.5, 1]");
  if (ej.contains("false_match_rates"))
    for (const auto &[label, rates] : ej.at("false_match_rates").items()) {
      std::unordered_map<std::string, double> by_group;
      for (const auto &[group, v] : rates.items()) {
        require(v.is_number(), "estimate.false_match_rates values must be numbers");
        const double pf = v.get<double>();
        require(pf >= 0 && pf < 1, "false-match rates must lie in [0,1)");
        by_group[group] = pf;
      }
      e.false_match_rates.emplace_back(label, std::move(by_group));
    }
  if (ej.contains("strata"))
    for (const auto &sj : ej.at("strata"))
      e.strata.push_back({get_or<std::string>(sj, "name", "", "estimate.strata"),
                          get_or<std::uint64_t>(sj, "fm", 0, "estimate.strata"),
                          get_or<std::uint64_t>(sj, "tm", 0, "estimate.strata"),
                          get_or<std::uint64_t>(sj, "nd", 0, "estimate.strata"),
                          get_or<std::uint64_t>(sj, "size", 0, "estimate.strata")});
  if (ej.contains("jaro_lambda"))
    e.jaro_lambda = get_or<double>(ej, "jaro_lambda", 0.0, "estimate");

  if (j.contains("synthetic")) {
    const json &sj = section(j, "synthetic");
    SyntheticSpec s;
    s.n_a = get_or<std::size_t>(sj, "n_a", s.n_a, "synthetic");
    s.n_b = get_or<std::size_t>(sj, "n_b", s.n_b, "synthetic");
    s.overlap = get_or<std::size_t>(sj, "overlap", s.overlap, "synthetic");
    s.seed = get_or<std::uint64_t>(sj, "seed", s.seed, "synthetic");
    require(s.overlap <= std::min(s.n_a, s.n_b),
            "synthetic.overlap exceeds a file size");
    c.synthetic = s;
  }
  return c;
}

PipelineConfig load_config(const fs::path &path,
                           const std::optional<fs::path> &output_override) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error &e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  PipelineConfig c = parse_config(j, fs::absolute(path).parent_path());
  c.config_path = path;
  if (output_override)
    c.output_dir = *output_override;
  return c;
}

// ---------------------------------------------------------------- manifest

namespace {

struct StageSpec {
  std::vector<Stage> upstream;
  std::vector<std::string> outputs;
};

StageSpec spec_of(Stage s) {
  switch (s) {
  case Stage::compare:
    return {{}, {"records_a.csv", "records_b.csv", "patterns.csv", "pairs.csv", "tallies.csv"}};
  case Stage::weights:
    return {{Stage::compare}, {"weights.csv", "weights_report.json", "params_init.csv"}};
  case Stage::block:
    return {{Stage::compare, Stage::weights}, {"blocks.csv", "blocks_summary.json"}};
  case Stage::sample:
    return {{Stage::compare, Stage::weights, Stage::block}, {"trace.txt"}};
  case Stage::summarize:
    return {{Stage::compare, Stage::sample},
            {"link_probs.csv", "point_estimate.csv", "summary.json"}};
  case Stage::estimate:
    return {{Stage::compare, Stage::weights, Stage::sample},
            {"switch_rates.csv", "estimate.json"}};
  }
  return {};
}

std::vector<Stage> ancestors(Stage s) {
  std::set<Stage> seen;
  std::vector<Stage> todo = spec_of(s).upstream;
  while (!todo.empty()) {
    Stage x = todo.back();
    todo.pop_back();
    if (!seen.insert(x).second)
      continue;
    for (Stage y : spec_of(x).upstream)
      todo.push_back(y);
  }
  return {seen.begin(), seen.end()};
}

std::size_t effective_burn_in(const PipelineConfig &c, const RunOptions &o) {
  return o.burn_in.value_or(c.mcmc.burn_in);
}

json raw_or_null(const json &j, const char *key) {
  return j.contains(key) ? j.at(key) : json();
}

fs::path manifest_path(const PipelineConfig &c) { return c.output_dir / "manifest.json"; }

json read_manifest(const PipelineConfig &c) {
  std::ifstream in(manifest_path(c));
  if (!in)
    return json{{"stages", json::object()}};
  try {
    json j = json::parse(in);
    if (!j.contains("stages"))
      j["stages"] = json::object();
    return j;
  } catch (const json::parse_error &) {
    throw StaleManifestError("manifest " + manifest_path(c).string() +
                             " is corrupt; delete it and re-run `prl run`");
  }
}

void write_manifest(const PipelineConfig &c, const json &m) {
  std::ofstream out(manifest_path(c));
  if (!out)
    throw std::runtime_error("cannot write " + manifest_path(c).string());
  out << m.dump(2) << "\n";
}

json input_hashes(const PipelineConfig &c, Stage s) {
  json inputs = json::object();
  if (s == Stage::compare) {
    inputs["file_a"] = hash_file(c.file_a);
    inputs["file_b"] = hash_file(c.file_b);
    return inputs;
  }
  for (Stage up : spec_of(s).upstream)
    for (const auto &name : spec_of(up).outputs)
      inputs[name] = hash_file(c.output_dir / name);
  return inputs;
}

void check_upstream(const PipelineConfig &c, Stage s, const json &manifest,
                    const RunOptions &o) {
  const json &stages = manifest.at("stages");
  for (Stage x : ancestors(s)) {
    const std::string name = to_string(x);
    if (!stages.contains(name))
      throw StaleManifestError("stage '" + name + "' has not been run; run `prl " +
                               name + "` (or `prl run`) first");
    const json &entry = stages.at(name);
    if (entry.value("config_hash", "") != stage_config_hash(c, x, o))
      throw StaleManifestError("configuration for stage '" + name +
                               "' changed since it ran; re-run `prl " + name +
                               "` (or `prl run`)");
    for (const auto &[file, h] : entry.at("outputs").items()) {
      const fs::path p = c.output_dir / file;
      if (!fs::exists(p))
        throw StaleManifestError("artifact " + p.string() + " is missing; re-run `prl " +
                                 name + "`");
      if (hash_file(p) != h.get<std::string>())
        throw StaleManifestError("artifact " + p.string() +
                                 " changed since stage '" + name + "' wrote it; re-run `prl " +
                                 name + "`");
    }
    if (x == Stage::compare) {
      const json now = input_hashes(c, x);
      if (entry.at("inputs") != now)
        throw StaleManifestError("input files changed since `prl compare` ran; re-run it");
      continue;
    }
    for (Stage up : spec_of(x).upstream) {
      const json &up_out = stages.at(to_string(up)).at("outputs");
      for (const auto &[file, h] : up_out.items())
        if (entry.at("inputs").value(file, "") != h.get<std::string>())
          throw StaleManifestError("stage '" + name + "' ran on older output of '" +
                                   to_string(up) + "'; re-run `prl " + name + "`");
    }
  }
}

bool up_to_date(const PipelineConfig &c, Stage s, const json &manifest,
                const RunOptions &o) {
  const json &stages = manifest.at("stages");
  const std::string name = to_string(s);
  if (!stages.contains(name))
    return false;
  const json &entry = stages.at(name);
  if (entry.value("config_hash", "") != stage_config_hash(c, s, o))
    return false;
  if (entry.at("inputs") != input_hashes(c, s))
    return false;
  for (const auto &file : spec_of(s).outputs) {
    const fs::path p = c.output_dir / file;
    if (!fs::exists(p) || !entry.at("outputs").contains(file) ||
        entry.at("outputs").at(file).get<std::string>() != hash_file(p))
      return false;
  }
  return true;
}

// ------------------------------------------------------------------ stages

struct Loaded {
  RecordTable a, b;
  std::vector<std::string> a_ids, b_ids;
};

Loaded load_stored_records(const PipelineConfig &c) {
  Loaded l;
  l.a = load_records(c.output_dir / "records_a.csv", c.stored_schema(), FileLabel::A);
  l.b = load_records(c.output_dir / "records_b.csv", c.stored_schema(), FileLabel::B);
  l.a_ids = l.a.ids();
  l.b_ids = l.b.ids();
  return l;
}

std::vector<std::string> comparator_fields(const PipelineConfig &c) {
  std::vector<std::string> out;
  for (const auto &s : c.comparators)
    out.push_back(s.field);
  return out;
}

std::vector<int> comparator_levels(const PipelineConfig &c) {
  std::vector<int> out;
  for (const auto &s : c.comparators)
    out.push_back(s.n_levels);
  return out;
}

void write_json(const fs::path &path, const json &j) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json params_json(const PipelineConfig &c, const ModelParams &p) {
  json out = json::object();
  for (std::size_t f = 0; f < c.comparators.size(); ++f)
    out[c.comparators[f].field] = {{"m", p.m[f]}, {"u", p.u[f]}};
  return out;
}

void stage_compare(const PipelineConfig &c, const RunOptions &o) {
  for (const auto &p : {c.file_a, c.file_b})
    if (!fs::exists(p))
      throw ConfigError("input file " + p.string() + " does not exist");
  RecordTable a = load_records(c.file_a, c.schema, FileLabel::A);
  RecordTable b = load_records(c.file_b, c.schema, FileLabel::B);
  if (c.normalize) {
    a = normalize_table(a);
    b = normalize_table(b);
  }
  if (c.filter) {
    a = filter_records(a);
    b = filter_records(b);
  }
  write_records(c.output_dir / "records_a.csv", a);
  write_records(c.output_dir / "records_b.csv", b);
  const PairIndex index =
      c.indexing.empty() ? full_index(a.size(), b.size()) : index_pairs(a, b, c.indexing);
  const PatternTable patterns = build_pattern_table(a, b, index, c.comparators, o.threads);
  const UCorrectionTallies tallies =
      marginal_frequency_tallies(a, b, patterns, c.comparators, o.threads);
  write_pattern_table(c.output_dir / "patterns.csv", patterns);
  write_pair_map(c.output_dir / "pairs.csv", index, patterns, a.ids(), b.ids());
  write_tallies(c.output_dir / "tallies.csv", tallies);
  spdlog::info("compare: {} x {} records, {} indexed pairs, {} patterns", a.size(),
               b.size(), index.size(), patterns.patterns.size());
}

struct ComparisonData {
  Loaded records;
  ComparisonArtifacts cmp;
  UCorrectionTallies tallies;
};

ComparisonData load_comparisons(const PipelineConfig &c) {
  ComparisonData d;
  d.records = load_stored_records(c);
  d.cmp = read_comparisons(c.output_dir / "patterns.csv", c.output_dir / "pairs.csv",
                           d.records.a_ids, d.records.b_ids);
  d.tallies = read_tallies(c.output_dir / "tallies.csv", d.cmp.patterns,
                           static_cast<std::uint64_t>(d.records.a_ids.size()) *
                               d.records.b_ids.size());
  return d;
}

void stage_weights(const PipelineConfig &c, const RunOptions &o) {
  const ComparisonData d = load_comparisons(c);
  const auto &patterns = d.cmp.patterns;
  const auto &index = d.cmp.index;
  const auto &wc = c.weights;
  const ModelParams init = default_initial_params(patterns, c.prior, &d.tallies);

  PenalizedOptions fit;
  fit.pseudo_counts = default_pseudo_counts(c.prior, wc.pseudo_m_total, wc.pseudo_u_per_level);
  fit.tol = wc.tol;
  fit.max_iter = wc.max_iter;
  fit.restarts = wc.restarts;
  fit.seed = wc.seed;
  fit.use_u_correction = wc.u_correction;
  fit.lsap.threads = o.threads;

  json report;
  report["method"] = wc.method;
  report["pairs"] = index.size();
  report["patterns"] = patterns.patterns.size();
  SparseWeightMatrix w;
  w.n_a = index.n_a;
  w.n_b = index.n_b;
  ModelParams fitted;
  auto expand = [&](const std::vector<double> &pw) {
    for (std::size_t k = 0; k < index.pairs.size(); ++k) {
      const double x = pw[patterns.pair_pattern[k]];
      if (std::isfinite(x))
        w.entries.push_back({index.pairs[k].a, index.pairs[k].b, x});
    }
  };
  if (wc.method == "maximal") {
    SweepOptions sweep;
    sweep.min_gap = wc.min_gap;
    sweep.fit = fit;
    const MaximalWeights mw = maximal_weights(patterns, index, &d.tallies, init, sweep);
    w = mw.weights;
    fitted = mw.steps.front().params;
    json steps = json::array();
    for (const auto &s : mw.steps)
      steps.push_back({{"theta", s.theta},
                       {"links", s.links},
                       {"objective", s.objective},
                       {"iterations", s.iterations}});
    report["steps"] = steps;
  } else if (wc.method == "penalized") {
    const PenalizedFit pf = penalized_mle(patterns, index, &d.tallies, wc.theta, init, fit);
    fitted = pf.params;
    expand(pattern_weights_extended(patterns, fitted));
    report["theta"] = wc.theta;
    report["links"] = pf.matching.size();
    report["objective_trace"] = pf.objective_trace;
  } else {
    EmOptions em;
    em.tol = wc.tol;
    em.max_iter = std::max<std::size_t>(wc.max_iter, 1);
    em.pseudo_counts = fit.pseudo_counts;
    em.use_u_correction = wc.u_correction;
    const double pi0 = std::clamp(
        static_cast<double>(std::min(index.n_a, index.n_b)) /
            std::max(1.0, static_cast<double>(index.size())),
        1e-4, 0.5);
    const MixtureEstimate est = em_fellegi_sunter(patterns, &d.tallies, init, pi0, em);
    fitted = est.params;
    expand(pattern_weights_extended(patterns, fitted));
    report["pi"] = est.pi;
    report["loglik_trace"] = est.loglik_trace;
    report["converged"] = est.converged;
  }
  report["params"] = params_json(c, fitted);
  write_weights(c.output_dir / "weights.csv", w, d.records.a_ids, d.records.b_ids);
  write_params(c.output_dir / "params_init.csv", comparator_fields(c), fitted);
  write_json(c.output_dir / "weights_report.json", report);
  spdlog::info("weights: {} weighted pairs ({})", w.size(), wc.method);
}

void stage_block(const PipelineConfig &c, const RunOptions &o) {
  const Loaded l = load_stored_records(c);
  const SparseWeightMatrix w = read_weights(c.output_dir / "weights.csv", l.a_ids, l.b_ids);
  BlockingOptions opts = c.blocking;
  opts.threads = o.threads;
  const PosthocBlockSet blocks = build_posthoc_blocks(w, opts);
  write_blocks(c.output_dir / "blocks.csv", blocks, l.a_ids, l.b_ids);
  write_block_summary(c.output_dir / "blocks_summary.json", blocks);
  spdlog::info("block: {} blocks, {} admitted pairs", blocks.blocks.size(),
               blocks.admitted_pairs());
}

void stage_sample(const PipelineConfig &c, const RunOptions &o) {
  const ComparisonData d = load_comparisons(c);
  const PosthocBlockSet blocks =
      read_blocks(c.output_dir / "blocks.csv", d.records.a_ids, d.records.b_ids);
  const ModelParams init = read_params(c.output_dir / "params_init.csv",
                                       comparator_fields(c), comparator_levels(c));
  McmcOptions mo;
  mo.iterations = c.mcmc.iterations;
  mo.seed = c.mcmc.seed;
  mo.policy = c.mcmc.policy;
  mo.sample_params = c.mcmc.sample_params;
  mo.parallel = !c.mcmc.strict_sequential;
  mo.threads = o.threads;
  mo.check_every = c.mcmc.check_every;
  mo.params_every = c.mcmc.params_every;
  mo.use_u_correction = c.mcmc.u_correction;

  const fs::path path = c.output_dir / "trace.txt";
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  TraceWriter trace(out, d.records.a_ids, d.records.b_ids, comparator_fields(c));
  trace.header(c.mcmc.seed, stage_config_hash(c, Stage::sample, o));
  const McmcResult res = run_restricted_mcmc(blocks, d.cmp.patterns, d.cmp.index,
                                             &d.tallies, c.prior, init, mo, &trace);
  out.close();
  if (!out)
    throw std::runtime_error("trace write failed");
  spdlog::info("sample: {} iterations, final L = {}, acceptance {:.3f}",
               mo.iterations, res.final_state.matching.size(),
               res.proposals ? static_cast<double>(res.accepted) / res.proposals : 0.0);
}

void stage_summarize(const PipelineConfig &c, const RunOptions &o) {
  const Loaded l = load_stored_records(c);
  const std::size_t burn_in = effective_burn_in(c, o);
  const PosteriorSummary s =
      posterior_link_probabilities(c.output_dir / "trace.txt", l.a_ids, l.b_ids,
                                   comparator_fields(c), comparator_levels(c), burn_in);
  const BipartiteMatching point = bayes_point_estimate(s, c.estimate.threshold);
  write_link_probabilities(c.output_dir / "link_probs.csv", s, l.a_ids, l.b_ids);
  write_matching(c.output_dir / "point_estimate.csv", point, l.a_ids, l.b_ids);
  std::vector<double> links(s.link_counts.begin(), s.link_counts.end());
  const DistributionSummary ls = summarize_samples(links);
  json j;
  j["burn_in"] = burn_in;
  j["retained"] = s.retained;
  j["links"] = {{"mean", ls.mean}, {"q025", ls.q025}, {"median", ls.q500}, {"q975", ls.q975}};
  j["threshold"] = c.estimate.threshold;
  j["point_estimate_links"] = point.size();
  if (s.params_mean)
    j["params_mean"] = params_json(c, *s.params_mean);
  write_json(c.output_dir / "summary.json", j);
  spdlog::info("summarize: {} retained iterations, mean L = {:.1f}", s.retained, ls.mean);
}

void stage_estimate(const PipelineConfig &c, const RunOptions &o) {
  const Loaded l = load_stored_records(c);
  const std::size_t burn_in = effective_burn_in(c, o);
  json j;
  j["burn_in"] = burn_in;

  std::vector<FieldValue> a_party(l.a.size()), b_party(l.b.size());
  const bool has_party = l.a.schema.index_of(FieldRole::party).has_value();
  for (std::size_t i = 0; i < l.a.size(); ++i)
    a_party[i] = l.a.value(i, FieldRole::party);
  for (std::size_t i = 0; i < l.b.size(); ++i)
    b_party[i] = l.b.value(i, FieldRole::party);
  const RecordTable *ta = &l.a, *tb = &l.b;
  auto mover = [ta, tb](std::uint32_t a, std::uint32_t b) {
    return is_mover(ta->value(a, FieldRole::street_name), ta->value(a, FieldRole::street_number),
                    tb->value(b, FieldRole::street_name), tb->value(b, FieldRole::street_number));
  };
  std::vector<Subgroup> groups{
      {"all", [](std::uint32_t, std::uint32_t) { return true; }},
      {"female",
       [ta](std::uint32_t a, std::uint32_t) {
         const auto &v = ta->value(a, FieldRole::female);
         return v && *v == "1";
       }},
      {"mover", mover},
      {"non_mover", [mover](std::uint32_t a, std::uint32_t b) { return !mover(a, b); }}};
  SwitchRateOptions so;
  so.adjustments = c.estimate.false_match_rates;
  SwitchRateAccumulator acc(a_party, b_party, groups, so);
  std::size_t kept = 0;
  replay_trace(c.output_dir / "trace.txt", l.a_ids, l.b_ids, comparator_fields(c),
               comparator_levels(c),
               [&](const TraceIteration &it, const BipartiteMatching &m, const ModelParams *) {
                 if (it.iter <= burn_in)
                   return;
                 ++kept;
                 if (has_party)
                   acc.add(m);
               });
  if (kept == 0)
    throw ConfigError("burn-in of " + std::to_string(burn_in) +
                      " leaves no iterations in the trace");
  write_switch_rates(c.output_dir / "switch_rates.csv", acc.result());
  json groups_json = json::array();
  for (const auto &p : acc.result()) {
    const DistributionSummary s = summarize_samples(p.switch_rate);
    groups_json.push_back({{"subgroup", p.name},
                           {"samples", p.switch_rate.size()},
                           {"missing", p.missing},
                           {"mean", s.mean},
                           {"q025", s.q025},
                           {"q975", s.q975}});
  }
  j["switch_rates"] = groups_json;
  j["party_field"] = has_party;

  if (!c.estimate.strata.empty()) {
    json fmr = json::array();
    std::vector<FmrEstimate> rows;
    for (NdPolicy p : {NdPolicy::exclude, NdPolicy::as_false}) {
      try {
        for (auto &r : stratified_fmr(c.estimate.strata, p))
          rows.push_back(r);
      } catch (const std::invalid_argument &e) {
        throw ConfigError(std::string("estimate.strata: ") + e.what());
      }
    }
    write_fmr_report(c.output_dir / "fmr_report.csv", rows);
    for (const auto &r : rows)
      fmr.push_back({{"stratum", r.stratum}, {"policy", to_string(r.policy)},
                     {"estimate", r.estimate}, {"lo", r.lo}, {"hi", r.hi}});
    j["false_match_rate"] = fmr;
  }
  if (c.estimate.jaro_lambda) {
    const SparseWeightMatrix w = read_weights(c.output_dir / "weights.csv", l.a_ids, l.b_ids);
    LsapOptions lo;
    lo.threads = o.threads;
    const BipartiteMatching jm = corrected_jaro_estimate(w, *c.estimate.jaro_lambda, lo);
    write_matching(c.output_dir / "jaro_estimate.csv", jm, l.a_ids, l.b_ids);
    j["jaro_links"] = jm.size();
  }
  write_json(c.output_dir / "estimate.json", j);
}

} // namespace

std::string stage_config_hash(const PipelineConfig &c, Stage s, const RunOptions &o) {
  const json &r = c.raw;
  json j;
  switch (s) {
  case Stage::compare:
    j = {{"files", raw_or_null(r, "files")},       {"schema", raw_or_null(r, "schema")},
         {"normalize", raw_or_null(r, "normalize")}, {"filter", raw_or_null(r, "filter")},
         {"comparators", raw_or_null(r, "comparators")},
         {"indexing", raw_or_null(r, "indexing")}};
    break;
  case Stage::weights:
    j = {{"weights", raw_or_null(r, "weights")}, {"prior", raw_or_null(r, "prior")}};
    break;
  case Stage::block:
    j = {{"blocking", raw_or_null(r, "blocking")}};
    break;
  case Stage::sample: {
    json m = raw_or_null(r, "mcmc");
    if (m.is_object())
      m.erase("burn_in");
    j = {{"mcmc", m}, {"prior", raw_or_null(r, "prior")}};
    break;
  }
  case Stage::summarize:
    j = {{"burn_in", effective_burn_in(c, o)}, {"threshold", c.estimate.threshold}};
    break;
  case Stage::estimate:
    j = {{"burn_in", effective_burn_in(c, o)}, {"estimate", raw_or_null(r, "estimate")}};
    break;
  }
  return hash_string(j.dump());
}

StageOutcome run_stage(const PipelineConfig &c, Stage s, const RunOptions &o) {
  fs::create_directories(c.output_dir);
  json manifest = read_manifest(c);
  check_upstream(c, s, manifest, o);
  StageOutcome outcome;
  outcome.stage = s;
  if (!o.force && up_to_date(c, s, manifest, o)) {
    outcome.skipped = true;
    spdlog::info("{}: up to date", to_string(s));
    return outcome;
  }
  const json inputs = input_hashes(c, s);
  const auto t0 = std::chrono::steady_clock::now();
  switch (s) {
  case Stage::compare:
    stage_compare(c, o);
    break;
  case Stage::weights:
    stage_weights(c, o);
    break;
  case Stage::block:
    stage_block(c, o);
    break;
  case Stage::sample:
    stage_sample(c, o);
    break;
  case Stage::summarize:
    stage_summarize(c, o);
    break;
  case Stage::estimate:
    stage_estimate(c, o);
    break;
  }
  outcome.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json outputs = json::object();
  for (const auto &file : spec_of(s).outputs)
    outputs[file] = hash_file(c.output_dir / file);
  json entry = {{"config_hash", stage_config_hash(c, s, o)},
                {"inputs", inputs},
                {"outputs", outputs},
                {"seconds", outcome.seconds}};
  if (s == Stage::sample)
    entry["seed"] = c.mcmc.seed;
  if (s == Stage::weights)
    entry["seed"] = c.weights.seed;
  manifest["stages"][to_string(s)] = entry;
  write_manifest(c, manifest);
  return outcome;
}

std::vector<StageOutcome> run_pipeline(const PipelineConfig &c, const RunOptions &o) {
  std::vector<StageOutcome> out;
  for (Stage s : all_stages())
    out.push_back(run_stage(c, s, o));
  return out;
}

void write_synthetic(const PipelineConfig &c) {
  if (!c.synthetic)
    throw ConfigError("config has no synthetic section");
  const auto &s = *c.synthetic;
  const SyntheticFiles files = generate_synthetic_files(
      SyntheticConfig::moderate(s.n_a, s.n_b, s.overlap), s.seed);
  for (const auto &p : {c.file_a, c.file_b})
    if (p.has_parent_path())
      fs::create_directories(p.parent_path());
  write_records(c.file_a, files.a);
  write_records(c.file_b, files.b);
  std::ofstream truth(c.file_a.parent_path() / "truth.csv");
  if (!truth)
    throw std::runtime_error("cannot write truth.csv");
  truth << "a_id,b_id\n";
  for (const auto &[ra, rb] : files.truth)
    csv::write_row(truth, {files.a.records[ra].id, files.b.records[rb].id});
}

} // namespace prl
