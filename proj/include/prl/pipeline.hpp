#pragma once

#include "prl/blocking.hpp"
#include "prl/comparators.hpp"
#include "prl/estimates.hpp"
#include "prl/mcmc.hpp"
#include "prl/model.hpp"
#include "prl/records.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace prl {

/// Invalid or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Upstream artifacts missing or produced under a different configuration
/// (CLI exit code 3).
class StaleManifestError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class Stage { compare, weights, block, sample, summarize, estimate };
std::string to_string(Stage s);
Stage parse_stage(const std::string &s);
const std::vector<Stage> &all_stages();

struct WeightsConfig {
  std::string method = "maximal";  // maximal | penalized | em
  double theta = 0.0;               // penalized only
  double min_gap = 0.01;
  double tol = 1e-6;
  std::size_t max_iter = 200;
  std::size_t restarts = 3;
  double pseudo_m_total = 10.0;
  double pseudo_u_per_level = 1.0;
  bool u_correction = true;
  std::uint64_t seed = 1;
};

struct McmcConfig {
  std::size_t iterations = 1000;
  std::size_t burn_in = 100;
  std::uint64_t seed = 1;
  KernelPolicy policy;
  bool strict_sequential = true;
  std::size_t params_every = 10;
  std::size_t check_every = 100;
  bool sample_params = true;
  bool u_correction = true;
};

struct EstimateConfig {
  double threshold = 0.5;
  std::vector<std::pair<std::string, std::unordered_map<std::string, double>>>
      false_match_rates;
  std::vector<StratumLabels> strata;
  std::optional<double> jaro_lambda;
};

struct SyntheticSpec {
  std::size_t n_a = 1000;
  std::size_t n_b = 1000;
  std::size_t overlap = 700;
  std::uint64_t seed = 1;
};

struct PipelineConfig {
  std::filesystem::path config_path;
  std::filesystem::path output_dir;
  std::filesystem::path file_a;
  std::filesystem::path file_b;
  FieldSchema schema;  // layout of the input files
  bool normalize = true;
  bool filter = false;
  std::vector<ComparatorSpec> comparators;
  std::vector<IndexClause> indexing;  // empty = all pairs
  PriorSpec prior;
  WeightsConfig weights;
  BlockingOptions blocking;
  McmcConfig mcmc;
  EstimateConfig estimate;
  std::optional<SyntheticSpec> synthetic;
  nlohmann::json raw;

  /// Schema of the records the compare stage writes.
  FieldSchema stored_schema() const;
};

/// Parses a JSON configuration. Relative paths resolve against the config
/// file's directory; `output_override` replaces output_dir. Throws
/// ConfigError with the offending key on any invalid setting.
PipelineConfig load_config(const std::filesystem::path &path,
                           const std::optional<std::filesystem::path> &output_override = {});
PipelineConfig parse_config(const nlohmann::json &j,
                            const std::filesystem::path &base_dir);

struct RunOptions {
  unsigned threads = 1;
  std::optional<std::size_t> burn_in;  // overrides mcmc.burn_in downstream
  bool force = false;                  // re-run even when up to date
};

struct StageOutcome {
  Stage stage = Stage::compare;
  bool skipped = false;
  double seconds = 0.0;
};

/// Runs one stage after checking that every upstream stage is present and
/// current. A stage whose inputs, configuration and outputs are unchanged
/// is skipped. Throws StaleManifestError or ConfigError as documented.
StageOutcome run_stage(const PipelineConfig &config, Stage stage,
                       const RunOptions &options = {});
std::vector<StageOutcome> run_pipeline(const PipelineConfig &config,
                                       const RunOptions &options = {});

/// Writes the synthetic files named by the config (plus truth.csv next to
/// file A). Throws ConfigError when the config has no synthetic section.
void write_synthetic(const PipelineConfig &config);

/// Hash of the configuration that a stage depends on.
std::string stage_config_hash(const PipelineConfig &config, Stage stage,
                              const RunOptions &options = {});

} // namespace prl
