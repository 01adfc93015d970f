#include "prl/pipeline.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

namespace {

constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kStale = 3;
constexpr int kRuntime = 4;

struct Args {
  std::string config;
  unsigned threads = 1;
  std::optional<std::size_t> burn_in;
  bool force = false;
};

prl::PipelineConfig load(const Args &args) {
  std::optional<std::filesystem::path> out;
  if (const char *env = std::getenv("PRL_OUTPUT_DIR"); env && *env)
    out = std::filesystem::path(env);
  return prl::load_config(args.config, out);
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"prl: probabilistic record linkage with posterior sampling"};
  app.require_subcommand(1);
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");
  app.add_flag("-q,--quiet", quiet, "warnings and errors only");

  Args args;
  std::vector<std::pair<CLI::App *, std::optional<prl::Stage>>> commands;
  auto add = [&](const std::string &name, const std::string &help,
                 std::optional<prl::Stage> stage, bool burn_in) {
    CLI::App *sub = app.add_subcommand(name, help);
    sub->fallthrough();
    sub->add_option("config", args.config, "pipeline configuration (JSON)")->required();
    if (name != "synth") {
      sub->add_option("--threads", args.threads, "worker threads")
          ->check(CLI::Range(1u, 1024u));
      sub->add_flag("--force", args.force, "re-run even when up to date");
    }
    if (burn_in)
      sub->add_option("--burn-in", args.burn_in, "iterations to discard");
    commands.emplace_back(sub, stage);
  };
  using prl::Stage;
  add("compare", "index pairs and compute comparison patterns", Stage::compare, false);
  add("weights", "estimate match weights", Stage::weights, false);
  add("block", "build post-hoc blocks", Stage::block, false);
  add("sample", "run the restricted sampler", Stage::sample, false);
  add("summarize", "posterior link probabilities and point estimate", Stage::summarize,
      true);
  add("estimate", "switch rates and false-match-rate reports", Stage::estimate, true);
  add("run", "all stages in order", std::nullopt, true);
  add("synth", "write the synthetic input files named by the config", std::nullopt, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  spdlog::set_level(verbose ? spdlog::level::debug
                            : quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    const prl::PipelineConfig config = load(args);
    prl::RunOptions opts;
    opts.threads = args.threads;
    opts.burn_in = args.burn_in;
    opts.force = args.force;
    for (const auto &[sub, stage] : commands) {
      if (!sub->parsed())
        continue;
      if (sub->get_name() == "synth") {
        prl::write_synthetic(config);
      } else if (stage) {
        const auto r = prl::run_stage(config, *stage, opts);
        if (!r.skipped)
          spdlog::info("{} finished in {:.2f}s", prl::to_string(r.stage), r.seconds);
      } else {
        for (const auto &r : prl::run_pipeline(config, opts))
          if (!r.skipped)
            spdlog::info("{} finished in {:.2f}s", prl::to_string(r.stage), r.seconds);
      }
    }
  } catch (const prl::ConfigError &e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const prl::StaleManifestError &e) {
    spdlog::error("stale upstream: {}", e.what());
    return kStale;
  } catch (const std::exception &e) {
    spdlog::error("{}", e.what());
    return kRuntime;
  }
  return kOk;
}
