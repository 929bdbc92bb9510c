// refine: command-line front end for the refinement engine.
//
//   refine run --config cfg.json --out outdir [--strategy S] [--budget-frac F] [--seed N] [--offline]
//   refine metrics --dataset data.jsonl --targets targets.json [--json]
//   refine validate --dataset data.jsonl [--config cfg.json] [--out fixed.jsonl]

#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "qarefine/pipeline.hpp"
#include "qarefine/validator.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kProviderError = 3;
constexpr int kStageFailure = 4;

using namespace qarefine;

int exit_code_for(const std::string& kind) {
  if (kind.empty()) return kOk;
  if (kind == "provider") return kProviderError;
  if (kind == "config") return kConfigError;
  return kStageFailure;
}

// Taxonomy and targets from a standalone file, or from a full run config.
std::pair<Taxonomy, TargetSpec> load_targets(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("targets file '" + path + "' is not valid JSON: " + e.what());
  }
  nlohmann::json cfg = {{"dataset", "-"}, {"seeds", "-"}, {"seed", 0}};
  if (!j.contains("taxonomy")) throw ConfigError("targets file needs a 'taxonomy'");
  cfg["taxonomy"] = j["taxonomy"];
  if (j.contains("targets")) cfg["targets"] = j["targets"];
  RunConfig rc = RunConfig::from_json(cfg);
  rc.taxonomy.validate();
  rc.targets.validate(rc.taxonomy);
  return {rc.taxonomy, rc.targets};
}

int cmd_run(const std::string& config, const std::string& out_dir, const std::string& strategy,
            double budget_frac, long long seed, bool offline) {
  RunConfig cfg = RunConfig::load(config);
  if (!strategy.empty()) cfg.strategy = parse_strategy(strategy);
  if (budget_frac > 0) {
    cfg.budget_fraction = budget_frac;
    cfg.budget_tokens.reset();
  }
  if (seed >= 0) {
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.provider.mock_seed = cfg.seed;
  }
  if (offline) cfg.offline = true;
  RunOutcome outcome = run(cfg);
  write_outputs(outcome, out_dir);
  std::cout << render_table(outcome.report);
  return exit_code_for(outcome.failure_kind);
}

int cmd_metrics(const std::string& dataset, const std::string& targets, bool as_json) {
  auto [taxonomy, spec] = load_targets(targets);
  Dataset d = load_dataset(dataset, taxonomy);
  RefinementReport r = measure(d, spec);
  std::cout << (as_json ? render_json(r) : render_table(r));
  return kOk;
}

int cmd_validate(const std::string& dataset, const std::string& config, const std::string& out, bool offline) {
  RunConfig cfg;
  if (!config.empty()) {
    cfg = RunConfig::load(config);
  } else {
    // Without a config the taxonomy is whatever topics the file uses, and
    // routing falls back to the classifier.
    std::set<std::string> topics;
    std::istringstream in(read_file(dataset));
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n)
      if (line.find_first_not_of(" \t\r") != std::string::npos) topics.insert(sample_from_jsonl(line, n).topic);
    topics.erase("");
    topics.erase(kOtherTopic);
    for (const auto& t : topics) cfg.taxonomy.topics.push_back({t, t, "", ""});
    if (cfg.taxonomy.topics.empty()) cfg.taxonomy.topics.push_back({"general", "general", "", ""});
  }
  if (offline) cfg.offline = true;
  if (cfg.offline && !cfg.retrieval_url.empty()) throw ConfigError("offline runs cannot use live retrieval");
  Dataset d = load_dataset(dataset, cfg.taxonomy);
  auto provider = make_provider(cfg);
  Sandbox sandbox(cfg.sandbox);
  std::unique_ptr<Retriever> retriever;
  if (!cfg.retrieval_url.empty())
    retriever = std::make_unique<HttpRetriever>(make_httplib_transport(cfg.retrieval_url));
  else if (!cfg.retrieval_cache.empty())
    retriever = FixtureCacheRetriever::from_file(cfg.retrieval_cache);
  else
    retriever = std::make_unique<FixtureCacheRetriever>(nlohmann::json::object());
  ValidatorContext ctx{*provider, cfg.taxonomy, sandbox, *retriever, cfg.domain};
  auto results = validate_all(d.samples, ctx, cfg.validation_workers);
  CorrectionTally t = apply_corrections(d.samples, results);
  for (const auto& r : results)
    if (r.verdict != Verdict::Pass)
      std::cout << r.sample_id << "\t" << route_name(r.route) << "\t" << verdict_name(r.verdict) << "\n";
  std::printf("validated %zu: %zu pass, %zu corrected, %zu fail, %zu inconclusive, %zu rejected\n",
              t.validated(), t.pass, t.corrected, t.fail, t.inconclusive, t.rejected);
  std::printf("correction ratio %.1f%%, residual error rate %.1f%%\n", 100 * t.correction_ratio(),
              100 * t.residual_error_rate());
  if (!out.empty()) save_dataset(out, d);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Budget-aware refinement of multiple-choice QA datasets"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  std::string config, out_dir, strategy, dataset, targets;
  double budget_frac = -1;
  long long seed = -1;
  bool offline = false, as_json = false;

  auto* run_cmd = app.add_subcommand("run", "Refine a dataset end to end");
  run_cmd->add_option("--config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--out", out_dir, "Output directory")->required();
  run_cmd->add_option("--strategy", strategy, "refinelab, greedy or uniform");
  run_cmd->add_option("--budget-frac", budget_frac, "Budget as a fraction of C");
  run_cmd->add_option("--seed", seed, "Override the configured seed");
  run_cmd->add_flag("--offline", offline, "Refuse any network access");

  auto* metrics_cmd = app.add_subcommand("metrics", "Report alignment metrics only");
  metrics_cmd->add_option("--dataset", dataset, "Dataset (JSONL)")->required()->check(CLI::ExistingFile);
  metrics_cmd->add_option("--targets", targets, "Taxonomy and targets (JSON)")->required()->check(CLI::ExistingFile);
  metrics_cmd->add_flag("--json", as_json, "Emit JSON instead of a table");

  auto* validate_cmd = app.add_subcommand("validate", "Check and correct answer keys only");
  validate_cmd->add_option("--dataset", dataset, "Dataset (JSONL)")->required()->check(CLI::ExistingFile);
  validate_cmd->add_option("--config", config, "Provider, taxonomy and retrieval settings");
  validate_cmd->add_option("--out", out_dir, "Where to write the corrected dataset");
  validate_cmd->add_flag("--offline", offline, "Refuse any network access");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);

  try {
    if (*run_cmd) return cmd_run(config, out_dir, strategy, budget_frac, seed, offline);
    if (*metrics_cmd) return cmd_metrics(dataset, targets, as_json);
    if (*validate_cmd) return cmd_validate(dataset, config, out_dir, offline);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kConfigError;
  } catch (const SchemaError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DistributionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ProviderUnavailable& e) {
    std::cerr << "provider error: " << e.what() << "\n";
    return kProviderError;
  } catch (const ProviderRejected& e) {
    std::cerr << "provider error: " << e.what() << "\n";
    return kProviderError;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStageFailure;
  }
  return kOk;
}
