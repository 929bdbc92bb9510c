#pragma once

#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "qarefine/assignment.hpp"
#include "qarefine/core.hpp"
#include "qarefine/difficulty.hpp"
#include "qarefine/provider.hpp"
#include "qarefine/report.hpp"
#include "qarefine/sandbox.hpp"

namespace qarefine {

struct ProviderSettings {
  std::string kind = "mock";  // mock | http
  std::uint64_t mock_seed = 0;
  double mock_reliability = 1.0;
  std::string base_url;
  std::string model;
  std::string embedding_model;
  std::string api_key_env;
  std::string replay;  // recorded exchanges served instead of the network
  int max_retries = 3;
  int max_in_flight = 8;
};

enum class Strategy { RefineLab, Greedy, Uniform };
std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view s);  // throws ConfigError

enum class ValidationMode { Off, On, InBudget };
std::string_view validation_mode_name(ValidationMode m);

struct RunConfig {
  std::string dataset_path;
  std::string seeds_path;
  std::string domain = "general knowledge";
  Taxonomy taxonomy;
  TargetSpec targets;
  std::optional<double> budget_fraction;
  std::optional<double> budget_tokens;
  Strategy strategy = Strategy::RefineLab;
  EloConfig elo;
  ProviderSettings provider;
  std::uint64_t seed = 0;
  std::size_t pilot_batch = kPilotBatch;
  ValidationMode validation = ValidationMode::Off;
  std::string retrieval_cache;
  std::string retrieval_url;
  SandboxConfig sandbox;
  std::size_t expansion_candidates = 3;
  double dedup_threshold = 0.95;
  std::size_t distractors = 3;
  double alpha = 0.5;
  std::string prompts_dir;  // empty: the shipped templates
  std::size_t exact_cap = kExactCap;
  std::size_t validation_workers = 4;
  bool offline = false;

  // Relative paths resolve against `base_dir`. Throws ConfigError.
  static RunConfig from_json(const nlohmann::json& j, const std::string& base_dir = ".");
  static RunConfig load(const std::string& path);
  void validate() const;
};

struct RunOutcome {
  RefinementReport report;
  std::optional<Dataset> refined;  // absent when a stage failed
  nlohmann::ordered_json timing;   // wall-clock seconds per stage
  // Exception category of the failure, for exit codes: "", "provider",
  // "config" or "stage".
  std::string failure_kind;
};

// Builds the configured provider. Offline runs refuse live HTTP.
std::unique_ptr<Provider> make_provider(const RunConfig& cfg);

// The whole refinement round. Configuration problems found before any stage
// starts are thrown as ConfigError; later failures come back as a report
// with status "failed".
RunOutcome run(const RunConfig& cfg, Provider* provider = nullptr);

// dataset.jsonl, report.json, report.txt and timing.json under `out_dir`.
// The dataset is only written when the run succeeded.
void write_outputs(const RunOutcome& outcome, const std::string& out_dir);

// Metrics-only report of a dataset against targets.
RefinementReport measure(const Dataset& d, const TargetSpec& targets);

}  // namespace qarefine
