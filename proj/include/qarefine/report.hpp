#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace qarefine {

struct AxisSummary {
  std::map<std::string, double> target;
  std::map<std::string, double> before;
  std::map<std::string, double> after;
  double jsd_before = 0.0;
  double jsd_after = 0.0;
  bool operator==(const AxisSummary&) const = default;
};

struct PlanSummary {
  std::string solver;
  std::size_t variables = 0;
  std::map<std::string, std::size_t> counts;  // decisions per operation
  double objective = 0.0;
  double spent = 0.0;
  double budget = 0.0;
  double full_cost = 0.0;  // C, the cost of every sample's best operation
  std::optional<double> lp_bound;
  double delta_max = 0.0;
  bool operator==(const PlanSummary&) const = default;
};

struct ExecutionSummary {
  std::map<std::string, std::size_t> applied;
  std::map<std::string, std::size_t> skipped;
  std::size_t added = 0;
  std::size_t removed = 0;
  std::size_t rewritten = 0;
  bool operator==(const ExecutionSummary&) const = default;
};

struct ValidationSummary {
  std::string mode = "off";
  std::size_t validated = 0;
  std::size_t pass = 0;
  std::size_t corrected = 0;
  std::size_t fail = 0;
  std::size_t inconclusive = 0;
  std::size_t rejected = 0;
  double correction_ratio = 1.0;
  double residual_error_rate = 0.0;
  bool operator==(const ValidationSummary&) const = default;
};

struct TokenSummary {
  std::uint64_t labeling = 0;
  std::uint64_t probe = 0;
  std::uint64_t refinement = 0;
  std::uint64_t validation = 0;
  std::uint64_t calls = 0;
  bool operator==(const TokenSummary&) const = default;
};

struct AuditEntry {
  std::string sample_id;
  std::string action;   // r1..r5, label, rate, validate
  std::string outcome;  // applied, skipped, failed, corrected, ...
  std::string detail;
  bool operator==(const AuditEntry&) const = default;
};

struct RefinementReport {
  std::string status = "ok";  // ok | failed
  std::string failed_stage;
  std::string error;
  std::string strategy;
  std::uint64_t seed = 0;
  std::optional<double> budget_fraction;
  std::size_t size_before = 0;
  std::size_t size_after = 0;
  AxisSummary topic;
  AxisSummary difficulty;
  double distractor_entropy_before = 0.0;
  double distractor_entropy_after = 0.0;
  PlanSummary plan;
  nlohmann::ordered_json decisions = nlohmann::ordered_json::array();
  ExecutionSummary execution;
  ValidationSummary validation;
  TokenSummary tokens;
  std::vector<std::string> warnings;
  std::vector<AuditEntry> audit;

  bool operator==(const RefinementReport&) const = default;
};

nlohmann::ordered_json report_to_json(const RefinementReport& r);
RefinementReport report_from_json(const nlohmann::ordered_json& j);

// Two-space indented JSON with a trailing newline; field order is fixed.
std::string render_json(const RefinementReport& r);
// Orig./Refined table for people.
std::string render_table(const RefinementReport& r);

}  // namespace qarefine
