#include "qarefine/report.hpp"

#include <cstdio>

namespace qarefine {

using oj = nlohmann::ordered_json;

namespace {

oj axis_json(const AxisSummary& a) {
  return oj{{"target", a.target},
            {"before", a.before},
            {"after", a.after},
            {"jsd_before", a.jsd_before},
            {"jsd_after", a.jsd_after}};
}

AxisSummary axis_from(const oj& j) {
  AxisSummary a;
  a.target = j.at("target").get<std::map<std::string, double>>();
  a.before = j.at("before").get<std::map<std::string, double>>();
  a.after = j.at("after").get<std::map<std::string, double>>();
  a.jsd_before = j.at("jsd_before").get<double>();
  a.jsd_after = j.at("jsd_after").get<double>();
  return a;
}

oj optional_number(const std::optional<double>& v) { return v ? oj(*v) : oj(); }

std::optional<double> number_or_null(const oj& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

oj report_to_json(const RefinementReport& r) {
  oj j;
  j["status"] = r.status;
  j["failed_stage"] = r.failed_stage;
  j["error"] = r.error;
  j["strategy"] = r.strategy;
  j["seed"] = r.seed;
  j["budget_fraction"] = optional_number(r.budget_fraction);
  j["size_before"] = r.size_before;
  j["size_after"] = r.size_after;
  j["topic"] = axis_json(r.topic);
  j["difficulty"] = axis_json(r.difficulty);
  j["distractor_entropy"] = {{"before", r.distractor_entropy_before}, {"after", r.distractor_entropy_after}};
  j["plan"] = {{"solver", r.plan.solver},
               {"variables", r.plan.variables},
               {"counts", r.plan.counts},
               {"objective", r.plan.objective},
               {"spent", r.plan.spent},
               {"budget", r.plan.budget},
               {"full_cost", r.plan.full_cost},
               {"lp_bound", optional_number(r.plan.lp_bound)},
               {"delta_max", r.plan.delta_max},
               {"decisions", r.decisions}};
  j["execution"] = {{"applied", r.execution.applied},
                    {"skipped", r.execution.skipped},
                    {"added", r.execution.added},
                    {"removed", r.execution.removed},
                    {"rewritten", r.execution.rewritten}};
  const auto& v = r.validation;
  j["validation"] = {{"mode", v.mode},
                     {"validated", v.validated},
                     {"pass", v.pass},
                     {"corrected", v.corrected},
                     {"fail", v.fail},
                     {"inconclusive", v.inconclusive},
                     {"rejected", v.rejected},
                     {"correction_ratio", v.correction_ratio},
                     {"residual_error_rate", v.residual_error_rate}};
  j["tokens"] = {{"labeling", r.tokens.labeling},
                 {"probe", r.tokens.probe},
                 {"refinement", r.tokens.refinement},
                 {"validation", r.tokens.validation},
                 {"calls", r.tokens.calls}};
  j["warnings"] = r.warnings;
  oj audit = oj::array();
  for (const auto& a : r.audit)
    audit.push_back({{"sample_id", a.sample_id}, {"action", a.action}, {"outcome", a.outcome}, {"detail", a.detail}});
  j["audit"] = std::move(audit);
  return j;
}

RefinementReport report_from_json(const oj& j) {
  RefinementReport r;
  r.status = j.at("status").get<std::string>();
  r.failed_stage = j.at("failed_stage").get<std::string>();
  r.error = j.at("error").get<std::string>();
  r.strategy = j.at("strategy").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.budget_fraction = number_or_null(j.at("budget_fraction"));
  r.size_before = j.at("size_before").get<std::size_t>();
  r.size_after = j.at("size_after").get<std::size_t>();
  r.topic = axis_from(j.at("topic"));
  r.difficulty = axis_from(j.at("difficulty"));
  r.distractor_entropy_before = j.at("distractor_entropy").at("before").get<double>();
  r.distractor_entropy_after = j.at("distractor_entropy").at("after").get<double>();
  const oj& p = j.at("plan");
  r.plan.solver = p.at("solver").get<std::string>();
  r.plan.variables = p.at("variables").get<std::size_t>();
  r.plan.counts = p.at("counts").get<std::map<std::string, std::size_t>>();
  r.plan.objective = p.at("objective").get<double>();
  r.plan.spent = p.at("spent").get<double>();
  r.plan.budget = p.at("budget").get<double>();
  r.plan.full_cost = p.at("full_cost").get<double>();
  r.plan.lp_bound = number_or_null(p.at("lp_bound"));
  r.plan.delta_max = p.at("delta_max").get<double>();
  r.decisions = p.at("decisions");
  const oj& e = j.at("execution");
  r.execution.applied = e.at("applied").get<std::map<std::string, std::size_t>>();
  r.execution.skipped = e.at("skipped").get<std::map<std::string, std::size_t>>();
  r.execution.added = e.at("added").get<std::size_t>();
  r.execution.removed = e.at("removed").get<std::size_t>();
  r.execution.rewritten = e.at("rewritten").get<std::size_t>();
  const oj& v = j.at("validation");
  r.validation.mode = v.at("mode").get<std::string>();
  r.validation.validated = v.at("validated").get<std::size_t>();
  r.validation.pass = v.at("pass").get<std::size_t>();
  r.validation.corrected = v.at("corrected").get<std::size_t>();
  r.validation.fail = v.at("fail").get<std::size_t>();
  r.validation.inconclusive = v.at("inconclusive").get<std::size_t>();
  r.validation.rejected = v.at("rejected").get<std::size_t>();
  r.validation.correction_ratio = v.at("correction_ratio").get<double>();
  r.validation.residual_error_rate = v.at("residual_error_rate").get<double>();
  const oj& t = j.at("tokens");
  r.tokens.labeling = t.at("labeling").get<std::uint64_t>();
  r.tokens.probe = t.at("probe").get<std::uint64_t>();
  r.tokens.refinement = t.at("refinement").get<std::uint64_t>();
  r.tokens.validation = t.at("validation").get<std::uint64_t>();
  r.tokens.calls = t.at("calls").get<std::uint64_t>();
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  for (const auto& a : j.at("audit"))
    r.audit.push_back({a.at("sample_id").get<std::string>(), a.at("action").get<std::string>(),
                       a.at("outcome").get<std::string>(), a.at("detail").get<std::string>()});
  return r;
}

std::string render_json(const RefinementReport& r) { return report_to_json(r).dump(2) + "\n"; }

namespace {

std::string row(const std::string& label, double before, double after) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-28s %10.4f %10.4f\n", label.c_str(), before, after);
  return buf;
}

std::string row_n(const std::string& label, std::size_t before, std::size_t after) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-28s %10zu %10zu\n", label.c_str(), before, after);
  return buf;
}

}  // namespace

std::string render_table(const RefinementReport& r) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-28s %10s %10s\n", "", "Orig.", "Refined");
  out += buf;
  out += row_n("Samples", r.size_before, r.size_after);
  out += row("Coverage (JSD)", r.topic.jsd_before, r.topic.jsd_after);
  out += row("Difficulty (JSD)", r.difficulty.jsd_before, r.difficulty.jsd_after);
  out += row("Distractor entropy", r.distractor_entropy_before, r.distractor_entropy_after);
  for (const auto& [c, t] : r.topic.target) {
    auto get = [](const std::map<std::string, double>& m, const std::string& k) {
      auto it = m.find(k);
      return it == m.end() ? 0.0 : it->second;
    };
    out += row("  topic " + c, get(r.topic.before, c), get(r.topic.after, c));
  }
  for (const auto& [c, t] : r.difficulty.target) {
    auto it_b = r.difficulty.before.find(c);
    auto it_a = r.difficulty.after.find(c);
    out += row("  band " + c, it_b == r.difficulty.before.end() ? 0.0 : it_b->second,
               it_a == r.difficulty.after.end() ? 0.0 : it_a->second);
  }
  out += "\n";
  std::snprintf(buf, sizeof buf, "Plan: %s, objective %.6g, spent %.0f of %.0f tokens (C = %.0f)\n",
                r.plan.solver.empty() ? "none" : r.plan.solver.c_str(), r.plan.objective, r.plan.spent,
                r.plan.budget, r.plan.full_cost);
  out += buf;
  for (const auto& [op, n] : r.plan.counts) {
    auto a = r.execution.applied.find(op);
    std::snprintf(buf, sizeof buf, "  %s: %zu planned, %zu applied\n", op.c_str(), n,
                  a == r.execution.applied.end() ? std::size_t{0} : a->second);
    out += buf;
  }
  if (r.validation.mode != "off") {
    std::snprintf(buf, sizeof buf,
                  "Validation: %zu checked, %zu pass, %zu corrected, %zu fail, %zu inconclusive; "
                  "correction ratio %.1f%%\n",
                  r.validation.validated, r.validation.pass, r.validation.corrected, r.validation.fail,
                  r.validation.inconclusive, 100.0 * r.validation.correction_ratio);
    out += buf;
  }
  if (r.status != "ok") out += "FAILED at " + r.failed_stage + ": " + r.error + "\n";
  return out;
}

}  // namespace qarefine
