#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qarefine/core.hpp"
#include "qarefine/rng.hpp"

namespace qarefine {

// r1 topic removal, r2 expansion, r3 difficulty removal, r4 generation at a
// difficulty, r5 distractor rewriting.
enum class Op { R1 = 0, R2 = 1, R3 = 2, R4 = 3, R5 = 4 };
inline constexpr std::array<Op, 5> kOps = {Op::R1, Op::R2, Op::R3, Op::R4, Op::R5};
std::string_view op_name(Op op);
Op parse_op(std::string_view s);

// Per-sample target z_i; an empty string means the axis has no
// underrepresented bin.
struct Target {
  std::string topic;
  std::string band;
  bool operator==(const Target&) const = default;
};

std::vector<Target> sample_targets(const std::map<std::string, double>& topic_gaps,
                                   const std::map<std::string, double>& band_gaps, std::size_t n, Rng& rng);

struct Entry {
  std::size_t sample = 0;
  Op op = Op::R1;
  double delta = 0.0;
  double cost = 0.0;
};

struct AssignmentInstance {
  std::vector<std::string> sample_ids;
  std::vector<Target> targets;
  // Admissible (i, k) pairs grouped by sample and ordered by op inside a
  // group. This order is also the coordinate order of decision vectors.
  std::vector<Entry> entries;
  double budget = 0.0;

  std::size_t num_samples() const { return sample_ids.size(); }
  void validate() const;
  // [begin, end) of each sample's entries.
  std::vector<std::pair<std::size_t, std::size_t>> groups() const;
  double delta_max() const;
};

enum class SolverKind { Exact, LpGreedy, Greedy, Uniform };
std::string_view solver_name(SolverKind k);

struct Plan {
  // Index into instance.entries per sample, or -1 for no operation.
  std::vector<long> choice;
  double objective = 0.0;
  double spent = 0.0;
  SolverKind solver = SolverKind::Exact;
  std::optional<double> lp_bound;
  double delta_max = 0.0;

  std::vector<int> decision_vector(const AssignmentInstance& inst) const;
  // Throws if exclusivity or the budget is violated or the objective does
  // not match the recomputed dot product.
  void check(const AssignmentInstance& inst) const;
};

Plan make_plan(const AssignmentInstance& inst, std::vector<long> choice, SolverKind kind);

inline constexpr std::size_t kExactCap = 24;

// Branch and bound with LP pruning. Among optimal plans it returns the one
// with the lexicographically smallest decision vector. Refuses instances
// with more than `cap` decision variables.
Plan solve_exact(const AssignmentInstance& inst, std::size_t cap = kExactCap);

struct LpSolution {
  std::vector<long> integral;  // entry index per sample, -1 for none
  // The one increment taken partially, if any: sample, entry it upgrades
  // from (-1 for none), entry it upgrades to, and the fraction taken.
  struct Fractional {
    std::size_t sample = 0;
    long from = -1;
    long to = -1;
    double fraction = 0.0;
  };
  std::optional<Fractional> fractional;
  double bound = 0.0;
  // Increments in the order the greedy considered them, for the fill pass.
  struct Increment {
    std::size_t sample;
    long from;
    long to;
    double ddelta;
    double dcost;
  };
  std::vector<Increment> order;
};

LpSolution solve_lp_greedy(const AssignmentInstance& inst);

// Drops the fractional increment, then keeps taking increments that still
// fit, in the LP's efficiency order.
Plan round_lp(const AssignmentInstance& inst, const LpSolution& lp);

Plan baseline_greedy(const AssignmentInstance& inst);
Plan baseline_uniform(const AssignmentInstance& inst, Rng& rng);

// Cost of applying each sample's best positive-gain operation.
double compute_C(const AssignmentInstance& inst);

nlohmann::ordered_json plan_to_json(const AssignmentInstance& inst, const Plan& plan);

// ---- gain estimation -------------------------------------------------------

// Category counts on both axes, aligned with the objective's category lists.
struct AxisCounts {
  std::vector<double> topic;
  std::vector<double> band;
  double total() const;
};

// Weighted sum of the two axis divergences, each scaled by its value at the
// start of the round so that both axes count equally.
struct Objective {
  std::vector<std::string> topic_categories;  // taxonomy ids then OTHER
  std::vector<double> topic_target;
  std::vector<double> band_target;
  double topic_weight = 1.0;
  double band_weight = 1.0;

  static Objective make(const Taxonomy& tax, const TargetSpec& targets, const AxisCounts& start);
  double topic_jsd(const AxisCounts& c) const;
  double band_jsd(const AxisCounts& c) const;
  double value(const AxisCounts& c) const;
  std::size_t topic_index(const std::string& topic) const;
};

AxisCounts counts_of(const std::vector<QASample>& samples, const Objective& obj,
                     const std::vector<bool>* alive = nullptr);

// Count change an operation causes on both axes.
struct Effect {
  std::vector<double> topic;
  std::vector<double> band;
  bool empty() const;
  Effect& operator+=(const Effect& o);
};

Effect zero_effect(const Objective& obj);

// Average objective reduction per application along the path that applies
// `e` `steps` times (steps < 1 is treated as 1).
double chord_gain(const Objective& obj, const AxisCounts& at, const Effect& e, double steps);

// True when applying `e` strictly lowers the objective without raising the
// divergence on `own`, the axis the operation is meant to fix. The other
// axis may get worse as long as the weighted sum still drops.
bool improves(const Objective& obj, const AxisCounts& at, const Effect& e, Axis own);

Axis axis_of(Op op);

// Result of trying an operation on one sample without committing it.
struct TrialOutcome {
  Effect effect;
  double tokens = 0.0;
  bool failed = false;
};

// Runs operators in dry-run mode for pilot estimation.
class TrialRunner {
 public:
  virtual ~TrialRunner() = default;
  virtual TrialOutcome trial(const QASample& s, Op op, const Target& z) = 0;
};

struct PilotKey {
  Op op;
  std::string target;   // bin the operation moves mass toward or away from
  std::string stratum;  // source topic '|' source band
  bool operator<(const PilotKey& o) const {
    return std::tie(op, target, stratum) < std::tie(o.op, o.target, o.stratum);
  }
};

struct PilotEstimate {
  PilotKey key;
  std::vector<std::string> batch_ids;
  double mean_gain = 0.0;
  double mean_cost = 0.0;
  std::size_t batch_size() const { return batch_ids.size(); }
  bool flagged = false;  // every trial failed
};

inline constexpr std::size_t kPilotBatch = 8;
inline constexpr double kRemovalCost = 1.0;

struct EstimationContext {
  const Objective& objective;
  const AxisCounts& snapshot;
  const std::vector<QASample>& samples;
  std::size_t expansion_count = 3;
};

// Gain and cost of `op` toward `z` on samples of one stratum: the mean over
// the batch of each trial's chord gain and token cost.
PilotEstimate estimate(const PilotKey& key, const Target& z, const std::vector<std::size_t>& batch,
                       TrialRunner& runner, const EstimationContext& ctx);

// Gap-closing step count for an observed or predicted effect.
double steps_to_close(const Objective& obj, const AxisCounts& at, Op op, const Target& z, const Effect& e,
                      const QASample& s);

struct AdmissibleOps {
  std::vector<Op> ops;
};

AdmissibleOps admissible(const QASample& s, const Target& z, const std::map<std::string, double>& topic_gaps,
                         const std::map<std::string, double>& band_gaps);

PilotKey pilot_key(const QASample& s, Op op, const Target& z);

// Fills Δ_ik and c_ik from the estimate of each pair's pilot key.
AssignmentInstance build_instance(const std::vector<QASample>& samples, const std::vector<Target>& targets,
                                  const std::vector<AdmissibleOps>& ops,
                                  const std::map<PilotKey, PilotEstimate>& estimates, double budget);

}  // namespace qarefine
