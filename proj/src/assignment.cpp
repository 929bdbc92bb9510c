#include "qarefine/assignment.hpp"

#include <algorithm>
#include <cmath>

#include "qarefine/metrics.hpp"

namespace qarefine {

namespace {

// Gaps this small are rounding noise from normalizing counts.
constexpr double kGapEps = 1e-12;

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::R1: return "r1";
    case Op::R2: return "r2";
    case Op::R3: return "r3";
    case Op::R4: return "r4";
    case Op::R5: return "r5";
  }
  return "?";
}

Op parse_op(std::string_view s) {
  for (Op op : kOps)
    if (op_name(op) == s) return op;
  throw ArgumentError("unknown operation '" + std::string(s) + "'");
}

std::vector<Target> sample_targets(const std::map<std::string, double>& topic_gaps,
                                   const std::map<std::string, double>& band_gaps, std::size_t n, Rng& rng) {
  auto positive = [](const std::map<std::string, double>& gaps, bool skip_other) {
    std::pair<std::vector<std::string>, std::vector<double>> out;
    for (const auto& [c, g] : gaps) {
      if (skip_other && c == kOtherTopic) continue;
      if (g > kGapEps) {
        out.first.push_back(c);
        out.second.push_back(g);
      }
    }
    return out;
  };
  auto [topics, tw] = positive(topic_gaps, true);
  auto [bands, bw] = positive(band_gaps, false);
  if (topics.empty() && bands.empty()) return {};
  std::vector<Target> out(n);
  for (auto& z : out) {
    if (!topics.empty()) z.topic = topics[rng.weighted(tw)];
    if (!bands.empty()) z.band = bands[rng.weighted(bw)];
  }
  return out;
}

void AssignmentInstance::validate() const {
  if (targets.size() != sample_ids.size()) throw ArgumentError("targets and samples differ in length");
  if (!(budget >= 0.0)) throw ArgumentError("budget must be nonnegative");
  std::size_t last = 0;
  int last_op = -1;
  for (const auto& e : entries) {
    if (e.sample >= sample_ids.size()) throw ArgumentError("entry refers to a missing sample");
    if (e.sample < last || (e.sample == last && static_cast<int>(e.op) <= last_op))
      throw ArgumentError("entries must be ordered by sample then operation, without repeats");
    if (!(e.cost > 0.0)) throw ArgumentError("entry costs must be positive");
    if (!std::isfinite(e.delta)) throw ArgumentError("entry gain is not finite");
    last_op = static_cast<int>(e.op);
    last = e.sample;
  }
}

std::vector<std::pair<std::size_t, std::size_t>> AssignmentInstance::groups() const {
  std::vector<std::pair<std::size_t, std::size_t>> g(sample_ids.size(), {0, 0});
  std::size_t j = 0;
  for (std::size_t i = 0; i < sample_ids.size(); ++i) {
    g[i].first = j;
    while (j < entries.size() && entries[j].sample == i) ++j;
    g[i].second = j;
  }
  return g;
}

double AssignmentInstance::delta_max() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.delta);
  return m;
}

std::string_view solver_name(SolverKind k) {
  switch (k) {
    case SolverKind::Exact: return "exact";
    case SolverKind::LpGreedy: return "lp_greedy";
    case SolverKind::Greedy: return "greedy";
    case SolverKind::Uniform: return "uniform";
  }
  return "?";
}

std::vector<int> Plan::decision_vector(const AssignmentInstance& inst) const {
  std::vector<int> x(inst.entries.size(), 0);
  for (long c : choice)
    if (c >= 0) x[static_cast<std::size_t>(c)] = 1;
  return x;
}

void Plan::check(const AssignmentInstance& inst) const {
  if (choice.size() != inst.num_samples()) throw ArgumentError("plan does not cover every sample");
  double obj = 0.0, cost = 0.0;
  for (std::size_t i = 0; i < choice.size(); ++i) {
    long c = choice[i];
    if (c < 0) continue;
    if (static_cast<std::size_t>(c) >= inst.entries.size() || inst.entries[c].sample != i)
      throw ArgumentError("plan picks an entry of another sample");
    obj += inst.entries[c].delta;
    cost += inst.entries[c].cost;
  }
  if (cost > inst.budget * (1 + 1e-12) + 1e-9) throw ArgumentError("plan exceeds the budget");
  if (std::abs(obj - objective) > 1e-9 * std::max(1.0, std::abs(obj)))
    throw ArgumentError("plan objective does not match its decisions");
}

Plan make_plan(const AssignmentInstance& inst, std::vector<long> choice, SolverKind kind) {
  Plan p;
  p.choice = std::move(choice);
  p.solver = kind;
  p.delta_max = inst.delta_max();
  for (std::size_t i = 0; i < p.choice.size(); ++i) {
    if (p.choice[i] < 0) continue;
    p.objective += inst.entries[p.choice[i]].delta;
    p.spent += inst.entries[p.choice[i]].cost;
  }
  p.check(inst);
  return p;
}

double compute_C(const AssignmentInstance& inst) {
  double total = 0.0;
  for (auto [b, e] : inst.groups()) {
    long best = -1;
    for (std::size_t j = b; j < e; ++j)
      if (inst.entries[j].delta > 0 && (best < 0 || inst.entries[j].delta > inst.entries[best].delta))
        best = static_cast<long>(j);
    if (best >= 0) total += inst.entries[best].cost;
  }
  return total;
}

nlohmann::ordered_json plan_to_json(const AssignmentInstance& inst, const Plan& plan) {
  nlohmann::ordered_json j;
  j["solver"] = solver_name(plan.solver);
  j["objective"] = plan.objective;
  j["spent"] = plan.spent;
  j["budget"] = inst.budget;
  j["delta_max"] = plan.delta_max;
  j["lp_bound"] = plan.lp_bound ? nlohmann::ordered_json(*plan.lp_bound) : nlohmann::ordered_json();
  auto& list = j["decisions"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < plan.choice.size(); ++i) {
    if (plan.choice[i] < 0) continue;
    const Entry& e = inst.entries[plan.choice[i]];
    const Target& z = inst.targets[i];
    std::string target = (e.op == Op::R2) ? z.topic : (e.op == Op::R4 || e.op == Op::R5) ? z.band : "";
    list.push_back({{"sample_id", inst.sample_ids[i]},
                    {"op", op_name(e.op)},
                    {"target", target},
                    {"delta", e.delta},
                    {"cost", e.cost}});
  }
  return j;
}

// ---- gain estimation -------------------------------------------------------

double AxisCounts::total() const {
  double t = 0.0;
  for (double v : topic) t += v;
  return t;
}

namespace {

double axis_jsd(const std::vector<double>& counts, const std::vector<double>& target) {
  double total = 0.0;
  for (double v : counts) total += std::max(0.0, v);
  if (total <= 0.0) return 1.0;
  std::vector<double> p(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) p[i] = std::max(0.0, counts[i]) / total;
  return jsd_bits(p, target);
}

AxisCounts shifted(const AxisCounts& at, const Effect& e, double times) {
  AxisCounts out = at;
  for (std::size_t i = 0; i < out.topic.size(); ++i) out.topic[i] = std::max(0.0, out.topic[i] + times * e.topic[i]);
  for (std::size_t i = 0; i < out.band.size(); ++i) out.band[i] = std::max(0.0, out.band[i] + times * e.band[i]);
  return out;
}

}  // namespace

Objective Objective::make(const Taxonomy& tax, const TargetSpec& targets, const AxisCounts& start) {
  Objective o;
  o.topic_categories = tax.topic_ids();
  o.topic_categories.push_back(kOtherTopic);
  for (const auto& c : o.topic_categories) o.topic_target.push_back(targets.topic_target.at(c));
  for (Band b : kBands) o.band_target.push_back(targets.difficulty_target.at(std::string(band_name(b))));
  if (start.topic.size() != o.topic_target.size() || start.band.size() != o.band_target.size())
    throw ArgumentError("axis counts do not match the taxonomy");
  // An axis that is already aligned still gets a finite, large weight so
  // that operations disturbing it are penalized.
  o.topic_weight = 1.0 / std::max(o.topic_jsd(start), 1e-3);
  o.band_weight = 1.0 / std::max(o.band_jsd(start), 1e-3);
  return o;
}

double Objective::topic_jsd(const AxisCounts& c) const { return axis_jsd(c.topic, topic_target); }
double Objective::band_jsd(const AxisCounts& c) const { return axis_jsd(c.band, band_target); }

double Objective::value(const AxisCounts& c) const {
  return topic_weight * topic_jsd(c) + band_weight * band_jsd(c);
}

std::size_t Objective::topic_index(const std::string& topic) const {
  const std::string& key = topic.empty() ? kOtherTopic : topic;
  for (std::size_t i = 0; i < topic_categories.size(); ++i)
    if (topic_categories[i] == key) return i;
  return topic_categories.size() - 1;  // unknown labels count as OTHER
}

AxisCounts counts_of(const std::vector<QASample>& samples, const Objective& obj, const std::vector<bool>* alive) {
  AxisCounts c;
  c.topic.assign(obj.topic_categories.size(), 0.0);
  c.band.assign(kBands.size(), 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (alive && !(*alive)[i]) continue;
    c.topic[obj.topic_index(samples[i].topic)] += 1.0;
    if (samples[i].rated()) c.band[static_cast<std::size_t>(samples[i].difficulty)] += 1.0;
  }
  return c;
}

bool Effect::empty() const {
  for (double v : topic)
    if (v != 0.0) return false;
  for (double v : band)
    if (v != 0.0) return false;
  return true;
}

Effect& Effect::operator+=(const Effect& o) {
  for (std::size_t i = 0; i < topic.size(); ++i) topic[i] += o.topic[i];
  for (std::size_t i = 0; i < band.size(); ++i) band[i] += o.band[i];
  return *this;
}

Effect zero_effect(const Objective& obj) {
  return Effect{std::vector<double>(obj.topic_categories.size(), 0.0), std::vector<double>(kBands.size(), 0.0)};
}

double chord_gain(const Objective& obj, const AxisCounts& at, const Effect& e, double steps) {
  steps = std::max(1.0, steps);
  return (obj.value(at) - obj.value(shifted(at, e, steps))) / steps;
}

bool improves(const Objective& obj, const AxisCounts& at, const Effect& e, Axis own) {
  AxisCounts after = shifted(at, e, 1.0);
  constexpr double eps = 1e-12;
  if (own == Axis::Topic && obj.topic_jsd(after) > obj.topic_jsd(at) + eps) return false;
  if (own == Axis::Difficulty && obj.band_jsd(after) > obj.band_jsd(at) + eps) return false;
  return obj.value(after) < obj.value(at) - eps;
}

Axis axis_of(Op op) { return op == Op::R1 || op == Op::R2 ? Axis::Topic : Axis::Difficulty; }

double steps_to_close(const Objective& obj, const AxisCounts& at, Op op, const Target& z, const Effect& e,
                      const QASample& s) {
  const double n = at.total();
  auto topic_gap = [&](std::size_t i) { return obj.topic_target[i] * n - at.topic[i]; };
  double band_n = 0.0;
  for (double v : at.band) band_n += v;
  auto band_gap = [&](std::size_t i) { return obj.band_target[i] * band_n - at.band[i]; };
  double gap = 0.0, units = 1.0;
  switch (op) {
    case Op::R1: {
      std::size_t c = obj.topic_index(s.topic);
      gap = -topic_gap(c);
      break;
    }
    case Op::R3: {
      if (!s.rated()) return 1.0;
      gap = -band_gap(static_cast<std::size_t>(s.difficulty));
      break;
    }
    case Op::R2: {
      std::size_t c = obj.topic_index(z.topic);
      gap = topic_gap(c);
      units = e.topic[c];
      break;
    }
    case Op::R4: {
      std::size_t b = static_cast<std::size_t>(parse_band(z.band));
      gap = band_gap(b);
      units = e.band[b];
      break;
    }
    case Op::R5: {
      // A rewrite moves one sample by one band, so each application closes
      // at most one unit of the target band's gap.
      gap = band_gap(static_cast<std::size_t>(parse_band(z.band)));
      units = 1.0;
      break;
    }
  }
  if (!(units > 0.0)) units = 1.0;
  return std::max(1.0, gap / units);
}

AdmissibleOps admissible(const QASample& s, const Target& z, const std::map<std::string, double>& topic_gaps,
                         const std::map<std::string, double>& band_gaps) {
  auto gap_of = [](const std::map<std::string, double>& g, const std::string& c) {
    auto it = g.find(c);
    return it == g.end() ? 0.0 : it->second;
  };
  AdmissibleOps a;
  const std::string topic = sample_category(s, Axis::Topic);
  const std::string band = s.rated() ? std::string(band_name(s.difficulty)) : std::string();
  if (gap_of(topic_gaps, topic) < -kGapEps) a.ops.push_back(Op::R1);
  if (!z.topic.empty()) a.ops.push_back(Op::R2);
  if (!band.empty() && gap_of(band_gaps, band) < -kGapEps) a.ops.push_back(Op::R3);
  if (!z.band.empty() && z.band != band) {
    a.ops.push_back(Op::R4);
    if (s.choices.size() >= 3 && !band.empty()) a.ops.push_back(Op::R5);
  }
  return a;
}

PilotKey pilot_key(const QASample& s, Op op, const Target& z) {
  const std::string topic = sample_category(s, Axis::Topic);
  const std::string band = s.rated() ? std::string(band_name(s.difficulty)) : std::string("unrated");
  PilotKey k{op, "", topic + "|" + band};
  switch (op) {
    case Op::R1: k.target = topic; break;
    case Op::R3: k.target = band; break;
    case Op::R2: k.target = z.topic; break;
    case Op::R4:
    case Op::R5: k.target = z.band; break;
  }
  return k;
}

PilotEstimate estimate(const PilotKey& key, const Target& z, const std::vector<std::size_t>& batch,
                       TrialRunner& runner, const EstimationContext& ctx) {
  if (batch.empty()) throw ArgumentError("pilot batch for " + std::string(op_name(key.op)) + " is empty");
  PilotEstimate est;
  est.key = key;
  const Objective& obj = ctx.objective;
  const AxisCounts& at = ctx.snapshot;
  double gain_sum = 0.0, cost_sum = 0.0;
  std::size_t failures = 0;
  for (std::size_t idx : batch) {
    const QASample& s = ctx.samples.at(idx);
    est.batch_ids.push_back(s.id);
    if (key.op == Op::R1 || key.op == Op::R3) {
      // Removal is a coin flip with a known probability, so its expected
      // gain needs no provider call.
      Effect e = zero_effect(obj);
      std::size_t c = obj.topic_index(s.topic);
      e.topic[c] = -1.0;
      if (s.rated()) e.band[static_cast<std::size_t>(s.difficulty)] = -1.0;
      const double n = at.total();
      double p = 0.0, t = 0.0;
      if (key.op == Op::R1) {
        p = n > 0 ? at.topic[c] / n : 0.0;
        t = obj.topic_target[c];
      } else if (s.rated()) {
        double bn = 0.0;
        for (double v : at.band) bn += v;
        std::size_t b = static_cast<std::size_t>(s.difficulty);
        p = bn > 0 ? at.band[b] / bn : 0.0;
        t = obj.band_target[b];
      }
      double prob = p > 0 ? std::clamp((p - t) / p, 0.0, 1.0) : 0.0;
      gain_sum += prob * chord_gain(obj, at, e, steps_to_close(obj, at, key.op, z, e, s));
      cost_sum += kRemovalCost;
      continue;
    }
    TrialOutcome out = runner.trial(s, key.op, z);
    cost_sum += out.tokens;
    if (out.failed) {
      ++failures;
      continue;
    }
    gain_sum += chord_gain(obj, at, out.effect, steps_to_close(obj, at, key.op, z, out.effect, s));
  }
  const double n = static_cast<double>(batch.size());
  est.mean_gain = gain_sum / n;
  est.mean_cost = cost_sum / n;
  if (failures == batch.size()) {
    est.flagged = true;
    est.mean_gain = 0.0;
  }
  return est;
}

AssignmentInstance build_instance(const std::vector<QASample>& samples, const std::vector<Target>& targets,
                                  const std::vector<AdmissibleOps>& ops,
                                  const std::map<PilotKey, PilotEstimate>& estimates, double budget) {
  if (targets.size() != samples.size() || ops.size() != samples.size())
    throw ArgumentError("targets and admissible sets must cover every sample");
  AssignmentInstance inst;
  inst.budget = budget;
  inst.targets = targets;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    inst.sample_ids.push_back(samples[i].id);
    for (Op op : ops[i].ops) {
      PilotKey key = pilot_key(samples[i], op, targets[i]);
      auto it = estimates.find(key);
      if (it == estimates.end())
        throw ConfigError("no pilot estimate for (" + std::string(op_name(op)) + ", " + key.target + ") on stratum " +
                          key.stratum);
      inst.entries.push_back({i, op, it->second.mean_gain, std::max(1.0, it->second.mean_cost)});
    }
  }
  inst.validate();
  return inst;
}

}  // namespace qarefine
