#include <algorithm>
#include <cmath>
#include <functional>

#include "qarefine/assignment.hpp"

namespace qarefine {

namespace {

struct HullStep {
  std::size_t sample;
  long from;
  long to;
  double ddelta;
  double dcost;
  double efficiency() const { return ddelta / dcost; }
};

// Upper convex frontier of one sample's positive-gain options, as the
// sequence of upgrades from "no operation". Efficiencies strictly decrease
// along the sequence.
std::vector<HullStep> group_hull(const AssignmentInstance& inst, std::size_t sample, std::size_t b, std::size_t e) {
  std::vector<long> items;
  for (std::size_t j = b; j < e; ++j)
    if (inst.entries[j].delta > 0.0) items.push_back(static_cast<long>(j));
  std::sort(items.begin(), items.end(), [&](long x, long y) {
    const Entry& a = inst.entries[x];
    const Entry& c = inst.entries[y];
    if (a.cost != c.cost) return a.cost < c.cost;
    if (a.delta != c.delta) return a.delta > c.delta;
    return x < y;
  });
  // Drop options that cost at least as much as a cheaper one without
  // gaining more.
  std::vector<long> kept;
  for (long j : items)
    if (kept.empty() || inst.entries[j].delta > inst.entries[kept.back()].delta) kept.push_back(j);

  auto pt = [&](long j) {
    return j < 0 ? std::pair{0.0, 0.0} : std::pair{inst.entries[j].cost, inst.entries[j].delta};
  };
  std::vector<long> hull{-1};
  for (long j : kept) {
    while (hull.size() >= 2) {
      auto [x0, y0] = pt(hull[hull.size() - 2]);
      auto [x1, y1] = pt(hull.back());
      auto [x2, y2] = pt(j);
      // Middle point on or under the chord is LP-dominated.
      if ((x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0) >= 0.0)
        hull.pop_back();
      else
        break;
    }
    hull.push_back(j);
  }
  std::vector<HullStep> steps;
  for (std::size_t h = 1; h < hull.size(); ++h) {
    auto [x0, y0] = pt(hull[h - 1]);
    auto [x1, y1] = pt(hull[h]);
    steps.push_back({sample, hull[h - 1], hull[h], y1 - y0, x1 - x0});
  }
  return steps;
}

std::vector<HullStep> sorted_steps(const AssignmentInstance& inst, std::size_t first_sample) {
  auto groups = inst.groups();
  std::vector<HullStep> all;
  for (std::size_t i = first_sample; i < groups.size(); ++i) {
    auto s = group_hull(inst, i, groups[i].first, groups[i].second);
    all.insert(all.end(), s.begin(), s.end());
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const HullStep& a, const HullStep& b) { return a.efficiency() > b.efficiency(); });
  return all;
}

double lp_value(const std::vector<HullStep>& steps, double budget) {
  double value = 0.0;
  for (const auto& s : steps) {
    if (budget <= 0.0) break;
    if (s.dcost <= budget) {
      value += s.ddelta;
      budget -= s.dcost;
    } else {
      value += s.ddelta * (budget / s.dcost);
      break;
    }
  }
  return value;
}

bool better(double candidate, double incumbent) {
  return candidate > incumbent + 1e-9 * std::max(1.0, std::abs(incumbent));
}

}  // namespace

Plan solve_exact(const AssignmentInstance& inst, std::size_t cap) {
  inst.validate();
  if (inst.entries.size() > cap)
    throw ArgumentError("instance has " + std::to_string(inst.entries.size()) +
                        " decision variables, over the exact-solver cap of " + std::to_string(cap));
  const auto groups = inst.groups();
  const std::size_t n = groups.size();
  std::vector<std::vector<HullStep>> suffix(n + 1);
  for (std::size_t i = 0; i < n; ++i) suffix[i] = sorted_steps(inst, i);

  std::vector<long> choice(n, -1), best_choice(n, -1);
  double best = 0.0;
  std::function<void(std::size_t, double, double)> dfs = [&](std::size_t i, double value, double remaining) {
    if (i == n) {
      if (better(value, best)) {
        best = value;
        best_choice = choice;
      }
      return;
    }
    double bound = value + lp_value(suffix[i], remaining);
    if (!better(bound + 1e-9 * std::max(1.0, std::abs(bound)), best)) return;
    // "None" first, then later entries before earlier ones: this visits
    // leaves in increasing lexicographic order of the decision vector, so
    // the first optimum found is the lexicographically smallest.
    choice[i] = -1;
    dfs(i + 1, value, remaining);
    for (std::size_t j = groups[i].second; j-- > groups[i].first;) {
      const Entry& e = inst.entries[j];
      if (e.delta <= 0.0 || e.cost > remaining) continue;
      choice[i] = static_cast<long>(j);
      dfs(i + 1, value + e.delta, remaining - e.cost);
    }
    choice[i] = -1;
  };
  dfs(0, 0.0, inst.budget);
  return make_plan(inst, best_choice, SolverKind::Exact);
}

LpSolution solve_lp_greedy(const AssignmentInstance& inst) {
  inst.validate();
  LpSolution lp;
  lp.integral.assign(inst.num_samples(), -1);
  auto steps = sorted_steps(inst, 0);
  double remaining = inst.budget;
  bool stopped = false;
  for (const auto& s : steps) {
    lp.order.push_back({s.sample, s.from, s.to, s.ddelta, s.dcost});
    if (stopped) continue;
    if (s.dcost <= remaining) {
      lp.integral[s.sample] = s.to;
      lp.bound += s.ddelta;
      remaining -= s.dcost;
    } else {
      if (remaining > 0.0) {
        double f = remaining / s.dcost;
        lp.fractional = LpSolution::Fractional{s.sample, s.from, s.to, f};
        lp.bound += f * s.ddelta;
      }
      stopped = true;
    }
  }
  return lp;
}

Plan round_lp(const AssignmentInstance& inst, const LpSolution& lp) {
  std::vector<long> choice = lp.integral;
  double spent = 0.0;
  for (long c : choice)
    if (c >= 0) spent += inst.entries[c].cost;
  // Fill pass: leftover budget goes to the next frontier upgrades that fit.
  for (const auto& inc : lp.order) {
    if (choice[inc.sample] != inc.from) continue;
    if (spent + inc.dcost > inst.budget) continue;
    choice[inc.sample] = inc.to;
    spent += inc.dcost;
  }
  Plan p = make_plan(inst, std::move(choice), SolverKind::LpGreedy);
  p.lp_bound = lp.bound;
  return p;
}

Plan baseline_greedy(const AssignmentInstance& inst) {
  inst.validate();
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < inst.entries.size(); ++j)
    if (inst.entries[j].delta > 0.0) order.push_back(j);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return inst.entries[a].delta / inst.entries[a].cost > inst.entries[b].delta / inst.entries[b].cost;
  });
  std::vector<long> choice(inst.num_samples(), -1);
  double remaining = inst.budget;
  for (std::size_t j : order) {
    const Entry& e = inst.entries[j];
    if (choice[e.sample] >= 0 || e.cost > remaining) continue;
    choice[e.sample] = static_cast<long>(j);
    remaining -= e.cost;
  }
  return make_plan(inst, std::move(choice), SolverKind::Greedy);
}

Plan baseline_uniform(const AssignmentInstance& inst, Rng& rng) {
  inst.validate();
  const double share = inst.budget / static_cast<double>(kOps.size());
  std::vector<long> choice(inst.num_samples(), -1);
  for (Op op : kOps) {
    std::vector<std::size_t> pool;
    for (std::size_t j = 0; j < inst.entries.size(); ++j)
      if (inst.entries[j].op == op && inst.entries[j].delta > 0.0) pool.push_back(j);
    rng.shuffle(pool);
    double used = 0.0;
    for (std::size_t j : pool) {
      const Entry& e = inst.entries[j];
      if (choice[e.sample] >= 0 || used + e.cost > share) continue;
      choice[e.sample] = static_cast<long>(j);
      used += e.cost;
    }
  }
  return make_plan(inst, std::move(choice), SolverKind::Uniform);
}

}  // namespace qarefine
