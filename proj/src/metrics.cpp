#include "qarefine/metrics.hpp"

#include <cmath>
#include <map>
#include <set>

namespace qarefine {

double kl_bits(const std::vector<double>& p, const std::vector<double>& m) {
  if (p.size() != m.size()) throw ArgumentError("kl over vectors of different length");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (m[i] <= 0.0) throw DistributionError("kl diverges: p has mass where m has none");
    acc += p[i] * std::log2(p[i] / m[i]);
  }
  return acc < 0.0 ? 0.0 : acc;
}

double jsd_bits(const std::vector<double>& p, const std::vector<double>& t) {
  if (p.size() != t.size()) throw ArgumentError("jsd over vectors of different length");
  std::vector<double> mix(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) mix[i] = 0.5 * (p[i] + t[i]);
  double v = 0.5 * kl_bits(p, mix) + 0.5 * kl_bits(t, mix);
  if (v < 0.0) return 0.0;
  return v > 1.0 ? 1.0 : v;
}

namespace {

void aligned(const Distribution& a, const Distribution& b, std::vector<double>& va,
             std::vector<double>& vb) {
  std::set<std::string> keys;
  for (const auto& kv : a.weights) keys.insert(kv.first);
  for (const auto& kv : b.weights) keys.insert(kv.first);
  for (const auto& k : keys) {
    va.push_back(a.at(k));
    vb.push_back(b.at(k));
  }
}

}  // namespace

double kl(const Distribution& p, const Distribution& m) {
  std::vector<double> a, b;
  aligned(p, m, a, b);
  return kl_bits(a, b);
}

double jsd(const Distribution& p, const Distribution& t) {
  if (p.axis != t.axis) throw ArgumentError("jsd across different axes");
  std::vector<double> a, b;
  aligned(p, t, a, b);
  return jsd_bits(a, b);
}

double normalized_entropy(const std::vector<double>& proportions, std::size_t k) {
  if (k < 2) throw DistributionError("normalized entropy needs at least two categories");
  double h = 0.0;
  for (double p : proportions)
    if (p > 0.0) h -= p * std::log2(p);
  return h / std::log2(static_cast<double>(k));
}

double distractor_entropy(const Dataset& d) {
  std::set<std::string> vocabulary;
  std::size_t labeled = 0;
  for (const auto& s : d.samples) {
    if (s.distractor_types.empty()) continue;
    ++labeled;
    vocabulary.insert(s.distractor_types.begin(), s.distractor_types.end());
  }
  if (labeled == 0) return 0.0;
  const std::size_t k = vocabulary.size();
  if (k < 2) throw DistributionError("distractor entropy needs at least two mistake types");

  double total = 0.0;
  for (const auto& s : d.samples) {
    if (s.distractor_types.empty()) continue;
    std::map<std::string, double> counts;
    for (const auto& t : s.distractor_types) counts[t] += 1.0;
    std::vector<double> props;
    for (const auto& kv : counts) props.push_back(kv.second / s.distractor_types.size());
    total += normalized_entropy(props, k);
  }
  return total / static_cast<double>(labeled);
}

}  // namespace qarefine
