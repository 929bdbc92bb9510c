#pragma once

#include <string>
#include <vector>

#include "qarefine/core.hpp"

namespace qarefine {

// All divergences are in bits, which is what keeps JSD inside [0, 1].
double kl(const Distribution& p, const Distribution& m);
double jsd(const Distribution& p, const Distribution& t);

// Dense versions over aligned vectors; the distribution overloads forward
// here after taking the union of supports.
double kl_bits(const std::vector<double>& p, const std::vector<double>& m);
double jsd_bits(const std::vector<double>& p, const std::vector<double>& t);

// Entropy of `proportions` divided by log K. Zero bins contribute nothing.
double normalized_entropy(const std::vector<double>& proportions, std::size_t k);

// Mean per-sample normalized entropy of distractor-type proportions, with K
// the number of distinct mistake types seen anywhere in the dataset.
double distractor_entropy(const Dataset& d);

struct MetricValue {
  std::string name;  // coverage_jsd, difficulty_jsd, distractor_entropy
  double value = 0.0;
  std::string context;
};

}  // namespace qarefine
