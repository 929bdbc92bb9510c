#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "qarefine/metrics.hpp"
#include "qarefine/rng.hpp"

using namespace qarefine;

namespace {

Distribution topic(std::map<std::string, double> w) { return {Axis::Topic, std::move(w)}; }

std::vector<double> random_simplex(Rng& rng, std::size_t n, bool sparse) {
  std::vector<double> v(n);
  for (auto& x : v) x = (sparse && rng.uniform() < 0.3) ? 0.0 : -std::log(1.0 - rng.uniform());
  if (std::accumulate(v.begin(), v.end(), 0.0) == 0.0) v[0] = 1.0;
  double s = std::accumulate(v.begin(), v.end(), 0.0);
  for (auto& x : v) x /= s;
  return v;
}

QASample with_types(const std::string& id, std::vector<std::string> types) {
  QASample s;
  s.id = id;
  s.distractor_types = std::move(types);
  return s;
}

}  // namespace

TEST(Kl, KnownValues) {
  auto m = topic({{"A", 0.75}, {"B", 0.25}});
  EXPECT_EQ(kl(m, m), 0.0);
  EXPECT_NEAR(kl(topic({{"A", 1.0}, {"B", 0.0}}), m), std::log2(4.0 / 3.0), 1e-15);
  EXPECT_NEAR(kl(topic({{"A", 1.0}, {"B", 0.0}}), m), 0.41504, 5e-6);
  EXPECT_NEAR(kl(topic({{"A", 0.5}, {"B", 0.5}}), m), 0.20752, 5e-6);
}

TEST(Kl, MassOutsideSupportDiverges) {
  EXPECT_THROW(kl(topic({{"A", 0.5}, {"B", 0.5}}), topic({{"A", 1.0}, {"B", 0.0}})), DistributionError);
  // Zero mass against zero mass is fine.
  EXPECT_EQ(kl(topic({{"A", 1.0}, {"B", 0.0}}), topic({{"A", 1.0}, {"B", 0.0}})), 0.0);
}

TEST(Jsd, KnownValues) {
  auto p = topic({{"A", 1.0}, {"B", 0.0}});
  EXPECT_EQ(jsd(p, p), 0.0);
  EXPECT_NEAR(jsd(p, topic({{"A", 0.0}, {"B", 1.0}})), 1.0, 1e-15);
  EXPECT_NEAR(jsd(p, topic({{"A", 0.5}, {"B", 0.5}})), 0.31128, 5e-6);
}

TEST(Jsd, MissingBinsCountAsZero) {
  EXPECT_NEAR(jsd(topic({{"A", 1.0}}), topic({{"B", 1.0}})), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(jsd(topic({{"A", 1.0}}), topic({{"A", 0.5}, {"B", 0.5}})),
                   jsd(topic({{"A", 1.0}, {"B", 0.0}}), topic({{"A", 0.5}, {"B", 0.5}})));
}

TEST(Jsd, AxisMismatch) {
  EXPECT_THROW(jsd(topic({{"A", 1.0}}), Distribution{Axis::Difficulty, {{"easy", 1.0}}}), ArgumentError);
}

TEST(Jsd, RandomProperties) {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    std::size_t n = 2 + rng.index(7);
    auto p = random_simplex(rng, n, true), t = random_simplex(rng, n, true);
    double a = jsd_bits(p, t), b = jsd_bits(t, p);
    ASSERT_NEAR(a, b, 1e-15);
    ASSERT_GE(a, 0.0);
    ASSERT_LE(a, 1.0);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::vector<double> pp(n), tp(n);
    for (std::size_t i = 0; i < n; ++i) pp[i] = p[perm[i]], tp[i] = t[perm[i]];
    ASSERT_NEAR(jsd_bits(pp, tp), a, 1e-15);
    double gap = 0.0;
    for (std::size_t i = 0; i < n; ++i) gap = std::max(gap, std::abs(p[i] - t[i]));
    ASSERT_EQ(jsd_bits(p, p), 0.0);
    if (gap >= 1e-9) ASSERT_GT(a, 0.0);
  }
}

TEST(Entropy, Cases) {
  EXPECT_NEAR(normalized_entropy({1.0 / 3, 1.0 / 3, 1.0 / 3}, 3), 1.0, 1e-15);
  EXPECT_EQ(normalized_entropy({1.0}, 3), 0.0);
  EXPECT_NEAR(normalized_entropy({0.5, 0.25, 0.25}, 3), 0.94639, 5e-6);
  EXPECT_THROW(normalized_entropy({1.0}, 1), DistributionError);
}

TEST(Entropy, IndependentOfLogBase) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = random_simplex(rng, 2 + rng.index(6), true);
    double h = 0.0;
    for (double x : p)
      if (x > 0) h -= x * std::log(x);
    ASSERT_NEAR(normalized_entropy(p, p.size()), h / std::log(static_cast<double>(p.size())), 1e-14);
  }
}

TEST(DistractorEntropy, UsesGlobalVocabulary) {
  Dataset d;
  d.samples = {with_types("a", {"x", "y", "z"})};
  EXPECT_NEAR(distractor_entropy(d), 1.0, 1e-15);

  // One sample with a single type, but the vocabulary still has three.
  d.samples = {with_types("a", {"x", "x", "x"}), with_types("b", {"x", "y", "z"})};
  EXPECT_NEAR(distractor_entropy(d), 0.5, 1e-15);

  // Four distractors 2/1/1 over a vocabulary of three.
  d.samples = {with_types("a", {"x", "x", "y", "z"})};
  EXPECT_NEAR(distractor_entropy(d), 0.94639, 5e-6);
}

TEST(DistractorEntropy, UnlabeledAndDegenerate) {
  Dataset d;
  d.samples = {with_types("a", {}), with_types("b", {})};
  EXPECT_EQ(distractor_entropy(d), 0.0);
  d.samples = {with_types("a", {"x", "x", "x"})};
  EXPECT_THROW(distractor_entropy(d), DistributionError);
  // Samples without labels are skipped, not averaged in as zero.
  d.samples = {with_types("a", {"x", "y"}), with_types("b", {})};
  EXPECT_NEAR(distractor_entropy(d), 1.0, 1e-15);
}
