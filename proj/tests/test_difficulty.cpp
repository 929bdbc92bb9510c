#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "qarefine/difficulty.hpp"
#include "qarefine/mock_provider.hpp"
#include "qarefine/qa_text.hpp"
#include "scripted_provider.hpp"

using namespace qarefine;

namespace {

template <class P>
struct Ctx {
  P provider;
  EmbeddingCache cache{provider};
  Taxonomy tax = fixtures::taxonomy();
  OpContext ctx{provider, cache, tax, "school quiz"};
};

Ctx<MockProvider>* mock_ctx() {
  static Ctx<MockProvider> c{MockProvider(PromptLibrary::load_default(), {9, 1.0})};
  return &c;
}

std::vector<SeedExemplar> seeds() { return seeds_from_dataset(fixtures::seed_set(), EloConfig{}); }

}  // namespace

TEST(Elo, HandUpdates) {
  EloConfig cfg;
  EloState s;
  s = elo_update(s, 1000.0, 1.0, cfg);
  EXPECT_DOUBLE_EQ(s.rating, 1032.0);
  s = elo_update(s, 1200.0, 0.0, cfg);
  double p = 1.0 / (1.0 + std::pow(10.0, (1200.0 - 1032.0) / 400.0));
  EXPECT_DOUBLE_EQ(s.rating, 1032.0 - 64.0 * p);
  s = elo_update(s, 800.0, 0.5, cfg);
  ASSERT_EQ(s.history.size(), 3u);
  EXPECT_EQ(s.history[1].exemplar, 1200.0);
  EXPECT_THROW(elo_update(s, 1000.0, 1.5, cfg), ArgumentError);
}

TEST(Elo, EqualOpponentsDrawLeavesRating) {
  EloConfig cfg;
  EloState s;
  s.rating = 1234.0;
  EXPECT_EQ(elo_update(s, 1234.0, 0.5, cfg).rating, 1234.0);
  EXPECT_EQ(elo_expected(1000, 1000, 400), 0.5);
  EXPECT_NEAR(elo_expected(1400, 1000, 400), 10.0 / 11.0, 1e-15);
}

TEST(Elo, BandBoundaries) {
  EloConfig cfg;
  EXPECT_EQ(band_for(899.999, cfg), Band::Easy);
  EXPECT_EQ(band_for(900.0, cfg), Band::Medium);
  EXPECT_EQ(band_for(1100.0, cfg), Band::Medium);
  EXPECT_EQ(band_for(1100.001, cfg), Band::Hard);
}

TEST(Elo, ConfigValidation) {
  EloConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.k = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.easy_below = 1200;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.rounds = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Seeds, NeedEveryBand) {
  Dataset d = fixtures::seed_set();
  auto s = seeds_from_dataset(d, EloConfig{});
  ASSERT_EQ(s.size(), 9u);
  EXPECT_EQ(s.front().rating, 800.0);
  EXPECT_EQ(s.back().rating, 1200.0);
  d.samples.erase(d.samples.begin(), d.samples.begin() + 3);
  EXPECT_THROW(seeds_from_dataset(d, EloConfig{}), ConfigError);
  d = fixtures::seed_set();
  d.samples[0].difficulty = Band::Unrated;
  EXPECT_THROW(seeds_from_dataset(d, EloConfig{}), ConfigError);
}

TEST(Rate, UnusableJudgeLeavesSampleUnrated) {
  Ctx<ScriptedProvider> c;
  c.provider.always(tmpl::kPairwise, "N/A");
  QASample s = fixtures::make_item({"x", "alg"});
  s.elo = 1000.0;
  auto r = rate_difficulty(s, seeds(), EloConfig{}, c.ctx);
  EXPECT_FALSE(r.ok());
  EXPECT_EQ(r.rounds_failed, 7);
  EXPECT_EQ(s.difficulty, Band::Unrated);
  EXPECT_FALSE(s.elo);
}

TEST(Rate, FailedRoundsAreSkipped) {
  Ctx<ScriptedProvider> c;
  for (int i = 0; i < 3; ++i) c.provider.queue(tmpl::kPairwise, "harder, I think");
  c.provider.always(tmpl::kPairwise, "1.0");
  QASample s = fixtures::make_item({"x", "alg"});
  auto r = rate_difficulty(s, seeds(), EloConfig{}, c.ctx);
  EXPECT_EQ(r.rounds_ok, 4);
  EXPECT_EQ(r.rounds_failed, 3);
  EXPECT_EQ(r.state.history.size(), 4u);
  EXPECT_EQ(s.elo, r.state.rating);
}

TEST(Rate, MockRecoversPlantedBands) {
  auto* c = mock_ctx();
  for (Band b : kBands) {
    for (int k = 0; k < 4; ++k) {
      QASample s = fixtures::make_item({"r" + std::to_string(k) + std::string(band_name(b)), k % 2 ? "hist" : "alg", b,
                                        k % 2 == 0, 0, 0, false, false, 40});
      auto r = rate_difficulty(s, seeds(), EloConfig{}, c->ctx);
      EXPECT_EQ(r.band, b) << s.id << " rated " << r.state.rating;
    }
  }
}

TEST(Exemplars, MostSimilarFirstWithIdTieBreak) {
  Ctx<ScriptedProvider> c;  // constant embeddings: every seed ties
  auto s = seeds();
  auto picked = select_exemplars(fixtures::make_item({"x", "alg"}), s, 4, c.cache);
  ASSERT_EQ(picked.size(), 4u);
  std::vector<std::string> ids;
  for (auto* p : picked) ids.push_back(p->sample.id);
  EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end()));

  auto* m = mock_ctx();
  auto first = select_exemplars(s[4].sample, s, 1, m->cache);
  EXPECT_EQ(first[0]->sample.id, s[4].sample.id);
}

TEST(Generate, MockHitsTargetBand) {
  auto* c = mock_ctx();
  QASample src = fixtures::make_item({"src", "geo", Band::Easy, true, 1, 1});
  for (Band b : kBands) {
    auto g = generate_at_difficulty("geo", b, &src, "gen-" + std::string(band_name(b)), seeds(), EloConfig{}, c->ctx);
    ASSERT_TRUE(g.sample);
    EXPECT_TRUE(g.retained) << band_name(b);
    EXPECT_EQ(g.sample->difficulty, b);
    EXPECT_EQ(g.sample->topic, "geo");
    EXPECT_EQ(g.sample->provenance, Provenance::Generated);
  }
}

TEST(Generate, BadOutputIsReported) {
  Ctx<ScriptedProvider> c;
  c.provider.always(tmpl::kGeneration, "Here is a great question!");
  auto g = generate_at_difficulty("geo", Band::Hard, nullptr, "g", seeds(), EloConfig{}, c.ctx);
  EXPECT_FALSE(g.sample);
  EXPECT_FALSE(g.retained);
  EXPECT_NE(g.error.find("generation-failed"), std::string::npos);
}

TEST(Mining, DeduplicatesAndRetries) {
  Ctx<ScriptedProvider> c;
  c.provider.queue(tmpl::kMistakeMining,
                   R"({"mistake_types": [{"type": "Sign error", "description": "a"}, {"type": "Sign error"}]})");
  c.provider.queue(tmpl::kMistakeMining,
                   R"({"mistake_types": [{"type": "Sign error"}, {"type": "Unit slip", "description": "b"}, {"type": "Off by one"}]})");
  auto m = mine_mistake_types(fixtures::make_item({"x", "alg", Band::Medium, true}), 3, c.ctx);
  ASSERT_EQ(m.types.size(), 3u);
  EXPECT_EQ(m.types[0].label, "Sign error");
  EXPECT_EQ(m.types[1].label, "Unit slip");
  EXPECT_EQ(m.types[2].label, "Off by one");
  EXPECT_EQ(c.provider.count(tmpl::kMistakeMining), 2u);
}

TEST(Mining, NothingUsableThrows) {
  Ctx<ScriptedProvider> c;
  c.provider.always(tmpl::kMistakeMining, R"({"types": []})");
  EXPECT_THROW(mine_mistake_types(fixtures::make_item({"x", "alg"}), 3, c.ctx), OperationError);
}

TEST(Mining, MockReturnsDistinctTypes) {
  auto m = mine_mistake_types(fixtures::make_item({"x", "hist"}), 3, mock_ctx()->ctx);
  std::set<std::string> labels;
  for (const auto& t : m.types) labels.insert(t.label);
  EXPECT_EQ(labels.size(), 3u);
  EXPECT_TRUE(m.warnings.empty());
}

TEST(Scoring, CombinedScore) {
  EXPECT_EQ(combined_score(1.0, 2.0, 0.5), 1.0);
  EXPECT_EQ(combined_score(0.0, 0.0, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(combined_score(0.8, 1.0, 0.5), 0.65);
  EXPECT_EQ(combined_score(0.3, 1.7, 1.0), 0.3);
}

TEST(Covering, MatchesBruteForce) {
  Rng rng(77);
  for (int trial = 0; trial < 400; ++trial) {
    std::size_t m = 2 + rng.index(8);
    std::size_t n = 1 + rng.index(4);
    bool minimize = trial % 2;
    std::vector<double> scores(m);
    std::vector<std::string> types(m);
    for (std::size_t i = 0; i < m; ++i) {
      scores[i] = std::round(rng.uniform() * 20.0);
      types[i] = std::string(1, static_cast<char>('a' + rng.index(3)));
    }
    auto picked = select_covering(scores, types, n, minimize);
    ASSERT_EQ(picked.size(), std::min(n, m));
    std::set<std::string> picked_types;
    double total = 0.0;
    for (auto i : picked) picked_types.insert(types[i]), total += scores[i];

    // Enumerate every subset of the same size; among those covering the most
    // types, find the best total.
    std::size_t best_cover = 0;
    double best_total = 0.0;
    for (unsigned mask = 0; mask < (1u << m); ++mask) {
      if (static_cast<std::size_t>(__builtin_popcount(mask)) != picked.size()) continue;
      std::set<std::string> ts;
      double t = 0.0;
      for (std::size_t i = 0; i < m; ++i)
        if (mask >> i & 1) ts.insert(types[i]), t += scores[i];
      bool better_total = minimize ? t < best_total : t > best_total;
      if (ts.size() > best_cover || (ts.size() == best_cover && better_total)) {
        best_cover = ts.size();
        best_total = t;
      }
    }
    ASSERT_EQ(picked_types.size(), best_cover);
    ASSERT_EQ(total, best_total);
  }
  EXPECT_THROW(select_covering({1.0}, {}, 1), ArgumentError);
}

TEST(Rewrite, HardenRaisesLatentLevelAndKeepsAnswer) {
  auto* c = mock_ctx();
  QASample s = fixtures::make_item({"x", "alg", Band::Medium, true, 2, 2});
  double before = mockworld::latent_level(question_with_choices(s));
  auto r = rewrite_distractors(s, RewriteDirection::Harden, kTopDistractors, c->ctx);
  ASSERT_FALSE(r.aborted) << r.error;
  EXPECT_EQ(r.sample.correct_choice, s.correct_choice);
  EXPECT_EQ(r.sample.choices[r.sample.answer_index], s.correct_choice);
  EXPECT_EQ(r.sample.choices.size(), 4u);
  EXPECT_EQ(r.sample.distractor_types.size(), 3u);
  EXPECT_EQ(r.sample.provenance, Provenance::Rewritten);
  EXPECT_GT(mockworld::latent_level(question_with_choices(r.sample)), before);

  auto e = rewrite_distractors(s, RewriteDirection::Ease, kTopDistractors, c->ctx);
  ASSERT_FALSE(e.aborted) << e.error;
  EXPECT_LT(mockworld::latent_level(question_with_choices(e.sample)), before);
}

TEST(Rewrite, TooFewChoicesAborts) {
  QASample s = fixtures::make_item({"x", "alg", Band::Medium, true});
  s.choices.resize(2);
  s.answer_index = 0;
  s.correct_choice = s.choices[0];
  auto r = rewrite_distractors(s, RewriteDirection::Harden, 3, mock_ctx()->ctx);
  EXPECT_TRUE(r.aborted);
  EXPECT_EQ(r.sample, s);
}

TEST(Rewrite, EasingOrderPutsMostConfusableFirst) {
  QASample s;
  s.id = "s";
  s.choices = {"red blue green", "red blue yellow", "cat dog", "red pink"};
  s.answer_index = 0;
  s.correct_choice = s.choices[0];
  EXPECT_EQ(easing_order(s, mock_ctx()->cache), (std::vector<std::size_t>{1, 3, 2}));
}

TEST(RemovalProbability, DifficultyAxis) {
  Distribution p{Axis::Difficulty, {{"easy", 0.1}, {"medium", 0.8}, {"hard", 0.1}}};
  Distribution t{Axis::Difficulty, {{"easy", 0.0}, {"medium", 0.4}, {"hard", 0.6}}};
  EXPECT_DOUBLE_EQ(removal_probability_difficulty(Band::Medium, p, t), 0.5);
  EXPECT_EQ(removal_probability_difficulty(Band::Hard, p, t), 0.0);
  EXPECT_EQ(removal_probability_difficulty(Band::Medium, p, p), 0.0);
  Distribution absent{Axis::Difficulty, {{"easy", 0.5}, {"medium", 0.5}, {"hard", 0.0}}};
  EXPECT_EQ(removal_probability_difficulty(Band::Hard, absent, t), 0.0);
}
