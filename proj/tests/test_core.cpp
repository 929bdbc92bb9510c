#include <set>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "qarefine/core.hpp"
#include "qarefine/qa_text.hpp"

using namespace qarefine;

namespace {

Taxonomy abc() {
  Taxonomy t;
  t.topics = {{"A", "A", "", ""}, {"B", "B", "", ""}, {"C", "C", "", ""}};
  return t;
}

std::string record(const std::string& id, int answer, int n_choices = 4, const std::string& extra = "") {
  std::string choices;
  for (int i = 0; i < n_choices; ++i) choices += (i ? ",\"" : "\"") + std::string(1, char('w' + i)) + "\"";
  return "{\"id\":\"" + id + "\",\"question\":\"q " + id + "?\",\"choices\":[" + choices +
         "],\"answer\":" + std::to_string(answer) + extra + "}";
}

}  // namespace

TEST(Load, MinimalRecord) {
  Dataset d = parse_dataset(record("a", 1) + "\n", abc());
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.samples[0].answer_index, 1u);
  EXPECT_EQ(d.samples[0].correct_choice, "x");
  EXPECT_EQ(d.samples[0].difficulty, Band::Unrated);
}

TEST(Load, AnswerOutOfRangeNamesTheLine) {
  std::string text = record("a", 0) + "\n" + record("b", 5) + "\n";
  try {
    parse_dataset(text, abc());
    FAIL() << "expected a schema error";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Load, MalformedLineIsAParseError) {
  try {
    parse_dataset(record("a", 0) + "\n{not json\n", abc());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Load, DuplicateIdConflicts) {
  EXPECT_THROW(parse_dataset(record("a", 0) + "\n" + record("a", 1) + "\n", abc()), ConflictError);
}

TEST(Load, UnknownTopicRejected) {
  EXPECT_THROW(parse_dataset(record("a", 0, 4, ",\"topic\":\"Z\"") + "\n", abc()), SchemaError);
}

TEST(Load, MismatchedCorrectChoiceIsRepairedWithWarning) {
  std::vector<std::string> warnings;
  Dataset d = parse_dataset(record("a", 2, 4, ",\"correct_choice\":\"w\"") + "\n", abc(), &warnings);
  EXPECT_EQ(d.samples[0].correct_choice, "y");
  ASSERT_EQ(warnings.size(), 1u);
}

TEST(Load, GeneratedFixtureRoundTrips) {
  Dataset d = fixtures::skewed_dataset({{{"alg", 50}, {"geo", 30}, {"hist", 20}}, 30, 40, 30, 5});
  d.samples[3].provenance = Provenance::Rewritten;
  d.samples[3].distractor_types = {"Sign error", "Unit slip", "Sign error"};
  d.samples[4].elo = 1234.5;
  std::string dir = fixtures::scratch_dir("core");
  save_dataset(dir + "/d.jsonl", d);
  Dataset back = load_dataset(dir + "/d.jsonl", d.taxonomy);
  ASSERT_EQ(back.size(), 100u);
  EXPECT_EQ(back.samples, d.samples);
  std::set<std::string> ids;
  for (const auto& s : back.samples) ids.insert(s.id);
  EXPECT_EQ(ids.size(), 100u);
}

TEST(Load, ChoiceCountLimits) {
  EXPECT_THROW(parse_dataset(record("a", 0, 1) + "\n", abc()), SchemaError);
  EXPECT_NO_THROW(parse_dataset(record("a", 0, 2) + "\n", abc()));
  EXPECT_THROW(parse_dataset(record("a", 0, 9) + "\n", abc()), SchemaError);
}

TEST(Taxonomy, RejectsDuplicatesAndOther) {
  Taxonomy t = abc();
  t.topics.push_back({"A", "again", "", ""});
  EXPECT_THROW(t.validate(), SchemaError);
  Taxonomy o;
  o.topics = {{kOtherTopic, "other", "", ""}};
  EXPECT_THROW(o.validate(), SchemaError);
  EXPECT_THROW(Taxonomy{}.validate(), SchemaError);
}

TEST(Empirical, SingleBin) {
  Dataset d;
  d.taxonomy = abc();
  for (int i = 0; i < 4; ++i) d.samples.push_back(fixtures::make_item({"s" + std::to_string(i), "A"}));
  Distribution p = empirical_distribution(d, Axis::Topic);
  EXPECT_DOUBLE_EQ(p.at("A"), 1.0);
  EXPECT_DOUBLE_EQ(p.at("B"), 0.0);
}

TEST(Empirical, BandsIncludeEmptyMedium) {
  Dataset d;
  d.taxonomy = abc();
  Band bands[] = {Band::Easy, Band::Easy, Band::Hard, Band::Hard};
  for (int i = 0; i < 4; ++i) {
    fixtures::ItemSpec it{"s" + std::to_string(i), "A", bands[i]};
    d.samples.push_back(fixtures::make_item(it));
  }
  Distribution p = empirical_distribution(d, Axis::Difficulty);
  EXPECT_EQ(p.weights, (std::map<std::string, double>{{"easy", 0.5}, {"medium", 0.0}, {"hard", 0.5}}));
}

TEST(Empirical, KnownFixtureProportions) {
  Dataset d = fixtures::skewed_dataset({{{"alg", 30}, {"geo", 18}, {"hist", 12}}, 20, 20, 20, 3});
  Distribution p = empirical_distribution(d, Axis::Topic);
  EXPECT_EQ(p.at("alg"), 30.0 / 60.0);
  EXPECT_EQ(p.at("geo"), 18.0 / 60.0);
  EXPECT_EQ(p.at("hist"), 12.0 / 60.0);
  double sum = 0.0;
  for (const auto& kv : p.weights) sum += kv.second;
  EXPECT_NEAR(sum, 1.0, 1e-15);
}

TEST(Empirical, UnlabeledGoesToOther) {
  Dataset d;
  d.taxonomy = abc();
  d.samples.push_back(fixtures::make_item({"a", "A"}));
  QASample u = fixtures::make_item({"b", "A"});
  u.topic.clear();
  d.samples.push_back(u);
  Distribution p = empirical_distribution(d, Axis::Topic);
  EXPECT_DOUBLE_EQ(p.at(kOtherTopic), 0.5);
}

TEST(Empirical, EmptyOrUnratedIsUndefined) {
  Dataset d;
  d.taxonomy = abc();
  EXPECT_THROW(empirical_distribution(d, Axis::Topic), DistributionError);
  fixtures::ItemSpec it{"a", "A"};
  it.rated = false;
  d.samples.push_back(fixtures::make_item(it));
  EXPECT_THROW(empirical_distribution(d, Axis::Difficulty), DistributionError);
}

TEST(Gap, DirectSubtractionAndAntisymmetry) {
  Distribution p{Axis::Topic, {{"A", 1.0}, {"B", 0.0}}}, t{Axis::Topic, {{"A", 0.5}, {"B", 0.5}}};
  auto g = gap_vector(p, t);
  EXPECT_DOUBLE_EQ(g["A"], -0.5);
  EXPECT_DOUBLE_EQ(g["B"], 0.5);
  auto h = gap_vector(t, p);
  for (const auto& [c, v] : g) EXPECT_EQ(v + h[c], 0.0);
  for (const auto& [c, v] : gap_vector(p, p)) EXPECT_EQ(v, 0.0);
}

TEST(Gap, AbsentBinGetsFullTargetMass) {
  Distribution p{Axis::Topic, {{"organic", 0.7}, {"physical", 0.3}}};
  Distribution t{Axis::Topic, {{"organic", 0.4}, {"physical", 0.3}, {"biochemistry", 0.3}}};
  EXPECT_DOUBLE_EQ(gap_vector(p, t)["biochemistry"], 0.3);
}

TEST(Gap, AxisMismatch) {
  Distribution p{Axis::Topic, {{"A", 1.0}}}, t{Axis::Difficulty, {{"easy", 1.0}}};
  EXPECT_THROW(gap_vector(p, t), ArgumentError);
}

TEST(Distribution, Validation) {
  Taxonomy tax = abc();
  EXPECT_NO_THROW((Distribution{Axis::Topic, {{"A", 0.5}, {"B", 0.5}}}.validate(&tax)));
  EXPECT_THROW((Distribution{Axis::Topic, {{"A", 0.6}, {"B", 0.5}}}.validate(&tax)), DistributionError);
  EXPECT_THROW((Distribution{Axis::Topic, {{"A", 1.5}, {"B", -0.5}}}.validate(&tax)), DistributionError);
  EXPECT_THROW((Distribution{Axis::Topic, {{"Z", 1.0}}}.validate(&tax)), DistributionError);
  EXPECT_THROW((Distribution{Axis::Difficulty, {{"trivial", 1.0}}}.validate(&tax)), DistributionError);
}

TEST(QaText, ResolvesLettersAndText) {
  QASample s = fixtures::make_item({"a", "alg", Band::Easy, true});
  EXPECT_EQ(resolve_choice("B", s), 1u);
  EXPECT_EQ(resolve_choice("Choice C", s), 2u);
  EXPECT_EQ(resolve_choice("d)", s), 3u);
  EXPECT_EQ(resolve_choice(s.choices[2], s), 2u);
  EXPECT_FALSE(resolve_choice("Z", s).has_value());
  EXPECT_EQ(leading_number("about 12.5 cm"), 12.5);
  EXPECT_EQ(leading_number("-3"), -3.0);
  EXPECT_FALSE(leading_number("none").has_value());
}
