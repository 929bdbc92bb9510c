#include <set>
#include <thread>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "qarefine/coverage.hpp"
#include "qarefine/http_provider.hpp"
#include "qarefine/mock_provider.hpp"
#include "qarefine/qa_text.hpp"
#include "scripted_provider.hpp"

using namespace qarefine;

namespace {

// Every placeholder of the template filled with a filler value, then the
// given overrides applied.
Vars vars_for(const PromptLibrary& lib, const std::string& id, const Vars& overrides) {
  Vars v;
  for (const auto& p : placeholders_in(lib.text(id))) v[p] = "filler";
  for (const auto& [k, x] : overrides) v[k] = x;
  return v;
}

MockProvider mock(std::uint64_t seed = 3, double reliability = 1.0) {
  return MockProvider(PromptLibrary::load_default(), {seed, reliability});
}

// Fails the first `failures` calls as unavailable, then answers.
class FlakyProvider : public Provider {
 public:
  explicit FlakyProvider(int failures) : Provider(PromptLibrary::load_default()), left_(failures) {}
  Embedding embed(std::string_view) override { return {{1.0}}; }
  std::string name() const override { return "flaky"; }
  int calls = 0;

 protected:
  Raw generate(const std::string&, const CompletionRequest&) override {
    ++calls;
    if (left_-- > 0) throw ProviderUnavailable("backend busy");
    return {"0.25", {10, 1}};
  }

 private:
  int left_;
};

}  // namespace

TEST(Templates, PlaceholdersInOrder) {
  EXPECT_EQ(placeholders_in("a {x} b {y[0]} {(p, q)} {x}"), (std::vector<std::string>{"x", "y[0]", "(p, q)"}));
  // A JSON body in braces is not a placeholder.
  EXPECT_TRUE(placeholders_in("Output: {\"answer\": 1}").empty());
  EXPECT_EQ(render_template("{a}+{a}={b}", {{"a", "1"}, {"b", "2"}, {"unused", "3"}}), "1+1=2");
  EXPECT_THROW(render_template("{a} {b}", {{"a", "1"}}), ArgumentError);
}

TEST(Templates, ShippedSetIsComplete) {
  auto lib = PromptLibrary::load_default();
  for (const char* id : {tmpl::kExpansion, tmpl::kGeneration, tmpl::kPairwise, tmpl::kMistakeMining,
                         tmpl::kDistractorRewriting, tmpl::kDistractorRewritingJson, tmpl::kPlausibility,
                         tmpl::kCodeValidation, tmpl::kRagValidation, tmpl::kTopicClassification,
                         tmpl::kKeywords, tmpl::kRoute})
    EXPECT_TRUE(lib.has(id)) << id;
  auto p = placeholders_in(lib.text(tmpl::kPairwise));
  EXPECT_EQ(p, (std::vector<std::string>{"new_question", "seed_difficulty", "seed_question"}));
}

TEST(Extract, Json) {
  EXPECT_EQ(extract_json("```json\n{\"a\": 1}\n```")["a"], 1);
  EXPECT_EQ(extract_json("Sure! {\"a\": [1, 2]} hope that helps")["a"].size(), 2u);
  auto body = extract_json("  \"question\": \"q?\",\n  \"answer\": 2,\n");
  EXPECT_EQ(body["answer"], 2);
  EXPECT_THROW(extract_json("no json here"), FormatError);
}

TEST(Extract, NumberAndCode) {
  EXPECT_EQ(extract_number(" 0.75\n"), 0.75);
  EXPECT_THROW(extract_number("0.75 because"), FormatError);
  EXPECT_THROW(extract_number("nan"), FormatError);
  EXPECT_EQ(extract_code("```python\nprint(1)\n```"), "print(1)\n");
  EXPECT_THROW(extract_code("```\n\n```"), FormatError);
  try {
    extract_number("about half");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.raw(), "about half");
  }
}

TEST(Cost, Arithmetic) {
  Cost zero = cost_of(0, 0, {1e-5, 3e-5});
  EXPECT_EQ(zero.tokens, 0u);
  EXPECT_EQ(zero.money, 0.0);
  Cost c = cost_of(100, 50, {1e-5, 3e-5});
  EXPECT_EQ(c.tokens, 150u);
  EXPECT_NEAR(c.money, 0.0025, 1e-15);
  EXPECT_THROW(cost_of(-1, 0, {}), ArgumentError);
  EXPECT_THROW(cost_of(1, 0, {-1.0, 0.0}), ArgumentError);
}

TEST(Mock, PairwiseOnIdenticalQuestionsIsEven) {
  auto p = mock();
  QASample s = fixtures::make_item({"x", "alg", Band::Hard, true});
  CompletionRequest r{tmpl::kPairwise, {{"new_question", s.question}, {"seed_question", s.question},
                                        {"seed_difficulty", "hard"}}};
  r.expected_format = Format::Number;
  EXPECT_EQ(p.complete(r).text, "0.5");
}

TEST(Mock, PairwiseComparesHiddenLevels) {
  auto p = mock();
  QASample easy = fixtures::make_item({"e", "alg", Band::Easy, true});
  QASample hard = fixtures::make_item({"h", "alg", Band::Hard, true});
  CompletionRequest r{tmpl::kPairwise, {{"new_question", hard.question}, {"seed_question", easy.question},
                                        {"seed_difficulty", "easy"}}};
  EXPECT_EQ(p.complete(r).text, "1.0");
  std::swap(r.variables["new_question"], r.variables["seed_question"]);
  EXPECT_EQ(p.complete(r).text, "0.0");
}

TEST(Mock, ExpansionIsDeterministicFourChoiceJson) {
  auto lib = PromptLibrary::load_default();
  QASample s = fixtures::make_item({"x", "alg", Band::Medium, true, 1, 1});
  CompletionRequest r{tmpl::kExpansion,
                      vars_for(lib, tmpl::kExpansion, {{"(q_example, a_example)", qa_block(s)}, {"_topic_id", "alg"}})};
  r.expected_format = Format::Json;
  auto a = mock(3).complete(r), b = mock(3).complete(r), c = mock(4).complete(r);
  EXPECT_EQ(a.text, b.text);
  EXPECT_NE(a.text, c.text);
  ASSERT_TRUE(a.parsed);
  EXPECT_EQ((*a.parsed)["choices"].size(), 4u);
  QASample item = parse_written_item(*a.parsed, "new");
  EXPECT_EQ(mockworld::parse_tags(item.question).at("topic"), "alg");
}

TEST(Mock, Embeddings) {
  auto p = mock();
  auto a = p.embed("triangle area base height");
  EXPECT_EQ(a.vector, p.embed("triangle area base height").vector);
  EXPECT_NEAR(cosine(a, a), 1.0, 1e-9);
  EXPECT_THROW(p.embed("  ?! "), ArgumentError);

  // Two-token texts with no token in common: cosine is zero unless their
  // buckets collide, which the hashed bag-of-words makes checkable.
  auto x = p.embed("photosynthesis chlorophyll"), y = p.embed("parliament election");
  std::set<std::size_t> bx{p.bucket("photosynthesis"), p.bucket("chlorophyll")};
  bool collide = bx.count(p.bucket("parliament")) || bx.count(p.bucket("election"));
  ASSERT_FALSE(collide);
  EXPECT_EQ(cosine(x, y), 0.0);
}

TEST(Ledger, SumsUsageAcrossThreads) {
  auto p = mock();
  auto lib = PromptLibrary::load_default();
  std::vector<Usage> per(8);
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 25; ++i) {
        CompletionRequest r{tmpl::kKeywords,
                            vars_for(lib, tmpl::kKeywords, {{"question", "question number " + std::to_string(t * 100 + i)}})};
        per[t] += p.complete(r).usage;
      }
    });
  }
  for (auto& th : threads) th.join();
  Usage total;
  for (const auto& u : per) total += u;
  EXPECT_EQ(p.usage(), total);
  EXPECT_EQ(p.ledger().calls(), 200u);
}

TEST(Retry, TransientFailuresAreRetried) {
  FlakyProvider ok(2);
  ok.set_retry({3, 0});
  CompletionRequest r{tmpl::kPlausibility, vars_for(ok.prompts(), tmpl::kPlausibility, {})};
  r.expected_format = Format::Number;
  EXPECT_EQ(ok.complete(r).parsed->get<double>(), 0.25);
  EXPECT_EQ(ok.calls, 3);

  FlakyProvider down(3);
  down.set_retry({3, 0});
  EXPECT_THROW(down.complete(r), ProviderUnavailable);
  EXPECT_EQ(down.calls, 3);
}

TEST(Retry, FormatErrorStillCharged) {
  ScriptedProvider p;
  p.always(tmpl::kPlausibility, "quite plausible");
  CompletionRequest r{tmpl::kPlausibility, vars_for(p.prompts(), tmpl::kPlausibility, {})};
  r.expected_format = Format::Number;
  EXPECT_THROW(p.complete(r), FormatError);
  EXPECT_EQ(p.ledger().calls(), 1u);
  EXPECT_GT(p.usage().total(), 0u);
}

TEST(Http, ReplayedChatAndEmbeddings) {
  auto transport = ReplayTransport::from_file(fixtures::data_path("http_replay.json"));
  HttpProvider p(PromptLibrary::load_default(), {"chat-model", "embed-small", ""}, transport);
  auto lib = PromptLibrary::load_default();
  CompletionRequest r{tmpl::kMistakeMining, vars_for(lib, tmpl::kMistakeMining, {})};
  r.expected_format = Format::Json;
  r.temperature = 0.0;
  Completion c = p.complete(r);
  ASSERT_TRUE(c.parsed);
  EXPECT_EQ((*c.parsed)["mistake_types"][0]["type"], "Sign error");
  EXPECT_EQ(c.usage, (Usage{212, 31}));
  EXPECT_EQ(p.usage(), (Usage{212, 31}));

  // The request that went out is the rendered template in a chat body.
  auto sent = nlohmann::json::parse(transport->requests_seen().at(0).request_body);
  EXPECT_EQ(sent["model"], "chat-model");
  EXPECT_EQ(sent["messages"][0]["content"], lib.render(tmpl::kMistakeMining, r.variables));

  auto e = p.embed("how many legs has a spider");
  EXPECT_EQ(e.vector, (std::vector<double>{0.6, 0.0, 0.8}));
  EXPECT_THROW(p.embed("rate limited"), ProviderRejected);
}

TEST(Http, UnrecordedRequestIsUnavailable) {
  auto transport = std::make_shared<ReplayTransport>(std::vector<Exchange>{});
  HttpProvider p(PromptLibrary::load_default(), {"m"}, transport);
  p.set_retry({2, 0});
  auto lib = PromptLibrary::load_default();
  CompletionRequest r{tmpl::kKeywords, vars_for(lib, tmpl::kKeywords, {})};
  EXPECT_THROW(p.complete(r), ProviderUnavailable);
  EXPECT_EQ(transport->requests_seen().size(), 2u);
  EXPECT_EQ(p.ledger().calls(), 0u);
}

TEST(Http, ResponseWithoutUsageIsAFormatError) {
  auto transport = std::make_shared<ReplayTransport>(std::vector<Exchange>{
      {"POST", "/v1/chat/completions", "", 200, R"({"choices":[{"message":{"content":"hi"}}]})"}});
  HttpProvider p(PromptLibrary::load_default(), {"m"}, transport);
  auto lib = PromptLibrary::load_default();
  EXPECT_THROW(p.complete({tmpl::kKeywords, vars_for(lib, tmpl::kKeywords, {})}), FormatError);
  EXPECT_THROW(HttpProvider(lib, {""}, transport), ConfigError);
}

TEST(Extract, BracelessBodyWithInnerArray) {
  auto j = extract_json(R"("question": "Q?", "choices": ["a", "b", "c", "d"], "answer": 1)");
  ASSERT_TRUE(j.is_object());
  EXPECT_EQ(j["answer"], 1);
  EXPECT_EQ(extract_json("[1, 2]").size(), 2u);
}
