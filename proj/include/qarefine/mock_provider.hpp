#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "qarefine/provider.hpp"

namespace qarefine {

// The offline world the mock provider reasons about. Fixture questions carry
// their ground truth in a trailing `[[key=value ...]]` block that only the
// mock reads:
//   topic=<id>    topic the question really belongs to
//   lv=<int>      latent difficulty on the Elo scale
//   truth=<idx>   index of the choice that is actually correct
//   trap=1        an item an imperfect validator gets wrong
// Distractors written by the mock carry `[[p=<plausibility>]]`.
namespace mockworld {

using Tags = std::map<std::string, std::string>;

std::string tag_block(const Tags& tags);
// Merged contents of every tag block in `text`, later blocks winning.
Tags parse_tags(std::string_view text);
// All tag blocks, in order of appearance.
std::vector<Tags> all_tag_blocks(std::string_view text);
std::string strip_tags(std::string_view text);

// Lowercased alphanumeric runs of the untagged text.
std::vector<std::string> tokenize(std::string_view text);

// Pronounceable pseudo-word determined by `h`; distinct h give distinct
// words with overwhelming probability.
std::string pseudo_word(std::uint64_t h);
std::string pseudo_sentence(std::uint64_t h, int words);

// Latent difficulty of a rendered question: its lv tag shifted by the
// plausibility of any rewritten distractors in the text.
double latent_level(std::string_view rendered);
inline constexpr double kDistractorShift = 300.0;
// Level differences within this margin are judged a draw.
inline constexpr double kJudgeTie = 50.0;

bool looks_numeric(std::string_view s);

}  // namespace mockworld

struct MockOptions {
  std::uint64_t seed = 0;
  // Below 1.0 the validator templates are fooled on items tagged trap=1.
  double reliability = 1.0;
  std::size_t embedding_dim = 512;
};

// Rule engine standing in for an LLM: every output is a pure function of
// (seed, template id, variables), so whole pipeline runs are reproducible.
class MockProvider : public Provider {
 public:
  MockProvider(PromptLibrary prompts, MockOptions options);

  Embedding embed(std::string_view text) override;
  std::string name() const override { return "mock"; }
  const MockOptions& options() const { return opt_; }

  // Bucket a token lands in; exposed so tests can check collisions.
  std::size_t bucket(std::string_view token) const;

 protected:
  Raw generate(const std::string& prompt, const CompletionRequest& request) override;

 private:
  std::string respond(const CompletionRequest& request);
  std::uint64_t key(const CompletionRequest& request, std::string_view salt) const;

  MockOptions opt_;
};

}  // namespace qarefine
