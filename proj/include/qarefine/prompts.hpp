#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace qarefine {

using Vars = std::map<std::string, std::string>;

namespace tmpl {
inline constexpr const char* kExpansion = "expansion";
inline constexpr const char* kGeneration = "generation";
inline constexpr const char* kPairwise = "pairwise_difficulty";
inline constexpr const char* kMistakeMining = "mistake_mining";
inline constexpr const char* kDistractorRewriting = "distractor_rewriting";
// Rewriting prompt followed by the JSON output contract the engine parses.
inline constexpr const char* kDistractorRewritingJson = "distractor_rewriting_json";
inline constexpr const char* kPlausibility = "distractor_plausibility";
inline constexpr const char* kCodeValidation = "code_validation";
inline constexpr const char* kRagValidation = "rag_validation";
inline constexpr const char* kTopicClassification = "topic_classification";
inline constexpr const char* kKeywords = "keyword_extraction";
inline constexpr const char* kRoute = "route_classification";
}  // namespace tmpl

// Placeholder names in order of first appearance. `{name}`, `{name[0]}` and
// `{(a, b)}` are placeholders; braces around JSON bodies are not.
std::vector<std::string> placeholders_in(std::string_view text);

// Substitutes every placeholder; throws ArgumentError naming the first one
// missing from `vars`. Variables without a placeholder are ignored.
std::string render_template(std::string_view text, const Vars& vars);

class PromptLibrary {
 public:
  // Reads every *.txt under `dir`; the file stem is the template id.
  static PromptLibrary load(const std::string& dir);
  static PromptLibrary load_default();
  static std::string default_dir();

  bool has(const std::string& id) const { return texts_.count(id) > 0; }
  const std::string& text(const std::string& id) const;
  void set(const std::string& id, std::string text) { texts_[id] = std::move(text); }
  std::string render(const std::string& id, const Vars& vars) const;
  std::vector<std::string> ids() const;

 private:
  std::map<std::string, std::string> texts_;
};

}  // namespace qarefine
