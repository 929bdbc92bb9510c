#include "qarefine/mock_provider.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "qarefine/qa_text.hpp"
#include "qarefine/rng.hpp"

namespace qarefine {

using nlohmann::json;

namespace mockworld {

std::string tag_block(const Tags& tags) {
  std::string out = "[[";
  bool first = true;
  for (const auto& [k, v] : tags) {
    if (!first) out += ' ';
    out += k + "=" + v;
    first = false;
  }
  return out + "]]";
}

std::vector<Tags> all_tag_blocks(std::string_view text) {
  std::vector<Tags> blocks;
  std::size_t pos = 0;
  while ((pos = text.find("[[", pos)) != std::string_view::npos) {
    auto end = text.find("]]", pos + 2);
    if (end == std::string_view::npos) break;
    Tags t;
    std::istringstream in(std::string(text.substr(pos + 2, end - pos - 2)));
    std::string kv;
    while (in >> kv) {
      auto eq = kv.find('=');
      if (eq != std::string::npos) t[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    blocks.push_back(std::move(t));
    pos = end + 2;
  }
  return blocks;
}

Tags parse_tags(std::string_view text) {
  Tags merged;
  for (auto& b : all_tag_blocks(text))
    for (auto& [k, v] : b) merged[k] = v;
  return merged;
}

std::string strip_tags(std::string_view text) {
  std::string out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto open = text.find("[[", pos);
    if (open == std::string_view::npos) break;
    auto end = text.find("]]", open + 2);
    if (end == std::string_view::npos) break;
    out.append(text.substr(pos, open - pos));
    pos = end + 2;
  }
  out.append(text.substr(std::min(pos, text.size())));
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::string plain = strip_tags(text);
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : plain) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::string pseudo_word(std::uint64_t h) {
  static const char* kSyl[] = {"ka", "lo", "ru", "mi", "te", "sa", "vo", "ni", "pe", "du",
                               "ga", "ze", "fi", "bo", "ha", "ju", "ce", "wy", "xo", "qu"};
  h = mix64(h);
  std::string w;
  for (int i = 0; i < 4; ++i) {
    w += kSyl[h % 20];
    h /= 20;
  }
  return w;
}

std::string pseudo_sentence(std::uint64_t h, int words) {
  std::string s;
  for (int i = 0; i < words; ++i) {
    if (i) s += ' ';
    s += pseudo_word(mix64(h + static_cast<std::uint64_t>(i) * 0x51ed27u));
  }
  return s;
}

bool looks_numeric(std::string_view s) {
  std::string plain = strip_tags(s);
  std::size_t b = plain.find_first_not_of(' ');
  std::size_t e = plain.find_last_not_of(' ');
  if (b == std::string::npos) return false;
  std::string core = plain.substr(b, e - b + 1);
  char* end = nullptr;
  std::strtod(core.c_str(), &end);
  return end && *end == '\0';
}

double latent_level(std::string_view rendered) {
  double lv = 1000.0;
  double p_sum = 0.0;
  int p_count = 0;
  for (const auto& block : all_tag_blocks(rendered)) {
    if (auto it = block.find("lv"); it != block.end()) lv = std::stod(it->second);
    if (auto it = block.find("p"); it != block.end()) {
      p_sum += std::stod(it->second);
      ++p_count;
    }
  }
  if (p_count > 0) {
    double mean = p_sum / p_count;
    if (mean >= 0.6) lv += kDistractorShift;
    else if (mean <= 0.4) lv -= kDistractorShift;
  }
  return lv;
}

}  // namespace mockworld

using namespace mockworld;

MockProvider::MockProvider(PromptLibrary prompts, MockOptions options)
    : Provider(std::move(prompts)), opt_(options) {
  set_retry({1, 0});
}

std::size_t MockProvider::bucket(std::string_view token) const {
  return static_cast<std::size_t>(stable_hash(token, opt_.seed) % opt_.embedding_dim);
}

Embedding MockProvider::embed(std::string_view text) {
  auto tokens = tokenize(text);
  if (tokens.empty()) throw ArgumentError("cannot embed empty text");
  Embedding e;
  e.vector.assign(opt_.embedding_dim, 0.0);
  for (const auto& t : tokens) e.vector[bucket(t)] += 1.0;
  return e;
}

std::uint64_t MockProvider::key(const CompletionRequest& request, std::string_view salt) const {
  std::uint64_t h = stable_hash(request.template_id, opt_.seed);
  for (const auto& [k, v] : request.variables) {
    h = stable_hash(k, h);
    h = stable_hash(v, h);
  }
  return stable_hash(salt, h);
}

namespace {

std::string var(const CompletionRequest& r, const std::string& name) {
  auto it = r.variables.find(name);
  return it == r.variables.end() ? std::string() : it->second;
}

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double unit(std::uint64_t h) { return static_cast<double>(mix64(h) >> 11) * 0x1.0p-53; }

// Answer text on the "Answer: X) text" line of a qa_block.
std::string answer_text(std::string_view qa) {
  auto pos = qa.rfind("\nAnswer: ");
  if (pos == std::string_view::npos) return {};
  std::string_view rest = qa.substr(pos + 9);
  auto paren = rest.find(") ");
  return std::string(paren == std::string_view::npos ? rest : rest.substr(paren + 2));
}

// A fresh four-choice item in the brace-less output format of the
// question-writing prompts.
std::string write_item(std::uint64_t h, const Tags& source, const std::string& topic, double lv,
                       bool numeric) {
  std::size_t answer = mix64(h ^ 0xa1) % 4;
  std::vector<std::string> choices;
  if (numeric) {
    std::set<long> used;
    long base = 10 + static_cast<long>(mix64(h ^ 0xb2) % 900);
    for (int i = 0; choices.size() < 4; ++i) {
      long v = base + static_cast<long>(mix64(h + 17 * i) % 97) - 48;
      if (used.insert(v).second) choices.push_back(std::to_string(v));
    }
  } else {
    for (int i = 0; i < 4; ++i) choices.push_back(pseudo_sentence(h + 1000 + 31 * i, 2));
  }
  Tags tags;
  tags["topic"] = topic;
  tags["lv"] = std::to_string(static_cast<long>(std::lround(lv)));
  tags["truth"] = std::to_string(answer);
  (void)source;
  json item;
  std::string question = pseudo_sentence(h, 10) + "? " + tag_block(tags);
  item["question"] = question;
  item["choices"] = choices;
  item["answer"] = answer;
  item["correct_choice"] = "Choice " + choice_letter(answer);
  // Emit the body without surrounding braces, the way the prompts show it.
  std::string out;
  out += "  \"question\": " + json(question).dump() + ",\n";
  out += "  \"choices\": " + item["choices"].dump() + ",\n";
  out += "  \"answer\": " + std::to_string(answer) + ",\n";
  out += "  \"correct_choice\": " + item["correct_choice"].dump() + "\n";
  return out;
}

const std::vector<std::string> kMathMistakes = {"Sign error", "Wrong formula", "Order of operations",
                                                 "Unit slip", "Rounding error"};
const std::vector<std::string> kFactMistakes = {"Conceptual confusion", "Memory lapse",
                                                 "Overgeneralization", "Temporal mix-up",
                                                 "Name confusion"};

}  // namespace

std::string MockProvider::respond(const CompletionRequest& r) {
  const std::string& id = r.template_id;

  if (id == tmpl::kExpansion) {
    std::string qa = var(r, "(q_example, a_example)");
    Tags src = parse_tags(qa);
    std::string topic = var(r, "_topic_id");
    if (topic.empty()) topic = src.count("topic") ? src["topic"] : "unknown";
    double lv = src.count("lv") ? std::stod(src["lv"]) : 1000.0;
    return write_item(key(r, "exp"), src, topic, lv, looks_numeric(answer_text(qa)));
  }

  if (id == tmpl::kGeneration) {
    std::string qa = var(r, "(q_example, a_example)");
    Tags src = parse_tags(qa);
    std::string target = var(r, "target_difficulty");
    double lv = target == "easy" ? 700.0 : target == "hard" ? 1300.0 : 1000.0;
    lv += std::floor(unit(key(r, "jit")) * 81.0) - 40.0;
    std::string topic = src.count("topic") ? src["topic"] : "unknown";
    return write_item(key(r, "gen"), src, topic, lv, looks_numeric(answer_text(qa)));
  }

  if (id == tmpl::kPairwise) {
    // A plain comparison of hidden levels, with a tie zone so near-equal
    // items draw.
    double ln = latent_level(var(r, "new_question"));
    double ls = latent_level(var(r, "seed_question"));
    if (ln > ls + kJudgeTie) return "1.0";
    if (ln < ls - kJudgeTie) return "0.0";
    return "0.5";
  }

  if (id == tmpl::kMistakeMining) {
    std::size_t k = static_cast<std::size_t>(std::stoul(var(r, "num_choices")));
    bool math = looks_numeric(var(r, "correct_answer"));
    const auto& pool = math ? kMathMistakes : kFactMistakes;
    std::size_t offset = math ? 0 : mix64(key(r, "mm")) % pool.size();
    json out;
    out["mistake_types"] = json::array();
    for (std::size_t i = 0; i < k; ++i) {
      const std::string& t = pool[(offset + i) % pool.size()];
      out["mistake_types"].push_back({{"type", t}, {"description", "Students commit a " + t + "."}});
    }
    return out.dump(2);
  }

  if (id == tmpl::kDistractorRewritingJson || id == tmpl::kDistractorRewriting) {
    int attempt = std::atoi(var(r, "_attempt").c_str());
    json out;
    out["distractors"] = json::array();
    for (int i = 1; i <= 3; ++i) {
      std::string type = var(r, "type_" + std::to_string(i));
      if (type.empty()) continue;
      std::uint64_t h = key(r, "d" + std::to_string(i));
      // Even attempts write convincing distractors, odd attempts weak ones.
      double p = (attempt % 2 == 0 ? 0.65 : 0.05) + 0.3 * unit(h);
      std::string text = pseudo_sentence(h, 3) + " " + tag_block({{"p", fmt(p, 2)}});
      out["distractors"].push_back({{"type", type}, {"text", text}});
    }
    return out.dump(2);
  }

  if (id == tmpl::kPlausibility) {
    Tags t = parse_tags(var(r, "distractor"));
    return t.count("p") ? t["p"] : "0.5";
  }

  if (id == tmpl::kTopicClassification) {
    Tags t = parse_tags(var(r, "question"));
    return t.count("topic") ? t["topic"] : "none of these";
  }

  if (id == tmpl::kKeywords) {
    json arr = json::array();
    std::set<std::string> seen;
    for (const auto& tok : tokenize(var(r, "question"))) {
      if (tok.size() < 4 || !seen.insert(tok).second) continue;
      arr.push_back(tok);
      if (arr.size() == 5) break;
    }
    return arr.dump();
  }

  if (id == tmpl::kRoute) {
    std::string choices = var(r, "choices");
    std::istringstream in(choices);
    std::string line;
    bool all_numeric = true;
    int n = 0;
    while (std::getline(in, line)) {
      auto paren = line.find(") ");
      if (paren != std::string::npos) line = line.substr(paren + 2);
      if (line.empty()) continue;
      ++n;
      all_numeric = all_numeric && looks_numeric(line);
    }
    return n > 0 && all_numeric ? "code" : "retrieval";
  }

  if (id == tmpl::kCodeValidation) {
    Tags t = parse_tags(var(r, "question"));
    std::string value = var(r, "correct_answer_text");
    if (t.count("truth")) {
      std::size_t truth = std::stoul(t["truth"]);
      value = var(r, "choices[" + std::to_string(truth) + "]");
    }
    if (opt_.reliability < 1.0 && t.count("trap")) value = "987654321";
    std::string plain = strip_tags(value);
    std::string literal = looks_numeric(plain) ? plain : json(plain).dump();
    return "```python\n# step 1: evaluate the quantity asked for\nanswer = " + literal +
           "\nprint(answer)\n```\n";
  }

  if (id == tmpl::kRagValidation) {
    Tags t = parse_tags(var(r, "question"));
    std::string claimed = var(r, "correct_answer_letter");
    std::string selected = claimed;
    if (t.count("truth")) selected = choice_letter(std::stoul(t["truth"]));
    double confidence = 0.9;
    if (opt_.reliability < 1.0 && t.count("trap")) confidence = 0.5;
    json out;
    out["reasoning"] = "The evidence supports option " + selected + ".";
    out["selected_answer"] = selected;
    out["original_is_truthful"] = selected == claimed;
    out["confidence"] = confidence;
    return out.dump(2);
  }

  return "OK";
}

Provider::Raw MockProvider::generate(const std::string& prompt, const CompletionRequest& request) {
  Raw raw;
  raw.text = respond(request);
  raw.usage.prompt_tokens = approx_tokens(prompt);
  raw.usage.completion_tokens = approx_tokens(raw.text);
  return raw;
}

}  // namespace qarefine
