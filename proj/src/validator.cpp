#include "qarefine/validator.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "qarefine/qa_text.hpp"
#include "qarefine/rng.hpp"

namespace qarefine {

using nlohmann::json;

std::string_view route_name(Route r) { return r == Route::Code ? "code" : "retrieval"; }

std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Pass: return "pass";
    case Verdict::Corrected: return "corrected";
    case Verdict::Fail: return "fail";
    case Verdict::Inconclusive: return "inconclusive";
  }
  return "?";
}

namespace {

std::string trimmed(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// The whole string as a number, or nothing.
std::optional<double> as_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || trimmed(end).size() != 0 || !std::isfinite(v)) return std::nullopt;
  return v;
}

bool close_enough(double a, double b, double tol) {
  double d = std::abs(a - b);
  return d <= tol || d <= tol * std::max(std::abs(a), std::abs(b));
}

// Choice slots for prompts written against four options.
void add_choice_vars(Vars& v, const QASample& s) {
  for (std::size_t i = 0; i < 4; ++i)
    v["choices[" + std::to_string(i) + "]"] = i < s.choices.size() ? s.choices[i] : "";
}

const std::set<std::string>& stopwords() {
  static const std::set<std::string> words = {
      "a",     "an",    "and",  "are",  "as",   "at",    "be",    "by",   "did",  "do",    "does",
      "for",   "from",  "had",  "has",  "have", "how",   "if",    "in",   "into", "is",    "it",
      "its",   "many",  "much", "of",   "on",   "or",    "that",  "the",  "their", "then", "there",
      "these", "this",  "to",   "was",  "were", "what",  "when",  "where", "which", "who", "whom",
      "why",   "will",  "with", "would", "he",  "she",   "they",  "his",  "her",  "them",  "after",
      "before", "each", "than", "not",  "can",  "all",   "one",   "about"};
  return words;
}

}  // namespace

Route route(const QASample& s, const Taxonomy& taxonomy, Provider& provider) {
  if (const Topic* t = taxonomy.find(s.topic)) {
    if (t->route == "code") return Route::Code;
    if (t->route == "retrieval") return Route::Retrieval;
  }
  std::string choices;
  for (std::size_t i = 0; i < s.choices.size(); ++i) choices += choice_letter(i) + ") " + s.choices[i] + "\n";
  try {
    auto c = provider.complete({tmpl::kRoute, {{"question", s.question}, {"choices", choices}}, 0.0, 8, Format::Text});
    std::string answer = lower(c.parsed->get<std::string>());
    if (answer.rfind("code", 0) == 0) return Route::Code;
  } catch (const Error& e) {
    spdlog::warn("route classification failed for '{}': {}", s.id, e.what());
  }
  return Route::Retrieval;
}

ValidationResult judge_script_output(const QASample& s, const SandboxResult& run, double tolerance) {
  ValidationResult r;
  r.sample_id = s.id;
  r.route = Route::Code;
  if (run.timed_out) {
    r.evidence = "script timed out";
    return r;
  }
  if (run.exit_code != 0) {
    r.evidence = "script exited with status " + std::to_string(run.exit_code) + ": " + trimmed(run.err);
    return r;
  }
  std::string last;
  std::size_t end = run.out.size();
  while (last.empty() && end > 0) {
    std::size_t start = run.out.rfind('\n', end - 1);
    start = start == std::string::npos ? 0 : start + 1;
    last = trimmed(std::string_view(run.out).substr(start, end - start));
    end = start == 0 ? 0 : start - 1;
  }
  if (last.empty()) {
    r.evidence = "script printed nothing";
    return r;
  }
  // "The answer is: 42" style lines are read after their last colon.
  std::vector<std::string> forms = {last};
  if (auto colon = last.rfind(':'); colon != std::string::npos) forms.push_back(trimmed(last.substr(colon + 1)));

  auto matches = [&](std::size_t idx) {
    const std::string choice = trimmed(s.choices[idx]);
    auto choice_num = leading_number(choice);
    for (const auto& f : forms) {
      if (f == choice) return true;
      auto v = as_number(f);
      if (v && choice_num && close_enough(*v, *choice_num, tolerance)) return true;
    }
    return false;
  };
  r.evidence = "printed: " + last;
  if (matches(s.answer_index)) {
    r.verdict = Verdict::Pass;
    return r;
  }
  for (std::size_t i = 0; i < s.choices.size(); ++i) {
    if (i != s.answer_index && matches(i)) {
      r.verdict = Verdict::Corrected;
      r.corrected_answer_index = i;
      return r;
    }
  }
  r.verdict = Verdict::Fail;
  return r;
}

ValidationResult check_by_code(const QASample& s, Provider& provider, const Sandbox& sandbox) {
  if (!sandbox.available()) throw EnvironmentError("sandbox unavailable: no interpreter '" + sandbox.config().interpreter + "'");
  Vars v{{"question", s.question},
         {"correct_answer_letter", choice_letter(s.answer_index)},
         {"correct_answer_text", s.correct_choice}};
  add_choice_vars(v, s);
  std::string code;
  try {
    code = provider.complete({tmpl::kCodeValidation, v, 0.0, 1024, Format::Code}).parsed->get<std::string>();
  } catch (const FormatError& e) {
    ValidationResult r;
    r.sample_id = s.id;
    r.route = Route::Code;
    r.evidence = std::string("no derivation script: ") + e.what();
    return r;
  }
  SandboxResult run = sandbox.run(code);
  if (run.timed_out) spdlog::warn("derivation script for '{}' timed out after {:.1f}s", s.id, run.wall_s);
  ValidationResult r = judge_script_output(s, run);
  r.evidence = code + "\n---\n" + r.evidence;
  return r;
}

std::vector<std::string> tf_keywords(const std::string& question, std::size_t k) {
  std::vector<std::string> order;
  std::map<std::string, std::size_t> count;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= 2 && !stopwords().count(cur)) {
      if (!count.count(cur)) order.push_back(cur);
      ++count[cur];
    }
    cur.clear();
  };
  for (char c : question) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    else
      flush();
  }
  flush();
  // Most frequent first; ties keep first-appearance order.
  std::stable_sort(order.begin(), order.end(),
                   [&](const std::string& a, const std::string& b) { return count[a] > count[b]; });
  if (order.size() > k) order.resize(k);
  return order;
}

std::vector<std::string> extract_keywords(const std::string& question, Provider& provider) {
  if (trimmed(question).empty()) throw ArgumentError("cannot extract keywords from an empty question");
  try {
    auto c = provider.complete({tmpl::kKeywords, {{"question", question}}, 0.0, 64, Format::Json});
    const json& arr = *c.parsed;
    std::vector<std::string> out;
    if (arr.is_array()) {
      for (const auto& item : arr) {
        if (!item.is_string()) continue;
        std::string w = lower(trimmed(item.get<std::string>()));
        if (w.empty() || std::find(out.begin(), out.end(), w) != out.end()) continue;
        out.push_back(w);
        if (out.size() == 8) break;
      }
    }
    if (!out.empty()) return out;
    spdlog::warn("keyword extraction returned no keywords; using term frequency");
  } catch (const Error& e) {
    spdlog::warn("keyword extraction failed ({}); using term frequency", e.what());
  }
  return tf_keywords(question, 5);
}

std::string keyword_key(const std::vector<std::string>& keywords) {
  std::vector<std::string> k;
  for (const auto& w : keywords) k.push_back(lower(trimmed(w)));
  std::sort(k.begin(), k.end());
  k.erase(std::unique(k.begin(), k.end()), k.end());
  std::string joined;
  for (const auto& w : k) joined += w + '\x1f';
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(stable_hash(joined)));
  return buf;
}

namespace {

std::vector<Passage> parse_passages(const json& list) {
  std::vector<Passage> out;
  if (!list.is_array()) return out;
  for (const auto& p : list) {
    if (!p.is_object()) continue;
    out.push_back({p.value("title", std::string()), p.value("text", std::string())});
  }
  return out;
}

std::string url_encode(const std::string& s) {
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out += static_cast<char>(c);
    } else {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02X", c);
      out += buf;
    }
  }
  return out;
}

}  // namespace

std::unique_ptr<FixtureCacheRetriever> FixtureCacheRetriever::from_file(const std::string& path) {
  try {
    return std::make_unique<FixtureCacheRetriever>(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw ConfigError("retrieval cache '" + path + "' is not valid JSON: " + e.what());
  }
}

std::vector<Passage> FixtureCacheRetriever::search(const std::vector<std::string>& keywords) {
  std::string key = keyword_key(keywords);
  if (cache_.is_object() && cache_.contains(key)) return parse_passages(cache_.at(key));
  ++misses_;
  std::string shown;
  for (const auto& w : keywords) shown += (shown.empty() ? "" : ", ") + w;
  spdlog::warn("retrieval cache has no entry for keywords [{}]", shown);
  return {};
}

std::vector<Passage> HttpRetriever::search(const std::vector<std::string>& keywords) {
  std::string q;
  for (const auto& w : keywords) q += (q.empty() ? "" : " ") + w;
  HttpResponse resp;
  {
    std::lock_guard lock(mu_);
    resp = transport_->get(path_ + "?q=" + url_encode(q), {});
  }
  if (resp.status != 200) {
    spdlog::warn("search request failed with status {}", resp.status);
    return {};
  }
  try {
    return parse_passages(json::parse(resp.body).value("results", json::array()));
  } catch (const json::exception& e) {
    spdlog::warn("search response did not parse: {}", e.what());
    return {};
  }
}

std::vector<Passage> retrieve_passages(const std::vector<std::string>& keywords, Retriever& retriever) {
  auto p = retriever.search(keywords);
  if (p.size() > kTopPassages) p.resize(kTopPassages);
  return p;
}

ValidationResult verify_factual(const QASample& s, const std::vector<Passage>& passages, Provider& provider,
                                const std::string& subject) {
  ValidationResult r;
  r.sample_id = s.id;
  r.route = Route::Retrieval;
  std::string evidence;
  for (const auto& p : passages) evidence += (evidence.empty() ? "" : "\n\n") + p.title + ": " + p.text;
  if (evidence.empty()) evidence = "(no passages found)";
  Vars v{{"subject", subject},
         {"question", s.question},
         {"summaries_text", evidence},
         {"correct_answer_letter", choice_letter(s.answer_index)},
         {"choices[correct_answer_index]", s.choices[s.answer_index]}};
  add_choice_vars(v, s);
  for (const auto& p : passages) r.evidence += (r.evidence.empty() ? "" : "; ") + p.title;

  json verdict;
  try {
    verdict = *provider.complete({tmpl::kRagValidation, v, 0.0, 512, Format::Json}).parsed;
  } catch (const FormatError&) {
    r.evidence += r.evidence.empty() ? "unparseable verdict" : "; unparseable verdict";
    return r;
  }
  if (!verdict.is_object()) return r;
  std::optional<bool> truthful;
  const json& t = verdict.contains("original_is_truthful") ? verdict["original_is_truthful"] : json();
  if (t.is_boolean()) truthful = t.get<bool>();
  if (t.is_string()) {
    std::string ts = lower(t.get<std::string>());
    if (ts == "true") truthful = true;
    if (ts == "false") truthful = false;
  }
  const json& c = verdict.contains("confidence") ? verdict["confidence"] : json();
  if (c.is_number()) r.confidence = std::clamp(c.get<double>(), 0.0, 1.0);
  if (c.is_string()) r.confidence = as_number(trimmed(c.get<std::string>()));
  if (!truthful || !r.confidence) return r;
  if (*truthful) {
    r.verdict = Verdict::Pass;
    return r;
  }
  if (*r.confidence < kConfidenceThreshold) return r;  // flagged for review, nothing changes
  std::optional<std::size_t> picked;
  if (verdict.contains("selected_answer") && verdict["selected_answer"].is_string())
    picked = resolve_choice(verdict["selected_answer"].get<std::string>(), s);
  if (picked && *picked != s.answer_index) {
    r.verdict = Verdict::Corrected;
    r.corrected_answer_index = picked;
  } else if (!picked) {
    r.verdict = Verdict::Fail;
  }
  return r;
}

double CorrectionTally::correction_ratio() const {
  return corrected + fail == 0 ? 1.0 : static_cast<double>(corrected) / static_cast<double>(corrected + fail);
}

double CorrectionTally::residual_error_rate() const {
  std::size_t n = validated();
  return n == 0 ? 0.0 : static_cast<double>(fail + inconclusive + rejected) / static_cast<double>(n);
}

CorrectionTally apply_corrections(std::vector<QASample>& samples, const std::vector<ValidationResult>& results,
                                  std::vector<std::string>* log) {
  std::map<std::string, std::size_t> where;
  for (std::size_t i = 0; i < samples.size(); ++i) where.emplace(samples[i].id, i);
  auto note = [&](const std::string& m) {
    spdlog::warn(m);
    if (log) log->push_back(m);
  };
  CorrectionTally t;
  for (const auto& r : results) {
    auto it = where.find(r.sample_id);
    if (it == where.end()) {
      ++t.rejected;
      note("validation result for unknown sample '" + r.sample_id + "' rejected");
      continue;
    }
    switch (r.verdict) {
      case Verdict::Pass: ++t.pass; break;
      case Verdict::Fail: ++t.fail; break;
      case Verdict::Inconclusive: ++t.inconclusive; break;
      case Verdict::Corrected: {
        QASample& s = samples[it->second];
        if (!r.corrected_answer_index || *r.corrected_answer_index >= s.choices.size() ||
            *r.corrected_answer_index == s.answer_index) {
          ++t.rejected;
          note("correction for '" + r.sample_id + "' rejected: index out of range or unchanged");
          break;
        }
        s.answer_index = *r.corrected_answer_index;
        s.correct_choice = s.choices[s.answer_index];
        s.provenance = Provenance::Corrected;
        ++t.corrected;
        break;
      }
    }
  }
  return t;
}

ValidationResult validate_sample(const QASample& s, ValidatorContext& ctx) {
  Route r = route(s, ctx.taxonomy, ctx.provider);
  if (r == Route::Code) return check_by_code(s, ctx.provider, ctx.sandbox);
  auto keywords = extract_keywords(s.question, ctx.provider);
  auto passages = retrieve_passages(keywords, ctx.retriever);
  const Topic* t = ctx.taxonomy.find(s.topic);
  return verify_factual(s, passages, ctx.provider, t ? t->name : ctx.domain);
}

std::vector<ValidationResult> validate_all(const std::vector<QASample>& samples, ValidatorContext& ctx,
                                           std::size_t workers) {
  std::vector<ValidationResult> out(samples.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < samples.size(); i = next++) {
      try {
        out[i] = validate_sample(samples[i], ctx);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = samples.size();
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, samples.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace qarefine
