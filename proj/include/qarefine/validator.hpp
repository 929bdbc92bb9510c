#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qarefine/core.hpp"
#include "qarefine/http_provider.hpp"
#include "qarefine/provider.hpp"
#include "qarefine/sandbox.hpp"

namespace qarefine {

enum class Route { Code, Retrieval };
enum class Verdict { Pass, Corrected, Fail, Inconclusive };
std::string_view route_name(Route r);
std::string_view verdict_name(Verdict v);

struct ValidationResult {
  std::string sample_id;
  Route route = Route::Retrieval;
  Verdict verdict = Verdict::Inconclusive;
  std::optional<std::size_t> corrected_answer_index;
  std::optional<double> confidence;
  std::string evidence;
};

inline constexpr double kConfidenceThreshold = 0.7;
inline constexpr double kNumericTolerance = 1e-6;

// Taxonomy routing hint first, then a classification call. Anything that
// goes wrong lands on the retrieval route.
Route route(const QASample& s, const Taxonomy& taxonomy, Provider& provider);

// Verdict from a derivation script's output alone: the last printed line is
// compared with the claimed choice, then with the other choices.
ValidationResult judge_script_output(const QASample& s, const SandboxResult& run,
                                     double tolerance = kNumericTolerance);

ValidationResult check_by_code(const QASample& s, Provider& provider, const Sandbox& sandbox);

std::vector<std::string> tf_keywords(const std::string& question, std::size_t k = 5);
std::vector<std::string> extract_keywords(const std::string& question, Provider& provider);

struct Passage {
  std::string title;
  std::string text;
};

class Retriever {
 public:
  virtual ~Retriever() = default;
  virtual std::vector<Passage> search(const std::vector<std::string>& keywords) = 0;
};

// Cache key of a keyword set: order-insensitive, hex encoded.
std::string keyword_key(const std::vector<std::string>& keywords);

// Offline passages from a JSON object mapping keyword_key to a list of
// {"title", "text"}. Misses return nothing and log a warning.
class FixtureCacheRetriever : public Retriever {
 public:
  explicit FixtureCacheRetriever(nlohmann::json cache) : cache_(std::move(cache)) {}
  static std::unique_ptr<FixtureCacheRetriever> from_file(const std::string& path);
  std::vector<Passage> search(const std::vector<std::string>& keywords) override;
  std::size_t misses() const { return misses_; }

 private:
  nlohmann::json cache_;
  std::atomic<std::size_t> misses_{0};
};

// Search over HTTP: GET {path}?q=<keywords> answering
// {"results": [{"title": ..., "text": ...}, ...]}.
class HttpRetriever : public Retriever {
 public:
  HttpRetriever(std::shared_ptr<Transport> transport, std::string path = "/search")
      : transport_(std::move(transport)), path_(std::move(path)) {}
  std::vector<Passage> search(const std::vector<std::string>& keywords) override;

 private:
  std::shared_ptr<Transport> transport_;
  std::string path_;
  std::mutex mu_;
};

inline constexpr std::size_t kTopPassages = 3;

std::vector<Passage> retrieve_passages(const std::vector<std::string>& keywords, Retriever& retriever);

ValidationResult verify_factual(const QASample& s, const std::vector<Passage>& passages, Provider& provider,
                                const std::string& subject);

struct CorrectionTally {
  std::size_t pass = 0;
  std::size_t corrected = 0;
  std::size_t fail = 0;
  std::size_t inconclusive = 0;
  std::size_t rejected = 0;
  std::size_t validated() const { return pass + corrected + fail + inconclusive + rejected; }
  // corrected / (corrected + fail); 1 when nothing was flagged.
  double correction_ratio() const;
  // Share of validated samples still flagged after corrections.
  double residual_error_rate() const;
};

// Commits corrected verdicts. Everything else leaves its sample untouched.
CorrectionTally apply_corrections(std::vector<QASample>& samples, const std::vector<ValidationResult>& results,
                                  std::vector<std::string>* log = nullptr);

struct ValidatorContext {
  Provider& provider;
  const Taxonomy& taxonomy;
  const Sandbox& sandbox;
  Retriever& retriever;
  std::string domain;
};

ValidationResult validate_sample(const QASample& s, ValidatorContext& ctx);

// Validates every sample, `workers` at a time; results follow input order.
std::vector<ValidationResult> validate_all(const std::vector<QASample>& samples, ValidatorContext& ctx,
                                           std::size_t workers = 4);

}  // namespace qarefine
