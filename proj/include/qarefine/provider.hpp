#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "qarefine/prompts.hpp"

namespace qarefine {

enum class Format { Json, Number, Code, Text };

struct CompletionRequest {
  std::string template_id;
  // Keys starting with '_' never reach a prompt; they disambiguate repeated
  // samples of the same prompt for providers that are pure functions.
  Vars variables;
  double temperature = 0.0;
  int max_tokens = 1024;
  Format expected_format = Format::Text;
};

struct Usage {
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
  std::uint64_t total() const { return prompt_tokens + completion_tokens; }
  Usage& operator+=(const Usage& o) {
    prompt_tokens += o.prompt_tokens;
    completion_tokens += o.completion_tokens;
    return *this;
  }
  Usage operator-(const Usage& o) const {
    return {prompt_tokens - o.prompt_tokens, completion_tokens - o.completion_tokens};
  }
  bool operator==(const Usage&) const = default;
};

struct Completion {
  std::string text;
  std::optional<nlohmann::json> parsed;
  Usage usage;
};

struct Embedding {
  std::vector<double> vector;
};

double cosine(const Embedding& a, const Embedding& b);

struct Pricing {
  double prompt_rate = 0.0;      // currency per prompt token
  double completion_rate = 0.0;  // currency per completion token
};

struct Cost {
  std::uint64_t tokens = 0;
  double money = 0.0;
};

Cost cost_of(long long prompt_tokens, long long completion_tokens, const Pricing& pricing);
inline Cost cost_of(const Usage& u, const Pricing& p) {
  return cost_of(static_cast<long long>(u.prompt_tokens), static_cast<long long>(u.completion_tokens), p);
}

// Running token totals shared by every caller of a provider.
class CostLedger {
 public:
  void add(const Usage& u) {
    prompt_.fetch_add(u.prompt_tokens, std::memory_order_relaxed);
    completion_.fetch_add(u.completion_tokens, std::memory_order_relaxed);
    calls_.fetch_add(1, std::memory_order_relaxed);
  }
  Usage usage() const { return {prompt_.load(), completion_.load()}; }
  std::uint64_t calls() const { return calls_.load(); }

 private:
  std::atomic<std::uint64_t> prompt_{0};
  std::atomic<std::uint64_t> completion_{0};
  std::atomic<std::uint64_t> calls_{0};
};

// Output parsing shared by providers and operators.
// Strips code fences and tolerates the brace-less object body used in the
// question-writing prompts.
nlohmann::json extract_json(std::string_view text);
double extract_number(std::string_view text);
std::string extract_code(std::string_view text);

struct RetryPolicy {
  int attempts = 3;
  int base_backoff_ms = 200;
};

class Provider {
 public:
  explicit Provider(PromptLibrary prompts) : prompts_(std::move(prompts)) {}
  virtual ~Provider() = default;

  // Renders, calls with retries, records usage, then parses. A parse failure
  // throws FormatError after usage has been charged.
  Completion complete(const CompletionRequest& request);
  virtual Embedding embed(std::string_view text) = 0;
  virtual std::string name() const = 0;

  const CostLedger& ledger() const { return ledger_; }
  Usage usage() const { return ledger_.usage(); }
  const PromptLibrary& prompts() const { return prompts_; }
  PromptLibrary& prompts() { return prompts_; }
  void set_retry(RetryPolicy r) { retry_ = r; }

  // Limits concurrent requests; 0 leaves them unbounded.
  void set_max_in_flight(int n) { max_in_flight_ = n; }

 protected:
  struct Raw {
    std::string text;
    Usage usage;
  };
  // Throw ProviderUnavailable for failures worth retrying.
  virtual Raw generate(const std::string& prompt, const CompletionRequest& request) = 0;

 private:
  PromptLibrary prompts_;
  CostLedger ledger_;
  RetryPolicy retry_;
  int max_in_flight_ = 0;
  std::mutex gate_mu_;
  int in_flight_ = 0;
  std::condition_variable_any gate_cv_;
};

// Rough token count for text when a backend does not report one.
std::uint64_t approx_tokens(std::string_view text);

}  // namespace qarefine
