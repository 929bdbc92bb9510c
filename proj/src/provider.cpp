#include "qarefine/provider.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include <spdlog/spdlog.h>

#include "qarefine/errors.hpp"

namespace qarefine {

using nlohmann::json;

double cosine(const Embedding& a, const Embedding& b) {
  if (a.vector.size() != b.vector.size()) throw ArgumentError("embedding dimensions differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.vector.size(); ++i) {
    dot += a.vector[i] * b.vector[i];
    na += a.vector[i] * a.vector[i];
    nb += b.vector[i] * b.vector[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

Cost cost_of(long long prompt_tokens, long long completion_tokens, const Pricing& pricing) {
  if (prompt_tokens < 0 || completion_tokens < 0) throw ArgumentError("negative token count");
  if (pricing.prompt_rate < 0 || pricing.completion_rate < 0) throw ArgumentError("negative rate");
  Cost c;
  c.tokens = static_cast<std::uint64_t>(prompt_tokens + completion_tokens);
  c.money = prompt_tokens * pricing.prompt_rate + completion_tokens * pricing.completion_rate;
  return c;
}

std::uint64_t approx_tokens(std::string_view text) { return (text.size() + 3) / 4; }

namespace {

std::string_view trim(std::string_view s) {
  const char* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

// Contents of the first ``` fence, or the text itself when there is none.
std::string_view unfence(std::string_view text) {
  auto open = text.find("```");
  if (open == std::string_view::npos) return text;
  auto line_end = text.find('\n', open);
  if (line_end == std::string_view::npos) return text;
  auto close = text.find("```", line_end + 1);
  if (close == std::string_view::npos) close = text.size();
  return text.substr(line_end + 1, close - line_end - 1);
}

}  // namespace

json extract_json(std::string_view text) {
  std::string_view body = trim(unfence(text));
  // A body opening on a quoted key is an object without its braces; looking
  // for the first bracket would pick up an inner array instead.
  if (!body.empty() && body.front() == '"') {
    auto j = json::parse("{" + std::string(body) + "}", nullptr, false);
    if (!j.is_discarded()) return j;
  }
  auto first = body.find_first_of("{[");
  if (first != std::string_view::npos) {
    char closer = body[first] == '{' ? '}' : ']';
    auto last = body.rfind(closer);
    if (last != std::string_view::npos && last > first) {
      try {
        return json::parse(body.substr(first, last - first + 1));
      } catch (const json::parse_error&) {
      }
    }
  }
  // Brace-less object body, e.g. `"question": "...", "choices": [...]`.
  std::string wrapped = "{" + std::string(body) + "}";
  try {
    return json::parse(wrapped);
  } catch (const json::parse_error&) {
  }
  // Trailing comma before the closing brace is a common slip.
  auto comma = wrapped.find_last_not_of(" \t\r\n}");
  if (comma != std::string::npos && wrapped[comma] == ',') {
    wrapped.erase(comma, 1);
    try {
      return json::parse(wrapped);
    } catch (const json::parse_error&) {
    }
  }
  throw FormatError("output is not JSON", std::string(text));
}

double extract_number(std::string_view text) {
  std::string s(trim(unfence(text)));
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw FormatError("output is not a number", std::string(text));
  }
  if (!std::isfinite(v) || !trim(std::string_view(s).substr(used)).empty())
    throw FormatError("output is not a single number", std::string(text));
  return v;
}

std::string extract_code(std::string_view text) {
  std::string_view body = text;
  auto open = text.find("```");
  if (open != std::string_view::npos) body = unfence(text);
  std::string code(body);
  if (trim(code).empty()) throw FormatError("no code in output", std::string(text));
  return code;
}

Completion Provider::complete(const CompletionRequest& request) {
  const std::string prompt = prompts_.render(request.template_id, request.variables);

  if (max_in_flight_ > 0) {
    std::unique_lock lock(gate_mu_);
    gate_cv_.wait(lock, [&] { return in_flight_ < max_in_flight_; });
    ++in_flight_;
  }
  struct Release {
    Provider* p;
    ~Release() {
      if (p->max_in_flight_ > 0) {
        std::lock_guard lock(p->gate_mu_);
        --p->in_flight_;
        p->gate_cv_.notify_one();
      }
    }
  } release{this};

  Raw raw;
  for (int attempt = 1;; ++attempt) {
    try {
      raw = generate(prompt, request);
      break;
    } catch (const ProviderUnavailable& e) {
      if (attempt >= retry_.attempts)
        throw ProviderUnavailable(std::string(e.what()) + " (after " + std::to_string(attempt) + " attempts)");
      spdlog::warn("provider call failed ({}), retrying", e.what());
      if (retry_.base_backoff_ms > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(retry_.base_backoff_ms << (attempt - 1)));
    }
  }
  ledger_.add(raw.usage);

  Completion c;
  c.text = std::move(raw.text);
  c.usage = raw.usage;
  switch (request.expected_format) {
    case Format::Json: c.parsed = extract_json(c.text); break;
    case Format::Number: c.parsed = extract_number(c.text); break;
    case Format::Code: c.parsed = extract_code(c.text); break;
    case Format::Text: c.parsed = std::string(trim(c.text)); break;
  }
  return c;
}

}  // namespace qarefine
