#include "qarefine/http_provider.hpp"

#include <cmath>
#include <cstdlib>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "qarefine/core.hpp"

namespace qarefine {

using nlohmann::json;

namespace {

class HttplibTransport : public Transport {
 public:
  HttplibTransport(const std::string& base_url, int timeout_s) : client_(base_url) {
    client_.set_connection_timeout(timeout_s, 0);
    client_.set_read_timeout(timeout_s, 0);
    client_.set_follow_location(true);
  }

  HttpResponse post(const std::string& path, const std::string& body,
                    const std::map<std::string, std::string>& headers) override {
    httplib::Headers h(headers.begin(), headers.end());
    std::lock_guard lock(mu_);
    auto res = client_.Post(path, h, body, "application/json");
    if (!res) return {0, httplib::to_string(res.error())};
    return {res->status, res->body};
  }

  HttpResponse get(const std::string& path_and_query,
                   const std::map<std::string, std::string>& headers) override {
    httplib::Headers h(headers.begin(), headers.end());
    std::lock_guard lock(mu_);
    auto res = client_.Get(path_and_query, h);
    if (!res) return {0, httplib::to_string(res.error())};
    return {res->status, res->body};
  }

 private:
  httplib::Client client_;
  std::mutex mu_;
};

}  // namespace

std::shared_ptr<Transport> make_httplib_transport(const std::string& base_url, int timeout_s) {
  return std::make_shared<HttplibTransport>(base_url, timeout_s);
}

std::shared_ptr<ReplayTransport> ReplayTransport::from_file(const std::string& path) {
  json j = json::parse(read_file(path));
  std::vector<Exchange> ex;
  for (const auto& e : j.at("exchanges")) {
    Exchange x;
    x.method = e.value("method", std::string("POST"));
    x.path = e.at("path").get<std::string>();
    if (e.contains("request")) x.request_body = e["request"].is_string() ? e["request"].get<std::string>() : e["request"].dump();
    x.status = e.value("status", 200);
    x.response_body = e.at("response").is_string() ? e["response"].get<std::string>() : e["response"].dump();
    ex.push_back(std::move(x));
  }
  return std::make_shared<ReplayTransport>(std::move(ex));
}

HttpResponse ReplayTransport::lookup(const std::string& method, const std::string& path,
                                     const std::string& body) {
  std::lock_guard lock(mu_);
  seen_.push_back({method, path, body, 0, {}});
  // Bodies are compared as JSON when both sides parse, so key order and
  // whitespace in the recording do not matter.
  auto same_body = [&](const std::string& recorded) {
    if (recorded.empty()) return true;
    auto a = json::parse(recorded, nullptr, false);
    auto b = json::parse(body, nullptr, false);
    if (!a.is_discarded() && !b.is_discarded()) return a == b;
    return recorded == body;
  };
  for (const auto& e : exchanges_) {
    if (e.method == method && e.path == path && same_body(e.request_body)) {
      ++served_;
      return {e.status, e.response_body};
    }
  }
  return {0, "no recorded exchange for " + method + " " + path};
}

HttpResponse ReplayTransport::post(const std::string& path, const std::string& body,
                                   const std::map<std::string, std::string>&) {
  return lookup("POST", path, body);
}

HttpResponse ReplayTransport::get(const std::string& path_and_query,
                                  const std::map<std::string, std::string>&) {
  return lookup("GET", path_and_query, "");
}

HttpResponse RecordingTransport::post(const std::string& path, const std::string& body,
                                      const std::map<std::string, std::string>& headers) {
  auto r = inner_->post(path, body, headers);
  std::lock_guard lock(mu_);
  log_.push_back({"POST", path, body, r.status, r.body});
  return r;
}

HttpResponse RecordingTransport::get(const std::string& path_and_query,
                                     const std::map<std::string, std::string>& headers) {
  auto r = inner_->get(path_and_query, headers);
  std::lock_guard lock(mu_);
  log_.push_back({"GET", path_and_query, "", r.status, r.body});
  return r;
}

void RecordingTransport::save(const std::string& path) const {
  std::lock_guard lock(mu_);
  nlohmann::ordered_json out;
  out["exchanges"] = nlohmann::ordered_json::array();
  for (const auto& e : log_) {
    nlohmann::ordered_json x;
    x["method"] = e.method;
    x["path"] = e.path;
    x["request"] = e.request_body;
    x["status"] = e.status;
    x["response"] = e.response_body;
    out["exchanges"].push_back(std::move(x));
  }
  write_file_atomic(path, out.dump(2) + "\n");
}

HttpProvider::HttpProvider(PromptLibrary prompts, HttpProviderConfig cfg,
                           std::shared_ptr<Transport> transport)
    : Provider(std::move(prompts)), cfg_(std::move(cfg)), transport_(std::move(transport)) {
  if (cfg_.model.empty()) throw ConfigError("provider model name is empty");
  if (!transport_) throw ConfigError("provider has no transport");
}

std::map<std::string, std::string> HttpProvider::headers() const {
  std::map<std::string, std::string> h;
  if (!cfg_.api_key_env.empty()) {
    if (const char* key = std::getenv(cfg_.api_key_env.c_str())) h["Authorization"] = std::string("Bearer ") + key;
  }
  return h;
}

std::string HttpProvider::chat_body(const HttpProviderConfig& cfg, const std::string& prompt,
                                    const CompletionRequest& req) {
  nlohmann::ordered_json body;
  body["model"] = cfg.model;
  body["messages"] = nlohmann::ordered_json::array({{{"role", "user"}, {"content", prompt}}});
  body["temperature"] = req.temperature;
  body["max_tokens"] = req.max_tokens;
  return body.dump();
}

namespace {

void check_status(const HttpResponse& r, const std::string& what) {
  if (r.status == 0 || r.status == 429 || r.status >= 500)
    throw ProviderUnavailable(what + " failed with status " + std::to_string(r.status) + ": " + r.body.substr(0, 200));
  if (r.status >= 400)
    throw ProviderRejected(what + " rejected with status " + std::to_string(r.status) + ": " + r.body.substr(0, 200));
}

}  // namespace

Provider::Raw HttpProvider::generate(const std::string& prompt, const CompletionRequest& request) {
  auto res = transport_->post(cfg_.chat_path, chat_body(cfg_, prompt, request), headers());
  check_status(res, "completion");
  json j = json::parse(res.body, nullptr, false);
  if (j.is_discarded()) throw FormatError("completion response is not JSON", res.body);
  Raw raw;
  try {
    raw.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
    const auto& u = j.at("usage");
    raw.usage.prompt_tokens = u.at("prompt_tokens").get<std::uint64_t>();
    raw.usage.completion_tokens = u.at("completion_tokens").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("completion response lacks text or usage: ") + e.what(), res.body);
  }
  return raw;
}

Embedding HttpProvider::embed(std::string_view text) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) throw ArgumentError("cannot embed empty text");
  nlohmann::ordered_json body;
  body["model"] = cfg_.embedding_model.empty() ? cfg_.model : cfg_.embedding_model;
  body["input"] = std::string(text);
  HttpResponse res;
  for (int attempt = 1;; ++attempt) {
    res = transport_->post(cfg_.embed_path, body.dump(), headers());
    try {
      check_status(res, "embedding");
      break;
    } catch (const ProviderUnavailable&) {
      if (attempt >= 3) throw;
    }
  }
  json j = json::parse(res.body, nullptr, false);
  Embedding e;
  try {
    e.vector = j.at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const json::exception&) {
    throw FormatError("embedding response lacks a vector", res.body);
  }
  for (double v : e.vector)
    if (!std::isfinite(v)) throw FormatError("embedding has non-finite entries", res.body);
  if (dim_ == 0) dim_ = e.vector.size();
  if (e.vector.size() != dim_) throw FormatError("embedding dimension changed between calls", res.body);
  return e;
}

}  // namespace qarefine
