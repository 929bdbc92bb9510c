#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "qarefine/provider.hpp"

namespace qarefine {

struct HttpResponse {
  int status = 0;  // 0 when the request never got an answer
  std::string body;
};

// The seam between the engine and the network. Production uses
// HttplibTransport; tests substitute a replay of recorded exchanges.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const std::string& path, const std::string& body,
                            const std::map<std::string, std::string>& headers) = 0;
  virtual HttpResponse get(const std::string& path_and_query,
                           const std::map<std::string, std::string>& headers) = 0;
};

std::shared_ptr<Transport> make_httplib_transport(const std::string& base_url, int timeout_s = 60);

struct Exchange {
  std::string method;
  std::string path;
  std::string request_body;
  int status = 200;
  std::string response_body;
};

// Serves recorded exchanges, matching on method, path and request body.
// Unmatched requests come back with status 0 rather than touching a socket.
class ReplayTransport : public Transport {
 public:
  explicit ReplayTransport(std::vector<Exchange> exchanges) : exchanges_(std::move(exchanges)) {}
  static std::shared_ptr<ReplayTransport> from_file(const std::string& path);

  HttpResponse post(const std::string& path, const std::string& body,
                    const std::map<std::string, std::string>& headers) override;
  HttpResponse get(const std::string& path_and_query,
                   const std::map<std::string, std::string>& headers) override;
  std::size_t served() const { return served_; }
  const std::vector<Exchange>& requests_seen() const { return seen_; }

 private:
  HttpResponse lookup(const std::string& method, const std::string& path, const std::string& body);
  std::vector<Exchange> exchanges_;
  std::vector<Exchange> seen_;
  std::size_t served_ = 0;
  std::mutex mu_;
};

// Wraps another transport and keeps every exchange so it can be written out
// as a replay file.
class RecordingTransport : public Transport {
 public:
  explicit RecordingTransport(std::shared_ptr<Transport> inner) : inner_(std::move(inner)) {}
  HttpResponse post(const std::string& path, const std::string& body,
                    const std::map<std::string, std::string>& headers) override;
  HttpResponse get(const std::string& path_and_query,
                   const std::map<std::string, std::string>& headers) override;
  void save(const std::string& path) const;

 private:
  std::shared_ptr<Transport> inner_;
  std::vector<Exchange> log_;
  mutable std::mutex mu_;
};

struct HttpProviderConfig {
  std::string model;
  std::string embedding_model;
  std::string api_key_env;  // name of the environment variable, not the key
  std::string chat_path = "/v1/chat/completions";
  std::string embed_path = "/v1/embeddings";
};

// Chat-completion style JSON endpoint. Responses must report usage counts.
class HttpProvider : public Provider {
 public:
  HttpProvider(PromptLibrary prompts, HttpProviderConfig cfg, std::shared_ptr<Transport> transport);

  Embedding embed(std::string_view text) override;
  std::string name() const override { return "http:" + cfg_.model; }

  static std::string chat_body(const HttpProviderConfig& cfg, const std::string& prompt,
                               const CompletionRequest& req);

 protected:
  Raw generate(const std::string& prompt, const CompletionRequest& request) override;

 private:
  std::map<std::string, std::string> headers() const;
  HttpProviderConfig cfg_;
  std::shared_ptr<Transport> transport_;
  std::size_t dim_ = 0;
};

}  // namespace qarefine
