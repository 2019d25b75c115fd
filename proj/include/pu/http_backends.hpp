#pragma once

#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "pu/backend.hpp"
#include "pu/gateway.hpp"

namespace pu::http {

// JSON-over-HTTP transport shared by the adapters. base_url carries the API
// prefix, e.g. "http://localhost:8000/v1".
class JsonClient {
 public:
  explicit JsonClient(BackendEndpoint endpoint);
  ~JsonClient();
  JsonClient(const JsonClient&) = delete;
  JsonClient& operator=(const JsonClient&) = delete;

  // Throws Timeout (transport failure), RateLimited (429/503),
  // BackendUnsupported (404/405/501), MalformedResponse (other non-2xx or bad JSON).
  nlohmann::json post(const std::string& path, const nlohmann::json& body);

  [[nodiscard]] const BackendEndpoint& endpoint() const { return endpoint_; }
  [[nodiscard]] std::string identity(const std::string& role) const;

 private:
  struct Impl;
  BackendEndpoint endpoint_;
  std::string prefix_;
  std::unique_ptr<Impl> impl_;
};

// Chat-completions generation with logprobs; completions-with-echo for forced scoring.
class HttpQa final : public QaService {
 public:
  explicit HttpQa(BackendEndpoint endpoint) : client_(std::move(endpoint)) {}
  [[nodiscard]] std::string identity() const override { return client_.identity("qa"); }
  [[nodiscard]] bool is_network() const override { return true; }

  GeneratedAnswer generate(const Prompt& prompt, const DecodeConfig& cfg) override;
  std::vector<double> score_sequence(const Prompt& prompt, const std::string& forced_text) override;
  TokenProbability next_token_prob(const Prompt& prompt, const std::string& token) override;

  static constexpr int kTopLogprobs = 20;

 private:
  JsonClient client_;
};

// POST /entailment {"model","pairs":[{"premise","hypothesis"}]} -> {"entailment":[p,...]}
class HttpNli final : public NliService {
 public:
  explicit HttpNli(BackendEndpoint endpoint) : client_(std::move(endpoint)) {}
  [[nodiscard]] std::string identity() const override { return client_.identity("nli"); }
  [[nodiscard]] bool is_network() const override { return true; }

  std::vector<double> entail_probs(std::span<const TextPair> pairs) override;

 private:
  JsonClient client_;
};

class HttpJudge final : public JudgeService {
 public:
  explicit HttpJudge(BackendEndpoint endpoint) : client_(std::move(endpoint)) {}
  [[nodiscard]] std::string identity() const override { return client_.identity("judge"); }
  [[nodiscard]] bool is_network() const override { return true; }

  std::string complete(const Prompt& prompt) override;

 private:
  JsonClient client_;
};

// POST /embeddings with the pair joined as "question\n\npassage"; pooling is the server's.
class HttpEmbed final : public EmbedService {
 public:
  explicit HttpEmbed(BackendEndpoint endpoint) : client_(std::move(endpoint)) {}
  [[nodiscard]] std::string identity() const override { return client_.identity("embed"); }
  [[nodiscard]] bool is_network() const override { return true; }

  std::vector<double> embed_pair(const std::string& question, const std::string& passage) override;

 private:
  JsonClient client_;
};

}  // namespace pu::http
