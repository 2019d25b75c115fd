#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pu/core_types.hpp"
#include "pu/prompts.hpp"

namespace pu {

struct DecodeConfig {
  enum class Mode { greedy, multinomial };

  Mode mode = Mode::greedy;
  double temperature = 0.0;
  double top_p = 1.0;
  int top_k = 0;
  int max_new_tokens = 50;
  std::int64_t seed = 0;

  [[nodiscard]] static DecodeConfig greedy(int max_new_tokens = 50);
  // Temperature 1, nucleus 0.9, top-k 50.
  [[nodiscard]] static DecodeConfig multinomial(std::int64_t seed, int max_new_tokens = 50);

  // Greedy decoding ignores temperature/top-p/top-k/seed.
  [[nodiscard]] nlohmann::json cache_repr() const;
};

void to_json(nlohmann::json& j, const DecodeConfig& v);
void from_json(const nlohmann::json& j, DecodeConfig& v);

struct BackendEndpoint {
  std::string kind = "mock";  // "http" or "mock"
  std::string base_url;
  std::string model_name;
  std::string api_key;
  std::string mock_fixture;  // fixture path when kind == "mock"
  double timeout_s = 60.0;
  int max_parallel = 4;
  int retry_limit = 3;
  int backoff_ms = 250;  // first retry delay, doubled per attempt

  void validate() const;
};

void to_json(nlohmann::json& j, const BackendEndpoint& v);
void from_json(const nlohmann::json& j, BackendEndpoint& v);

struct TokenProbability {
  double prob = 0.0;
  bool approximate = false;  // target spanned several backend tokens
};

struct TextPair {
  std::string premise;
  std::string hypothesis;
};

// Raw services. Implementations perform exactly one remote (or mock) call per
// method invocation; caching, retries and bounded parallelism live in Gateway.
class Service {
 public:
  virtual ~Service() = default;
  // Stable identity used in cache keys (endpoint + model, or fixture digest).
  [[nodiscard]] virtual std::string identity() const = 0;
  // True when calls leave the process; forbidden on cache miss under --offline.
  [[nodiscard]] virtual bool is_network() const = 0;
};

class QaService : public Service {
 public:
  virtual GeneratedAnswer generate(const Prompt& prompt, const DecodeConfig& cfg) = 0;
  // Per-token logprobs of forced_text as a continuation of prompt.
  virtual std::vector<double> score_sequence(const Prompt& prompt, const std::string& forced_text) = 0;
  virtual TokenProbability next_token_prob(const Prompt& prompt, const std::string& token) = 0;
};

class NliService : public Service {
 public:
  // Entailment-class probability for each (premise, hypothesis), one request.
  virtual std::vector<double> entail_probs(std::span<const TextPair> pairs) = 0;
};

class JudgeService : public Service {
 public:
  virtual std::string complete(const Prompt& prompt) = 0;
};

class EmbedService : public Service {
 public:
  virtual std::vector<double> embed_pair(const std::string& question, const std::string& passage) = 0;
};

}  // namespace pu
