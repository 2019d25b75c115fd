#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "pu/backend.hpp"
#include "pu/gateway.hpp"

namespace pu::mock {

// Scripted responses plus deterministic hash fallback for anything unscripted.
//
// Fixture layout (all sections optional):
//   {
//     "generate":       [{"prompt_sha256"|"prompt_contains", "mode", "seed"?, "text", "token_logprobs"}],
//     "score_sequence": [{"forced", "prompt_sha256"?, "token_logprobs"}],
//     "next_token":     [{"prompt_sha256"|"prompt_contains", "token", "prob"}],
//     "entail":         [{"premise", "hypothesis", "prob"}],
//     "judge":          [{"prompt_contains", "output"}],
//     "embedding":      {"dim", "noise_sigma", "direction_seed",
//                        "latents": [{"question", "passage", "latent"}]}
//   }
//
// A "latent" embedding is latent * u + noise_sigma * g, with u a fixed unit
// direction and g standard normal noise seeded by the (question, passage) pair.
// Unscripted pairs get a hash-seeded unit vector.
struct Fixture {
  nlohmann::json doc = nlohmann::json::object();
  std::string digest;  // identity of the scripted table

  [[nodiscard]] static Fixture load(const std::filesystem::path& path);
  [[nodiscard]] static Fixture from_json(nlohmann::json doc);
};

// Records in-flight concurrency so tests can assert the gateway's bound.
struct ConcurrencyProbe {
  std::atomic<int> in_flight{0};
  std::atomic<int> max_in_flight{0};
  std::atomic<long> calls{0};

  void enter();
  void leave();
};

struct MockKnobs {
  int latency_ms = 0;
  int transient_failures = 0;  // first N calls fail with Timeout
  bool score_sequence_unsupported = false;
};

class MockBase {
 public:
  MockBase(std::shared_ptr<const Fixture> fixture, std::string role, MockKnobs knobs);

  [[nodiscard]] ConcurrencyProbe& probe() { return probe_; }
  [[nodiscard]] const ConcurrencyProbe& probe() const { return probe_; }

 protected:
  // Brackets every mock call: latency, failure injection, probe accounting.
  class CallScope {
   public:
    explicit CallScope(MockBase& base);
    ~CallScope();
    CallScope(const CallScope&) = delete;
    CallScope& operator=(const CallScope&) = delete;

   private:
    MockBase& base_;
  };

  [[nodiscard]] std::string mock_identity() const;

  std::shared_ptr<const Fixture> fixture_;
  std::string role_;
  MockKnobs knobs_;
  ConcurrencyProbe probe_;
  std::atomic<int> failures_left_;
};

class MockQa final : public QaService, public MockBase {
 public:
  explicit MockQa(std::shared_ptr<const Fixture> fixture, MockKnobs knobs = {});

  [[nodiscard]] std::string identity() const override { return mock_identity(); }
  [[nodiscard]] bool is_network() const override { return false; }

  GeneratedAnswer generate(const Prompt& prompt, const DecodeConfig& cfg) override;
  std::vector<double> score_sequence(const Prompt& prompt, const std::string& forced_text) override;
  TokenProbability next_token_prob(const Prompt& prompt, const std::string& token) override;

 private:
  std::unordered_map<std::string, const nlohmann::json*> generate_by_sha_;
  std::vector<const nlohmann::json*> generate_by_substring_;
};

class MockNli final : public NliService, public MockBase {
 public:
  explicit MockNli(std::shared_ptr<const Fixture> fixture, MockKnobs knobs = {});

  [[nodiscard]] std::string identity() const override { return mock_identity(); }
  [[nodiscard]] bool is_network() const override { return false; }

  std::vector<double> entail_probs(std::span<const TextPair> pairs) override;

  // Fallback rule: hypothesis contained verbatim (case-insensitive) in the
  // premise -> 0.99; otherwise 0.01 + 0.48 * fraction of hypothesis words
  // present in the premise (so disjoint vocabulary gives 0.01).
  [[nodiscard]] static double rule_prob(const std::string& premise, const std::string& hypothesis);

 private:
  std::unordered_map<std::string, double> scripted_;
};

class MockJudge final : public JudgeService, public MockBase {
 public:
  explicit MockJudge(std::shared_ptr<const Fixture> fixture, MockKnobs knobs = {});

  [[nodiscard]] std::string identity() const override { return mock_identity(); }
  [[nodiscard]] bool is_network() const override { return false; }

  // Fallback: "correct" iff the normalized prediction equals a normalized gold
  // answer parsed from the final block of the judge prompt.
  std::string complete(const Prompt& prompt) override;
};

class MockEmbed final : public EmbedService, public MockBase {
 public:
  explicit MockEmbed(std::shared_ptr<const Fixture> fixture, MockKnobs knobs = {});

  [[nodiscard]] std::string identity() const override { return mock_identity(); }
  [[nodiscard]] bool is_network() const override { return false; }

  std::vector<double> embed_pair(const std::string& question, const std::string& passage) override;
  [[nodiscard]] std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_ = 64;
  double noise_sigma_ = 0.05;
  std::vector<double> direction_;
  std::unordered_map<std::string, double> latents_;
};

// Lowercase, strip punctuation and articles, collapse whitespace.
[[nodiscard]] std::string normalize_answer(const std::string& text);

[[nodiscard]] std::string pair_key(const std::string& a, const std::string& b);

// All four mock services over one fixture.
[[nodiscard]] GatewayServices make_services(std::shared_ptr<const Fixture> fixture, MockKnobs knobs = {});

}  // namespace pu::mock
