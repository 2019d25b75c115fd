#pragma once

#include <array>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "pu/backend.hpp"

namespace pu {

// Content-addressed store of backend responses, persisted as append-only
// JSONL (one {"key","op","value"} object per line). Later lines win.
class CallCache {
 public:
  CallCache() = default;  // in-memory only
  explicit CallCache(const std::filesystem::path& file);

  CallCache(const CallCache&) = delete;
  CallCache& operator=(const CallCache&) = delete;

  [[nodiscard]] std::optional<nlohmann::json> get(const std::string& key) const;
  void put(const std::string& key, const std::string& op, const nlohmann::json& value);
  [[nodiscard]] std::size_t size() const;

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, nlohmann::json> entries_;
  std::optional<std::filesystem::path> file_;
  std::ofstream out_;
};

enum class Role { qa = 0, nli = 1, judge = 2, embed = 3 };
inline constexpr std::size_t kRoleCount = 4;
std::string_view to_string(Role role);

// Inference-call kinds used for cost accounting: G = QA generation,
// S = forced-sequence scoring, E = evaluation-model pass (entailment or
// self-assessment), J = accuracy judge, F = utility-scorer embedding pass.
struct CallTrace {
  long generations = 0;
  long sequence_scores = 0;
  long evaluations = 0;
  long judgments = 0;
  long scorer_passes = 0;

  CallTrace& operator+=(const CallTrace& o);
};

void to_json(nlohmann::json& j, const CallTrace& v);
void from_json(const nlohmann::json& j, CallTrace& v);

struct RoleCounts {
  long network_calls = 0;  // service invocations (cache misses), including retries
  long cache_hits = 0;
};

struct GatewayServices {
  std::shared_ptr<QaService> qa;
  std::shared_ptr<NliService> nli;
  std::shared_ptr<JudgeService> judge;
  std::shared_ptr<EmbedService> embed;
};

struct GatewayOptions {
  std::array<BackendEndpoint, kRoleCount> endpoints{};
  bool offline = false;
  bool cache_reads = true;  // false forces fresh calls (cache still written)
};

// Uniform, cached, bounded-parallel front for the four model services.
// Shareable across threads.
class Gateway {
 public:
  Gateway(GatewayServices services, GatewayOptions options, std::shared_ptr<CallCache> cache);

  GeneratedAnswer generate(const Prompt& prompt, const DecodeConfig& cfg, CallTrace* trace = nullptr);
  std::vector<double> score_sequence(const Prompt& prompt, const std::string& forced_text,
                                     CallTrace* trace = nullptr);
  double next_token_prob(const Prompt& prompt, const std::string& token, CallTrace* trace = nullptr);
  double entail_prob(const std::string& premise, const std::string& hypothesis, CallTrace* trace = nullptr);
  // Both directions in one batched request; counted as a single evaluation.
  std::pair<double, double> entail_bidirectional(const std::string& a, const std::string& b,
                                                 CallTrace* trace = nullptr);
  // 1 iff the judge's first output word is "correct". Pre: gold_answers non-empty.
  int judge_accuracy(const std::string& question, std::span<const std::string> gold_answers,
                     const std::string& prediction, CallTrace* trace = nullptr);
  std::vector<double> embed_pair(const std::string& question, const std::string& passage,
                                 CallTrace* trace = nullptr);

  // Embedding dimension observed so far (0 before the first call).
  [[nodiscard]] std::size_t embedding_dim() const { return embed_dim_.load(); }

  [[nodiscard]] RoleCounts counts(Role role) const;
  [[nodiscard]] nlohmann::json counts_json() const;
  void reset_counts();

  [[nodiscard]] const GatewayOptions& options() const { return options_; }
  [[nodiscard]] bool has(Role role) const;

 private:
  struct Slot {
    std::unique_ptr<std::counting_semaphore<1024>> gate;
    std::atomic<long> network_calls{0};
    std::atomic<long> cache_hits{0};
  };

  template <typename Fn>
  nlohmann::json cached_call(Role role, const Service& service, const std::string& key, const std::string& op,
                             Fn&& call);

  template <typename Fn>
  auto with_retries(Role role, Fn&& call);

  GatewayServices services_;
  GatewayOptions options_;
  std::shared_ptr<CallCache> cache_;
  std::array<Slot, kRoleCount> slots_;
  std::atomic<std::size_t> embed_dim_{0};
};

// Accuracy label honoring the unanswerable-question policy: with no gold
// answers, a = 1 iff the prediction contains a refusal phrase.
int label_accuracy(Gateway& gw, const QAExample& ex, const std::string& prediction,
                   std::span<const std::string> refusal_phrases, CallTrace* trace = nullptr);

[[nodiscard]] const std::vector<std::string>& default_refusal_phrases();

// Parses "correct"/"incorrect" from the first output word (case-insensitive).
// Returns nullopt when the output is neither.
[[nodiscard]] std::optional<int> parse_judgment(const std::string& output);

}  // namespace pu
